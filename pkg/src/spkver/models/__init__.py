from spkver.models.checkpoint import (
    ARCHS,
    Checkpoint,
    build_model,
    load_checkpoint,
    save_checkpoint,
)
from spkver.models.ecapa import EcapaConfig, EcapaTDNN
from spkver.models.layers import AttentiveStatsPool, Res2Conv1d, SERes2Block, SqueezeExcite
from spkver.models.resnet import ResnetConfig, ResNet34SE

__all__ = [
    "ARCHS", "AttentiveStatsPool", "Checkpoint", "EcapaConfig", "EcapaTDNN",
    "Res2Conv1d", "ResNet34SE", "ResnetConfig", "SERes2Block", "SqueezeExcite",
    "build_model", "load_checkpoint", "save_checkpoint",
]
