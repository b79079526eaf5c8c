from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn

from spkver.errors import ConfigError, InputError
from spkver.models.layers import AttentiveStatsPool, ConvBnRelu1d, SERes2Block

MIN_FRAMES = 16
_DEFAULT_EMBED = {1024: 192, 2048: 256}


@dataclass(frozen=True)
class EcapaConfig:
    channels: int = 1024
    embed_dim: int | None = None  # 192 for C=1024, 256 for C=2048
    res2_scale: int = 8
    dilations: tuple[int, int, int] = (2, 3, 4)
    stem_kernel: int = 5
    block_kernel: int = 3
    se_reduction: int = 8
    attention_channels: int = 128
    n_mels: int = 80

    def __post_init__(self):
        if self.embed_dim is None:
            if self.channels not in _DEFAULT_EMBED:
                raise ConfigError(f"embed_dim required for channels={self.channels}")
            object.__setattr__(self, "embed_dim", _DEFAULT_EMBED[self.channels])
        object.__setattr__(self, "dilations", tuple(self.dilations))
        if self.embed_dim <= 0:
            raise ConfigError("embed_dim must be positive")
        if self.channels % self.res2_scale:
            raise ConfigError(f"channels {self.channels} not divisible by res2_scale {self.res2_scale}")
        if len(self.dilations) != 3:
            raise ConfigError("ECAPA uses exactly three SE-Res2Blocks")

    def to_dict(self):
        return asdict(self)


class EcapaTDNN(nn.Module):
    """ECAPA-TDNN speaker encoder: (B, T, n_mels) features -> (B, D) embeddings.

    conv1d(k=5) -> three SE-Res2Blocks (dilations 2, 3, 4) -> concatenation ->
    1x1 conv to 3C -> context-dependent attentive statistics pooling (6C) ->
    batch norm -> linear to D.
    """

    arch = "ecapa"

    def __init__(self, cfg: EcapaConfig = EcapaConfig()):
        super().__init__()
        self.cfg = cfg
        C = cfg.channels
        self.stem = ConvBnRelu1d(cfg.n_mels, C, cfg.stem_kernel)
        self.blocks = nn.ModuleList(
            SERes2Block(C, cfg.block_kernel, d, cfg.res2_scale, cfg.se_reduction)
            for d in cfg.dilations
        )
        self.aggregate = nn.Sequential(nn.Conv1d(3 * C, 3 * C, 1), nn.ReLU())
        self.pool = AttentiveStatsPool(3 * C, cfg.attention_channels, global_context=True)
        self.pool_bn = nn.BatchNorm1d(6 * C)
        self.embed = nn.Linear(6 * C, cfg.embed_dim)

    @property
    def embed_dim(self) -> int:
        return self.cfg.embed_dim

    def frame_features(self, feats: torch.Tensor) -> torch.Tensor:
        """Aggregated frame-level map, shape (B, 3C, T)."""
        if feats.dim() != 3 or feats.shape[-1] != self.cfg.n_mels:
            raise InputError(f"expected (B, T, {self.cfg.n_mels}) features, got {tuple(feats.shape)}")
        if feats.shape[1] < MIN_FRAMES:
            raise InputError(f"need at least {MIN_FRAMES} frames, got {feats.shape[1]}")
        x = self.stem(feats.transpose(1, 2))
        outs = []
        for block in self.blocks:
            x = block(x)
            outs.append(x)
        return self.aggregate(torch.cat(outs, dim=1))

    def pooled(self, feats: torch.Tensor) -> torch.Tensor:
        return self.pool(self.frame_features(feats))

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        return self.embed(self.pool_bn(self.pooled(feats)))
