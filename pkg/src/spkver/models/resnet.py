from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from spkver.errors import ConfigError, InputError
from spkver.models.layers import AttentiveStatsPool, SqueezeExcite

MIN_FRAMES = 16


@dataclass(frozen=True)
class ResnetConfig:
    stage_channels: tuple[int, int, int, int] = (64, 128, 256, 512)
    blocks: tuple[int, int, int, int] = (3, 4, 6, 3)
    strides: tuple[int, int, int, int] = (1, 2, 2, 2)
    se_reduction: int = 8
    embed_dim: int = 256
    attention_channels: int = 128
    pool_heads: int = 1
    n_mels: int = 80

    def __post_init__(self):
        for name in ("stage_channels", "blocks", "strides"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        ch = self.stage_channels
        if len(ch) != 4 or len(self.blocks) != 4 or len(self.strides) != 4:
            raise ConfigError("ResNet34-SE has four stages")
        if any(b != 2 * a for a, b in zip(ch, ch[1:])):
            raise ConfigError(f"stage channels must double per stage, got {ch}")
        if any(c % self.se_reduction for c in ch):
            raise ConfigError(f"se_reduction {self.se_reduction} must divide every stage width")
        if self.embed_dim <= 0:
            raise ConfigError("embed_dim must be positive")

    @property
    def freq_out(self) -> int:
        f = self.n_mels
        for s in self.strides:
            f = -(-f // s)
        return f

    def to_dict(self):
        return asdict(self)


class BasicBlock(nn.Module):
    def __init__(self, cin, cout, stride):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.shortcut = nn.Identity()
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(
                nn.Conv2d(cin, cout, 1, stride, bias=False), nn.BatchNorm2d(cout)
            )

    def forward(self, x):
        y = F.relu(self.bn1(self.conv1(x)))
        y = self.bn2(self.conv2(y))
        return F.relu(y + self.shortcut(x))


class ResNet34SE(nn.Module):
    """ResNet34 with an SE module after each residual stage and attentive pooling.

    Features (B, T, 80) are treated as a one-channel (freq, time) image. The
    last stage map (B, c4, 10, T/8) is flattened to 10 * c4 dims per frame,
    pooled to 2 * 10 * c4 and projected to D.
    """

    arch = "resnet34se"

    def __init__(self, cfg: ResnetConfig = ResnetConfig()):
        super().__init__()
        self.cfg = cfg
        c1 = cfg.stage_channels[0]
        self.stem = nn.Sequential(nn.Conv2d(1, c1, 3, 1, 1, bias=False), nn.BatchNorm2d(c1), nn.ReLU())
        stages, ses = [], []
        cin = c1
        for cout, n, stride in zip(cfg.stage_channels, cfg.blocks, cfg.strides):
            layers = [BasicBlock(cin, cout, stride)]
            layers += [BasicBlock(cout, cout, 1) for _ in range(n - 1)]
            stages.append(nn.Sequential(*layers))
            ses.append(SqueezeExcite(cout, cfg.se_reduction))
            cin = cout
        self.stages = nn.ModuleList(stages)
        self.ses = nn.ModuleList(ses)
        flat = cfg.freq_out * cfg.stage_channels[-1]
        self.pool = AttentiveStatsPool(flat, cfg.attention_channels, global_context=False,
                                       heads=cfg.pool_heads)
        self.pool_bn = nn.BatchNorm1d(2 * flat)
        self.embed = nn.Linear(2 * flat, cfg.embed_dim)

    @property
    def embed_dim(self) -> int:
        return self.cfg.embed_dim

    def feature_map(self, feats: torch.Tensor) -> torch.Tensor:
        """Final stage output, shape (B, c4, freq_out, T')."""
        if feats.dim() != 3 or feats.shape[-1] != self.cfg.n_mels:
            raise InputError(f"expected (B, T, {self.cfg.n_mels}) features, got {tuple(feats.shape)}")
        if feats.shape[1] < MIN_FRAMES:
            raise InputError(f"need at least {MIN_FRAMES} frames, got {feats.shape[1]}")
        x = self.stem(feats.transpose(1, 2).unsqueeze(1))
        for stage, se in zip(self.stages, self.ses):
            x = se(stage(x))
        return x

    def pooled(self, feats: torch.Tensor) -> torch.Tensor:
        x = self.feature_map(feats)
        return self.pool(x.flatten(1, 2))

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        return self.embed(self.pool_bn(self.pooled(feats)))
