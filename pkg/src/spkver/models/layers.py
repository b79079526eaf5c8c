"""Building blocks shared by the embedding networks."""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from spkver.errors import ConfigError, InputError

STD_FLOOR = 1e-8


class SqueezeExcite(nn.Module):
    """Channel gating from a globally averaged descriptor.

    Works on (B, C, ...) maps of any rank: the descriptor averages every
    non-channel axis, passes a C -> C/r -> C bottleneck and a sigmoid.
    """

    def __init__(self, channels: int, reduction: int = 8):
        super().__init__()
        if reduction <= 0 or channels % reduction:
            raise ConfigError(f"SE reduction {reduction} does not divide {channels} channels")
        self.fc1 = nn.Linear(channels, channels // reduction)
        self.fc2 = nn.Linear(channels // reduction, channels)

    def gates(self, x: torch.Tensor) -> torch.Tensor:
        desc = x.mean(dim=tuple(range(2, x.dim())))
        return torch.sigmoid(self.fc2(F.relu(self.fc1(desc))))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        g = self.gates(x)
        return x * g.view(*g.shape, *([1] * (x.dim() - 2)))


class ConvBnRelu1d(nn.Sequential):
    def __init__(self, cin, cout, kernel_size=1, dilation=1):
        pad = dilation * (kernel_size - 1) // 2
        super().__init__(
            nn.Conv1d(cin, cout, kernel_size, dilation=dilation, padding=pad),
            nn.ReLU(),
            nn.BatchNorm1d(cout),
        )


class Res2Conv1d(nn.Module):
    """Hierarchical split convolution.

    Channels are cut into ``scale`` groups; the first passes through and group
    i > 0 is convolved after adding the previous group's output, so its
    receptive field spans i dilated kernels.
    """

    def __init__(self, channels: int, kernel_size: int = 3, dilation: int = 1, scale: int = 8):
        super().__init__()
        if scale < 1 or channels % scale:
            raise ConfigError(f"res2 scale {scale} does not divide {channels} channels")
        self.scale = scale
        width = channels // scale
        self.convs = nn.ModuleList(
            ConvBnRelu1d(width, width, kernel_size, dilation) for _ in range(scale - 1)
        )

    def forward(self, x):
        groups = torch.chunk(x, self.scale, dim=1)
        out = [groups[0]]
        prev = None
        for i, conv in enumerate(self.convs, start=1):
            inp = groups[i] if prev is None else groups[i] + prev
            prev = conv(inp)
            out.append(prev)
        return torch.cat(out, dim=1)


class SERes2Block(nn.Module):
    """1x1 conv, Res2 dilated conv, 1x1 conv, SE, residual add. Keeps (B, C, T)."""

    def __init__(self, channels: int, kernel_size: int = 3, dilation: int = 1,
                 scale: int = 8, se_reduction: int = 8):
        super().__init__()
        self.conv_in = ConvBnRelu1d(channels, channels, 1)
        self.res2 = Res2Conv1d(channels, kernel_size, dilation, scale)
        self.conv_out = ConvBnRelu1d(channels, channels, 1)
        self.se = SqueezeExcite(channels, se_reduction)

    def forward(self, x):
        y = self.conv_out(self.res2(self.conv_in(x)))
        return x + self.se(y)


class AttentiveStatsPool(nn.Module):
    """Attention-weighted mean and standard deviation over time.

    Input (B, F, T), output (B, 2F). With ``global_context`` each frame is
    concatenated with the utterance mean and std before the attention
    transform. ``heads=None`` gives one attention logit per channel; an
    integer gives that many logits, each shared by F / heads channels.
    """

    def __init__(self, in_dim: int, hidden: int = 128, global_context: bool = False,
                 heads: int | None = None):
        super().__init__()
        if heads is not None and (heads < 1 or in_dim % heads):
            raise ConfigError(f"{heads} attention heads do not divide {in_dim} channels")
        self.in_dim = in_dim
        self.global_context = global_context
        self.heads = heads
        n_in = 3 * in_dim if global_context else in_dim
        self.attn_hidden = nn.Conv1d(n_in, hidden, 1)
        self.attn_out = nn.Conv1d(hidden, in_dim if heads is None else heads, 1)

    @property
    def out_dim(self) -> int:
        return 2 * self.in_dim

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        T = x.shape[-1]
        if T < 2:
            raise InputError(f"attentive pooling needs at least 2 frames, got {T}")
        if self.global_context:
            mean = x.mean(dim=-1, keepdim=True)
            std = x.var(dim=-1, keepdim=True, unbiased=False).clamp(min=STD_FLOOR).sqrt()
            inp = torch.cat([x, mean.expand_as(x), std.expand_as(x)], dim=1)
        else:
            inp = x
        logits = self.attn_out(torch.tanh(self.attn_hidden(inp)))
        if self.heads is not None:
            logits = logits.repeat_interleave(self.in_dim // self.heads, dim=1)
        w = torch.softmax(logits, dim=-1)
        mu = (w * x).sum(dim=-1)
        var = (w * (x - mu.unsqueeze(-1)) ** 2).sum(dim=-1)
        sigma = var.clamp(min=STD_FLOOR).sqrt()
        return torch.cat([mu, sigma], dim=1)
