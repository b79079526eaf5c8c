"""AAM-softmax, weight-transfer penalty and the combined fine-tuning objective."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import torch
import torch.nn as nn
import torch.nn.functional as F

from spkver.errors import ConfigError, InputError

COS_CLAMP = 1e-7


@dataclass(frozen=True)
class AamConfig:
    scale: float = 30.0
    margin: float = 0.2

    def __post_init__(self):
        if self.scale <= 0:
            raise ConfigError(f"AAM scale must be positive, got {self.scale}")
        if not 0 <= self.margin < math.pi / 2:
            raise ConfigError(f"AAM margin must lie in [0, pi/2), got {self.margin}")


class AamHead(nn.Module):
    """Speaker classifier weights, one unit-norm row per class."""

    def __init__(self, n_classes: int, embed_dim: int, generator: torch.Generator | None = None):
        super().__init__()
        if n_classes < 1:
            raise ConfigError("classifier needs at least one class")
        w = torch.randn(n_classes, embed_dim, generator=generator)
        self.weight = nn.Parameter(F.normalize(w, dim=1))

    @property
    def n_classes(self) -> int:
        return self.weight.shape[0]

    @torch.no_grad()
    def renormalize_(self) -> None:
        self.weight.copy_(F.normalize(self.weight, dim=1))

    def cosine(self, embeddings: torch.Tensor) -> torch.Tensor:
        return F.normalize(embeddings, dim=1) @ F.normalize(self.weight, dim=1).t()


def aam_softmax_loss(embeddings: torch.Tensor, labels: torch.Tensor, weight: torch.Tensor,
                     cfg: AamConfig = AamConfig()) -> tuple[torch.Tensor, torch.Tensor]:
    """Mean additive-angular-margin cross-entropy.

    Returns ``(loss, logits)``; the logits are the scaled margin-adjusted
    cosines the loss was computed from.
    """
    labels = torch.as_tensor(labels, dtype=torch.long, device=embeddings.device)
    n_classes = weight.shape[0]
    if labels.numel() and (labels.min() < 0 or labels.max() >= n_classes):
        raise InputError(f"labels must lie in [0, {n_classes}), got range "
                         f"[{int(labels.min())}, {int(labels.max())}]")
    cos = F.normalize(embeddings, dim=1) @ F.normalize(weight, dim=1).t()
    cos = cos.clamp(-1 + COS_CLAMP, 1 - COS_CLAMP)
    onehot = F.one_hot(labels, n_classes).to(cos.dtype)
    if cfg.margin:
        sin = torch.sqrt(1.0 - cos * cos)
        cos_m = cos * math.cos(cfg.margin) - sin * math.sin(cfg.margin)  # cos(theta + m)
        cos = onehot * cos_m + (1.0 - onehot) * cos
    logits = cfg.scale * cos
    return F.cross_entropy(logits, labels), logits


def transfer_match_set(model: nn.Module) -> list[str]:
    """Names of learned encoder parameters; batch-norm running stats are buffers and excluded."""
    return [name for name, p in model.named_parameters() if p.requires_grad]


def weight_transfer_loss(source: Mapping[str, torch.Tensor], target: Mapping[str, torch.Tensor],
                         match_set: Iterable[str] | None = None, per_tensor: bool = False) -> torch.Tensor:
    """L2 distance between two parameter maps over ``match_set``.

    The default is the global norm of all element-wise differences; with
    ``per_tensor`` the per-tensor norms are summed instead. The source side
    is detached.
    """
    names = list(match_set) if match_set is not None else list(source)
    if not names:
        raise ConfigError("empty match set")
    terms = []
    for name in names:
        if name not in source or name not in target:
            raise ConfigError(f"parameter {name!r} missing from one side of the weight pair")
        ws, wt = source[name], target[name]
        if ws.shape != wt.shape:
            raise ConfigError(f"shape mismatch for {name!r}: {tuple(ws.shape)} vs {tuple(wt.shape)}")
        diff = (wt - ws.detach().to(wt.dtype)).reshape(-1)
        terms.append(torch.linalg.vector_norm(diff) if per_tensor else diff)
    if per_tensor:
        return torch.stack(terms).sum()
    return torch.linalg.vector_norm(torch.cat(terms))


def l2_penalty(params: Iterable[torch.Tensor]) -> torch.Tensor:
    params = list(params)
    if not params:
        return torch.zeros(())
    return sum((p * p).sum() for p in params)


def finetune_total_loss(l_ce, l_wt, params: Iterable[torch.Tensor], lambda_wt: float = 1.0,
                        weight_decay: float = 2e-4):
    """``l_ce + lambda_wt * l_wt + weight_decay * sum ||W||^2``."""
    if lambda_wt < 0 or weight_decay < 0:
        raise ConfigError("lambda_wt and weight_decay must be nonnegative")
    total = l_ce + lambda_wt * l_wt
    if weight_decay:
        total = total + weight_decay * l2_penalty(params)
    return total
