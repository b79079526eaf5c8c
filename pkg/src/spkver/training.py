"""Pre-training and fine-tuning loops with the triangular2 cyclic learning rate."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn as nn

from spkver.augment import AugmentBank, AugmentPolicy, compose_augmentations
from spkver.dataio import UtteranceRecord, read_wav
from spkver.errors import ConfigError, InputError
from spkver.features import FeatureConfig, compute_log_mel, mean_normalize
from spkver.losses import (
    AamConfig,
    AamHead,
    aam_softmax_loss,
    finetune_total_loss,
    transfer_match_set,
    weight_transfer_loss,
)
from spkver.models.checkpoint import Checkpoint, build_model

log = logging.getLogger(__name__)

FINETUNE_MODES = ("vanilla", "weight_transfer")


@dataclass(frozen=True)
class TrainConfig:
    lr_min: float = 1e-8
    lr_max: float = 1e-3
    half_cycle_steps: int | None = None  # None: two epochs' worth of steps
    batch_size: int = 32
    crop_seconds: float = 3.0
    max_steps: int = 1000
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    weight_decay: float = 2e-4
    aam: AamConfig = AamConfig()
    seed: int = 0
    log_every: int = 50

    def __post_init__(self):
        if not 0 < self.lr_min < self.lr_max:
            raise ConfigError(f"need 0 < lr_min < lr_max, got {self.lr_min}, {self.lr_max}")
        if self.half_cycle_steps is not None and self.half_cycle_steps < 1:
            raise ConfigError("half_cycle_steps must be >= 1")
        if self.batch_size < 1 or self.max_steps < 0 or self.crop_seconds <= 0:
            raise ConfigError("batch_size >= 1, max_steps >= 0 and crop_seconds > 0 required")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be nonnegative")

    def resolved_half_cycle(self, n_utterances: int) -> int:
        if self.half_cycle_steps is not None:
            return self.half_cycle_steps
        return max(1, 2 * math.ceil(n_utterances / self.batch_size))


@dataclass(frozen=True)
class FinetuneConfig:
    mode: str = "weight_transfer"
    lambda_wt: float = 1.0
    per_tensor: bool = False
    train: TrainConfig = TrainConfig()

    def __post_init__(self):
        if self.mode not in FINETUNE_MODES:
            raise ConfigError(f"finetune mode must be one of {FINETUNE_MODES}, got {self.mode!r}")
        if self.lambda_wt < 0:
            raise ConfigError("lambda_wt must be nonnegative")


def triangular2_lr(step: int, lr_min: float, lr_max: float, half_cycle_steps: int) -> float:
    """Triangular cyclic learning rate whose amplitude halves every cycle."""
    cycle = step // (2 * half_cycle_steps)
    x = abs(step / half_cycle_steps - 2 * cycle - 1)
    # ldexp underflows to 0 instead of overflowing for very late cycles
    return lr_min + math.ldexp(lr_max - lr_min, -cycle) * max(0.0, 1.0 - x)


# ----------------------------------------------------------------------- data


class SpeakerDataset:
    """In-memory utterances with integer speaker labels (sorted speaker ids)."""

    def __init__(self, records: Sequence[UtteranceRecord], sample_rate: int = 16000, waves=None):
        if not records:
            raise InputError("empty dataset")
        self.records = list(records)
        self.sample_rate = sample_rate
        self.speakers = sorted({r.speaker_id for r in self.records})
        self.label_of = {s: i for i, s in enumerate(self.speakers)}
        self.labels = np.array([self.label_of[r.speaker_id] for r in self.records])
        if waves is None:
            waves = []
            for r in self.records:
                data, sr = read_wav(r.path)
                if sr != sample_rate:
                    raise InputError(f"{r.path}: sample rate {sr}, expected {sample_rate}")
                waves.append(data)
        self.waves = [np.asarray(w, dtype=np.float32) for w in waves]
        self.by_speaker = [np.flatnonzero(self.labels == i) for i in range(len(self.speakers))]

    def __len__(self):
        return len(self.records)

    @property
    def n_speakers(self) -> int:
        return len(self.speakers)


def _crop(wave: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    if len(wave) <= n:
        return np.tile(wave, -(-n // len(wave)))[:n]
    start = int(rng.integers(0, len(wave) - n + 1))
    return wave[start : start + n]


def _fix_frames(feats: np.ndarray, n: int) -> np.ndarray:
    if feats.shape[0] >= n:
        return feats[:n]
    return np.tile(feats, (-(-n // feats.shape[0]), 1))[:n]


class BatchSampler:
    """Speaker-balanced batches of augmented fixed-length crops.

    Speakers are visited round-robin in a freshly shuffled order each pass;
    each visit draws one random utterance and one random crop.
    """

    def __init__(self, dataset: SpeakerDataset, cfg: TrainConfig, rng: np.random.Generator,
                 policy: AugmentPolicy | None = None, bank: AugmentBank | None = None,
                 feat_cfg: FeatureConfig = FeatureConfig()):
        self.ds = dataset
        self.cfg = cfg
        self.rng = rng
        self.policy = policy or AugmentPolicy.disabled()
        self.bank = bank
        self.feat_cfg = feat_cfg
        self.n_frames = int(round(cfg.crop_seconds * 1000 / feat_cfg.hop_ms))
        # extra samples so that a 1.1x speed-up still yields n_frames
        max_speed = max(self.policy.speed_factors, default=1.0)
        base = (self.n_frames - 1) * feat_cfg.hop_samples + feat_cfg.win_samples
        self.crop_samples = int(math.ceil(base * max(1.0, max_speed))) + feat_cfg.hop_samples
        self._order: list[int] = []

    def _next_speaker(self) -> int:
        if not self._order:
            self._order = list(self.rng.permutation(self.ds.n_speakers))
        return int(self._order.pop())

    def __next__(self) -> tuple[torch.Tensor, torch.Tensor]:
        feats, labels = [], []
        for _ in range(self.cfg.batch_size):
            spk = self._next_speaker()
            idx = int(self.rng.choice(self.ds.by_speaker[spk]))
            wave = _crop(self.ds.waves[idx], self.crop_samples, self.rng)
            f = compose_augmentations(wave, self.policy, self.rng, self.bank, self.feat_cfg)
            feats.append(_fix_frames(f, self.n_frames))
            labels.append(spk)
        return torch.from_numpy(np.stack(feats)), torch.tensor(labels)

    def __iter__(self):
        return self


# ------------------------------------------------------------------ training


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    losses: list[float] = field(default_factory=list)
    batch_accuracy: list[float] = field(default_factory=list)
    encoder: nn.Module | None = None
    head: AamHead | None = None


def init_model(arch: str, model_config: dict | None, seed: int) -> nn.Module:
    """Build a freshly initialized encoder from the seed."""
    torch.manual_seed(seed)
    return build_model(arch, model_config)


def _run_loop(encoder: nn.Module, head: AamHead, sampler: BatchSampler, cfg: TrainConfig,
              half_cycle: int, extra_loss: Callable[[], torch.Tensor] | None, lambda_wt: float,
              optimizer: torch.optim.Optimizer, start_step: int = 0):
    params = [p for p in encoder.parameters() if p.requires_grad] + [head.weight]
    losses, accs = [], []
    encoder.train()
    for step in range(start_step, start_step + cfg.max_steps):
        lr = triangular2_lr(step, cfg.lr_min, cfg.lr_max, half_cycle)
        for group in optimizer.param_groups:
            group["lr"] = lr
        x, y = next(sampler)
        emb = encoder(x)
        l_ce, _ = aam_softmax_loss(emb, y, head.weight, cfg.aam)
        l_wt = extra_loss() if extra_loss is not None else 0.0
        loss = finetune_total_loss(l_ce, l_wt, params, lambda_wt if extra_loss else 0.0,
                                   cfg.weight_decay)
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
        head.renormalize_()
        with torch.no_grad():
            acc = (head.cosine(emb).argmax(dim=1) == y).float().mean().item()
        losses.append(float(loss.detach()))
        accs.append(acc)
        if cfg.log_every and (step + 1) % cfg.log_every == 0:
            log.info("step %d lr %.3g loss %.4f acc %.3f", step + 1, lr,
                     np.mean(losses[-cfg.log_every:]), np.mean(accs[-cfg.log_every:]))
    return losses, accs


def _make_optimizer(params, cfg: TrainConfig):
    return torch.optim.Adam(params, lr=cfg.lr_min, betas=cfg.betas, eps=cfg.adam_eps)


def pretrain(encoder: nn.Module, dataset: SpeakerDataset, cfg: TrainConfig,
             policy: AugmentPolicy | None = None, bank: AugmentBank | None = None,
             feat_cfg: FeatureConfig = FeatureConfig(), run_config: dict | None = None,
             resume: Checkpoint | None = None) -> TrainResult:
    """Train ``encoder`` plus a fresh AAM head on ``dataset``.

    With ``resume`` the encoder, head and optimizer state are restored and
    ``cfg.max_steps`` further steps are taken, continuing the LR schedule.
    """
    if dataset.n_speakers < 2:
        raise ConfigError("pre-training needs at least two speakers")
    start = 0
    rng = np.random.default_rng(cfg.seed if resume is None else [cfg.seed, resume.step])
    gen = torch.Generator().manual_seed(cfg.seed)
    head = AamHead(dataset.n_speakers, encoder.embed_dim, generator=gen)
    optimizer = _make_optimizer(list(encoder.parameters()) + list(head.parameters()), cfg)
    if resume is not None:
        if resume.speakers != dataset.speakers:
            raise ConfigError("resumed checkpoint was trained on a different speaker set")
        encoder.load_state_dict(resume.encoder)
        head.load_state_dict(resume.head)
        if resume.optimizer is not None:
            optimizer.load_state_dict(resume.optimizer)
        start = resume.step
    sampler = BatchSampler(dataset, cfg, rng, policy, bank, feat_cfg)
    half = cfg.resolved_half_cycle(len(dataset))
    losses, accs = _run_loop(encoder, head, sampler, cfg, half, None, 0.0, optimizer, start)
    ckpt = _to_checkpoint(encoder, head, dataset.speakers, start + cfg.max_steps, optimizer, run_config)
    return TrainResult(ckpt, losses, accs, encoder, head)


def _to_checkpoint(encoder, head, speakers, step, optimizer, run_config) -> Checkpoint:
    return Checkpoint(
        arch=encoder.arch,
        model_config=encoder.cfg.to_dict(),
        encoder={k: v.detach().clone() for k, v in encoder.state_dict().items()},
        head={k: v.detach().clone() for k, v in head.state_dict().items()},
        speakers=list(speakers),
        step=step,
        optimizer=optimizer.state_dict() if optimizer is not None else None,
        run_config=dict(run_config or {}),
    )


def load_source_weights(encoder: nn.Module, source: Checkpoint) -> None:
    """Copy source encoder weights into ``encoder``; raise on the first mismatch."""
    if encoder.arch != source.arch:
        raise ConfigError(f"architecture mismatch: source is {source.arch}, model is {encoder.arch}")
    target = encoder.state_dict()
    for name, tensor in target.items():
        if name not in source.encoder:
            raise ConfigError(f"source checkpoint lacks tensor {name!r}")
        if source.encoder[name].shape != tensor.shape:
            raise ConfigError(f"tensor {name!r} differs: source {tuple(source.encoder[name].shape)}, "
                              f"model {tuple(tensor.shape)}")
    extra = [n for n in source.encoder if n not in target]
    if extra:
        raise ConfigError(f"model lacks source tensor {extra[0]!r}")
    encoder.load_state_dict(source.encoder)


def finetune(source: Checkpoint, encoder: nn.Module | None, dataset: SpeakerDataset,
             cfg: FinetuneConfig, policy: AugmentPolicy | None = None,
             bank: AugmentBank | None = None, feat_cfg: FeatureConfig = FeatureConfig(),
             run_config: dict | None = None) -> TrainResult:
    """Warm-start from ``source`` and train on ``dataset``.

    The encoder starts as an exact copy of the source weights and the
    classifier head is re-initialized for the new speaker set. In
    ``weight_transfer`` mode the objective adds ``lambda_wt`` times the L2
    distance to the frozen source weights.
    """
    tcfg = cfg.train
    if dataset.n_speakers < 2:
        raise ConfigError("fine-tuning needs at least two speakers")
    if encoder is None:
        encoder = build_model(source.arch, source.model_config)
    load_source_weights(encoder, source)
    names = transfer_match_set(encoder)
    anchor = {n: p.detach().clone() for n, p in encoder.named_parameters() if n in set(names)}

    rng = np.random.default_rng(tcfg.seed)
    gen = torch.Generator().manual_seed(tcfg.seed)
    head = AamHead(dataset.n_speakers, encoder.embed_dim, generator=gen)
    sampler = BatchSampler(dataset, tcfg, rng, policy, bank, feat_cfg)
    optimizer = _make_optimizer(list(encoder.parameters()) + list(head.parameters()), tcfg)

    wt_term = None
    if cfg.mode == "weight_transfer":
        current = dict(encoder.named_parameters())

        def wt_term():
            return weight_transfer_loss(anchor, current, names, cfg.per_tensor)

    half = tcfg.resolved_half_cycle(len(dataset))
    losses, accs = _run_loop(encoder, head, sampler, tcfg, half, wt_term, cfg.lambda_wt, optimizer)
    ckpt = _to_checkpoint(encoder, head, dataset.speakers, tcfg.max_steps, optimizer, run_config)
    return TrainResult(ckpt, losses, accs, encoder, head)


# ------------------------------------------------------------------ inference


@torch.no_grad()
def embed_features(encoder: nn.Module, feats: np.ndarray) -> np.ndarray:
    encoder.eval()
    x = torch.from_numpy(np.ascontiguousarray(feats, dtype=np.float32))[None]
    return encoder(x)[0].numpy()


def embed_waveform(encoder: nn.Module, wave: np.ndarray, feat_cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    return embed_features(encoder, mean_normalize(compute_log_mel(wave, feat_cfg)))


@torch.no_grad()
def classification_accuracy(encoder: nn.Module, head_weight: torch.Tensor, waves, labels,
                            feat_cfg: FeatureConfig = FeatureConfig()) -> float:
    """Fraction of whole utterances whose nearest class row (cosine) is the true label."""
    w = torch.nn.functional.normalize(head_weight, dim=1)
    hits = 0
    for wave, label in zip(waves, labels):
        e = torch.from_numpy(embed_waveform(encoder, wave, feat_cfg))
        hits += int((torch.nn.functional.normalize(e, dim=0) @ w.t()).argmax()) == int(label)
    return hits / len(labels)
