"""Online data augmentation: speed perturbation, additive noise, reverberation, SpecAug.

Waveform-level steps run first (speed, then at most one of noise/reverb), features
are computed and mean-normalized, then SpecAug is applied to the feature matrix.
Every random choice is recorded in an :class:`AugmentTrace`, which can be
replayed without an rng.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve, resample_poly

from spkver.dataio import read_wav
from spkver.errors import ConfigError, InputError
from spkver.features import FeatureConfig, compute_log_mel, mean_normalize

NOISE_CATEGORIES = ("noise", "music", "babble")


@dataclass(frozen=True)
class SpecAugConfig:
    n_time_masks: int = 2
    max_time_mask_frames: int = 10
    n_freq_masks: int = 2
    max_freq_mask_bins: int = 8
    max_warp_frames: int = 5
    fill: str = "mean"  # "mean" or "zero"

    def __post_init__(self):
        for name in ("n_time_masks", "max_time_mask_frames", "n_freq_masks",
                     "max_freq_mask_bins", "max_warp_frames"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.fill not in ("mean", "zero"):
            raise ConfigError(f"fill must be 'mean' or 'zero', got {self.fill!r}")


@dataclass(frozen=True)
class AugmentPolicy:
    p_speed: float = 0.3
    p_noise: float = 0.3
    p_reverb: float = 0.3
    p_specaug: float = 0.5
    specaug: SpecAugConfig = SpecAugConfig()
    snr_db: dict = field(default_factory=lambda: {
        "noise": (0.0, 15.0), "music": (5.0, 15.0), "babble": (13.0, 20.0),
    })
    speed_factors: tuple = (0.9, 1.1)

    def __post_init__(self):
        for name in ("p_speed", "p_noise", "p_reverb", "p_specaug"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {p}")
        for cat, (lo, hi) in self.snr_db.items():
            if cat not in NOISE_CATEGORIES:
                raise ConfigError(f"unknown noise category {cat!r}")
            if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
                raise ConfigError(f"bad SNR range for {cat}: {(lo, hi)}")
        if any(f <= 0 for f in self.speed_factors):
            raise ConfigError("speed factors must be positive")

    @classmethod
    def disabled(cls) -> "AugmentPolicy":
        return cls(p_speed=0.0, p_noise=0.0, p_reverb=0.0, p_specaug=0.0)

    @classmethod
    def always(cls, **kw) -> "AugmentPolicy":
        return cls(p_speed=1.0, p_noise=1.0, p_reverb=1.0, p_specaug=1.0, **kw)


# ------------------------------------------------------------------ SpecAug


@dataclass(frozen=True)
class SpecAugPlan:
    """Concrete SpecAug choices: warp as (anchor, shift), masks as (start, width)."""

    warp: tuple[int, int] | None
    time_masks: tuple[tuple[int, int], ...]
    freq_masks: tuple[tuple[int, int], ...]


def sample_specaug_plan(n_frames: int, n_bins: int, cfg: SpecAugConfig, rng: np.random.Generator) -> SpecAugPlan:
    warp = None
    w = cfg.max_warp_frames
    if w > 0 and n_frames > 2 * w:
        anchor = int(rng.integers(w, n_frames - w))
        shift = int(rng.integers(-w, w + 1))
        warp = (anchor, shift)

    def spans(count, max_width, length):
        out = []
        for _ in range(count):
            width = int(rng.integers(0, min(max_width, length) + 1))
            start = int(rng.integers(0, length - width + 1))
            out.append((start, width))
        return tuple(out)

    return SpecAugPlan(
        warp,
        spans(cfg.n_time_masks, cfg.max_time_mask_frames, n_frames),
        spans(cfg.n_freq_masks, cfg.max_freq_mask_bins, n_bins),
    )


def time_warp(feats: np.ndarray, anchor: int, shift: int) -> np.ndarray:
    """Move frame ``anchor`` to ``anchor + shift``, stretching both sides linearly."""
    T = feats.shape[0]
    dest = anchor + shift
    if shift == 0 or not (0 <= dest <= T - 1):
        return feats.copy()
    j = np.arange(T, dtype=np.float64)
    left = j * anchor / dest if dest > 0 else np.zeros(T)
    right_span = T - 1 - dest
    if right_span > 0:
        right = anchor + (j - dest) * (T - 1 - anchor) / right_span
    else:
        right = np.full(T, float(T - 1))
    src = np.where(j < dest, left, right)
    lo = np.clip(np.floor(src).astype(int), 0, T - 1)
    hi = np.minimum(lo + 1, T - 1)
    frac = (src - lo)[:, None]
    return ((1.0 - frac) * feats[lo] + frac * feats[hi]).astype(feats.dtype)


def apply_specaug_plan(feats: np.ndarray, plan: SpecAugPlan, fill: str = "mean") -> np.ndarray:
    out = np.array(feats, copy=True)
    if plan.warp is not None:
        out = time_warp(out, *plan.warp)
    value = float(out.mean()) if fill == "mean" else 0.0
    for start, width in plan.time_masks:
        out[start : start + width, :] = value
    for start, width in plan.freq_masks:
        out[:, start : start + width] = value
    return out


def spec_augment(feats: np.ndarray, cfg: SpecAugConfig, rng: np.random.Generator,
                 return_plan: bool = False):
    plan = sample_specaug_plan(feats.shape[0], feats.shape[1], cfg, rng)
    out = apply_specaug_plan(feats, plan, cfg.fill)
    return (out, plan) if return_plan else out


# ------------------------------------------------------- waveform corruptions


def _fit_noise(noise: np.ndarray, length: int, offset: int) -> np.ndarray:
    if len(noise) >= length:
        return noise[offset : offset + length]
    reps = -(-length // len(noise))
    return np.tile(noise, reps)[:length]


def add_noise(wave: np.ndarray, noise: np.ndarray, snr_db: float,
              rng: np.random.Generator | None = None, offset: int | None = None) -> np.ndarray:
    """Mix ``noise`` into ``wave`` at the requested SNR (dB).

    Noise longer than the signal is cropped at ``offset`` (random when an rng is
    given); shorter noise is looped from its start.
    """
    wave = np.asarray(wave, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if len(noise) == 0:
        raise InputError("empty noise waveform")
    if offset is None:
        slack = len(noise) - len(wave)
        offset = int(rng.integers(0, slack + 1)) if (rng is not None and slack > 0) else 0
    seg = _fit_noise(noise, len(wave), offset)
    p_noise = np.mean(seg**2)
    if p_noise <= 0:
        raise InputError("noise has zero power")
    if math.isinf(snr_db) and snr_db > 0:
        return wave.copy()
    p_wave = np.mean(wave**2)
    gain = math.sqrt(p_wave / (p_noise * 10.0 ** (snr_db / 10.0)))
    return wave + gain * seg


def add_reverb(wave: np.ndarray, rir: np.ndarray) -> np.ndarray:
    wave = np.asarray(wave, dtype=np.float64)
    rir = np.asarray(rir, dtype=np.float64)
    if len(rir) == 0:
        raise InputError("empty RIR")
    out = fftconvolve(wave, rir)[: len(wave)]
    peak_in, peak_out = np.max(np.abs(wave)), np.max(np.abs(out))
    if peak_out > 0:
        out *= peak_in / peak_out
    return out


def speed_perturb(wave: np.ndarray, factor: float) -> np.ndarray:
    """Play ``wave`` ``factor`` times faster by polyphase resampling."""
    if factor <= 0:
        raise InputError(f"speed factor must be positive, got {factor}")
    wave = np.asarray(wave, dtype=np.float64)
    if factor == 1.0:
        return wave.copy()
    ratio = Fraction(factor).limit_denominator(1000)
    return resample_poly(wave, ratio.denominator, ratio.numerator)


# ----------------------------------------------------------- corpora/banks


def synthetic_rir(rng: np.random.Generator, sample_rate: int = 16000,
                  rt60: float | None = None, length_s: float = 0.4) -> np.ndarray:
    if rt60 is None:
        rt60 = float(rng.uniform(0.2, 0.8))
    n = int(length_s * sample_rate)
    t = np.arange(n) / sample_rate
    decay = np.exp(-6.9078 * t / rt60)  # -60 dB at rt60
    rir = rng.standard_normal(n) * decay * 0.3
    rir[0] = 1.0
    return rir


def _synthetic_noise(category: str, rng: np.random.Generator, n: int, sample_rate: int) -> np.ndarray:
    t = np.arange(n) / sample_rate
    if category == "noise":
        return rng.standard_normal(n) * 0.1
    if category == "music":
        out = np.zeros(n)
        for _ in range(4):
            f = 110.0 * 2 ** (rng.integers(0, 36) / 12)
            out += np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi)) * rng.uniform(0.02, 0.08)
        return out
    # babble: several harmonic complexes with syllable-rate amplitude modulation
    out = np.zeros(n)
    for _ in range(5):
        f0 = rng.uniform(90, 250)
        am = 0.5 * (1 + np.sin(2 * np.pi * rng.uniform(3, 6) * t + rng.uniform(0, 6.28)))
        voice = sum(np.sin(2 * np.pi * k * f0 * t) / k for k in range(1, 8))
        out += 0.02 * am * voice
    return out


@dataclass
class AugmentBank:
    """Noise recordings per category and room impulse responses."""

    noises: dict[str, list[np.ndarray]] = field(default_factory=dict)
    rirs: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def synthetic(cls, seed: int = 0, sample_rate: int = 16000, n_each: int = 3,
                  noise_seconds: float = 5.0) -> "AugmentBank":
        rng = np.random.default_rng(seed)
        n = int(noise_seconds * sample_rate)
        noises = {c: [_synthetic_noise(c, rng, n, sample_rate) for _ in range(n_each)]
                  for c in NOISE_CATEGORIES}
        rirs = [synthetic_rir(rng, sample_rate) for _ in range(n_each)]
        return cls(noises, rirs)

    @classmethod
    def from_dirs(cls, noise_dir=None, rir_dir=None, sample_rate: int = 16000) -> "AugmentBank":
        """Load WAVs. Noise files go under ``noise_dir/<category>/``; loose files count as 'noise'."""
        noises: dict[str, list[np.ndarray]] = {}
        rirs = []

        def load(path):
            data, sr = read_wav(path)
            if sr != sample_rate:
                raise InputError(f"{path}: sample rate {sr}, expected {sample_rate}")
            return data.astype(np.float64)

        if noise_dir:
            root = Path(noise_dir)
            for p in sorted(root.rglob("*.wav")):
                rel = p.relative_to(root).parts
                cat = rel[0] if len(rel) > 1 and rel[0] in NOISE_CATEGORIES else "noise"
                noises.setdefault(cat, []).append(load(p))
        if rir_dir:
            rirs = [load(p) for p in sorted(Path(rir_dir).rglob("*.wav"))]
        return cls(noises, rirs)


# ----------------------------------------------------------------- pipeline


@dataclass
class AugmentTrace:
    speed: float | None = None
    noise: tuple[str, int, int, float] | None = None  # category, bank index, offset, snr_db
    reverb: int | None = None
    specaug: SpecAugPlan | None = None


def _apply_waveform_steps(wave, trace: AugmentTrace, bank: AugmentBank | None):
    if trace.speed is not None:
        wave = speed_perturb(wave, trace.speed)
    if trace.noise is not None:
        cat, idx, offset, snr = trace.noise
        wave = add_noise(wave, bank.noises[cat][idx], snr, offset=offset)
    if trace.reverb is not None:
        wave = add_reverb(wave, bank.rirs[trace.reverb])
    return wave


def compose_augmentations(wave: np.ndarray, policy: AugmentPolicy, rng: np.random.Generator,
                          bank: AugmentBank | None = None,
                          feat_cfg: FeatureConfig = FeatureConfig(),
                          return_trace: bool = False):
    """Augment one waveform and return its normalized (T, 80) feature matrix."""
    trace = AugmentTrace()
    wave = np.asarray(wave, dtype=np.float64)
    if rng.random() < policy.p_speed and policy.speed_factors:
        trace.speed = float(policy.speed_factors[rng.integers(len(policy.speed_factors))])
        wave = speed_perturb(wave, trace.speed)

    want_noise = rng.random() < policy.p_noise
    want_reverb = rng.random() < policy.p_reverb
    cats = [c for c in NOISE_CATEGORIES if bank is not None and bank.noises.get(c) and c in policy.snr_db]
    can_noise = want_noise and bool(cats)
    can_reverb = want_reverb and bank is not None and bool(bank.rirs)
    if can_noise and can_reverb:
        if rng.random() < 0.5:
            can_reverb = False
        else:
            can_noise = False
    if can_noise:
        cat = cats[int(rng.integers(len(cats)))]
        idx = int(rng.integers(len(bank.noises[cat])))
        noise = bank.noises[cat][idx]
        slack = len(noise) - len(wave)
        offset = int(rng.integers(0, slack + 1)) if slack > 0 else 0
        lo, hi = policy.snr_db[cat]
        trace.noise = (cat, idx, offset, float(rng.uniform(lo, hi)))
    elif can_reverb:
        trace.reverb = int(rng.integers(len(bank.rirs)))
    wave = _apply_waveform_steps(wave, AugmentTrace(noise=trace.noise, reverb=trace.reverb), bank)

    feats = mean_normalize(compute_log_mel(wave, feat_cfg))
    if rng.random() < policy.p_specaug:
        trace.specaug = sample_specaug_plan(feats.shape[0], feats.shape[1], policy.specaug, rng)
        feats = apply_specaug_plan(feats, trace.specaug, policy.specaug.fill)
    return (feats, trace) if return_trace else feats


def replay_augmentations(wave: np.ndarray, trace: AugmentTrace, bank: AugmentBank | None = None,
                         feat_cfg: FeatureConfig = FeatureConfig(), fill: str = "mean") -> np.ndarray:
    wave = _apply_waveform_steps(np.asarray(wave, dtype=np.float64), trace, bank)
    feats = mean_normalize(compute_log_mel(wave, feat_cfg))
    if trace.specaug is not None:
        feats = apply_specaug_plan(feats, trace.specaug, fill)
    return feats
