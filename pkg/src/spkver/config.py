"""Run configuration: one flat, typed key/value document per run.

File syntax, one entry per line::

    # comment
    key: type = value

``type`` is one of ``int``, ``float``, ``str``, ``bool``, ``ints``, ``floats``
(the last two comma separated). Unknown keys and type mismatches are errors.
Precedence, lowest to highest: built-in defaults, ``--config`` file, CLI flags.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from spkver.augment import AugmentPolicy, SpecAugConfig
from spkver.errors import ConfigError, FormatError
from spkver.features import FeatureConfig
from spkver.losses import AamConfig
from spkver.training import FinetuneConfig, TrainConfig


@dataclass
class RunConfig:
    seed: int = 0
    # features
    sample_rate: int = 16000
    win_ms: float = 25.0
    hop_ms: float = 10.0
    n_mels: int = 80
    fft_size: int = 512
    f_min: float = 20.0
    f_max: float = 7600.0
    # model
    arch: str = "ecapa"
    channels: int = 1024
    embed_dim: int = 0  # 0: architecture default
    res2_scale: int = 8
    se_reduction: int = 8
    attention_channels: int = 128
    stage_channels: tuple = (64, 128, 256, 512)
    pool_heads: int = 1
    # loss
    aam_scale: float = 30.0
    aam_margin: float = 0.2
    # optimization
    lr_min: float = 1e-8
    lr_max: float = 1e-3
    half_cycle_steps: int = 0  # 0: two epochs' worth of steps
    batch_size: int = 32
    crop_seconds: float = 3.0
    max_steps: int = 1000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 2e-4
    log_every: int = 50
    # fine-tuning
    finetune_mode: str = "weight_transfer"
    lambda_wt: float = 1.0
    wt_per_tensor: bool = False
    source_checkpoint: str = ""
    # augmentation
    p_speed: float = 0.3
    p_noise: float = 0.3
    p_reverb: float = 0.3
    p_specaug: float = 0.5
    n_time_masks: int = 2
    max_time_mask_frames: int = 10
    n_freq_masks: int = 2
    max_freq_mask_bins: int = 8
    max_warp_frames: int = 5
    mask_fill: str = "mean"
    snr_noise: tuple = (0.0, 15.0)
    snr_music: tuple = (5.0, 15.0)
    snr_babble: tuple = (13.0, 20.0)
    speed_factors: tuple = (0.9, 1.1)
    noise_dir: str = ""
    rir_dir: str = ""
    # enrollment
    enroll_min_s: float = 10.0
    enroll_max_s: float = 60.0

    # -------------------------------------------------------------- views

    def feature_config(self) -> FeatureConfig:
        return FeatureConfig(self.sample_rate, self.win_ms, self.hop_ms, self.n_mels,
                             self.fft_size, self.f_min, self.f_max)

    def model_config(self) -> dict:
        if self.arch == "ecapa":
            cfg = dict(channels=self.channels, res2_scale=self.res2_scale,
                       se_reduction=self.se_reduction, attention_channels=self.attention_channels,
                       n_mels=self.n_mels)
            if self.embed_dim:
                cfg["embed_dim"] = self.embed_dim
            return cfg
        if self.arch == "resnet34se":
            cfg = dict(stage_channels=tuple(self.stage_channels), se_reduction=self.se_reduction,
                       attention_channels=self.attention_channels, pool_heads=self.pool_heads,
                       n_mels=self.n_mels)
            if self.embed_dim:
                cfg["embed_dim"] = self.embed_dim
            return cfg
        raise ConfigError(f"unknown arch {self.arch!r}; expected 'ecapa' or 'resnet34se'")

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr_min=self.lr_min, lr_max=self.lr_max,
            half_cycle_steps=self.half_cycle_steps or None,
            batch_size=self.batch_size, crop_seconds=self.crop_seconds, max_steps=self.max_steps,
            betas=(self.adam_beta1, self.adam_beta2), adam_eps=self.adam_eps,
            weight_decay=self.weight_decay, aam=AamConfig(self.aam_scale, self.aam_margin),
            seed=self.seed, log_every=self.log_every,
        )

    def finetune_config(self) -> FinetuneConfig:
        mode = self.finetune_mode.replace("-", "_")
        return FinetuneConfig(mode, self.lambda_wt, self.wt_per_tensor, self.train_config())

    def augment_policy(self) -> AugmentPolicy:
        return AugmentPolicy(
            p_speed=self.p_speed, p_noise=self.p_noise, p_reverb=self.p_reverb,
            p_specaug=self.p_specaug,
            specaug=SpecAugConfig(self.n_time_masks, self.max_time_mask_frames, self.n_freq_masks,
                                  self.max_freq_mask_bins, self.max_warp_frames, self.mask_fill),
            snr_db={"noise": tuple(self.snr_noise), "music": tuple(self.snr_music),
                    "babble": tuple(self.snr_babble)},
            speed_factors=tuple(self.speed_factors),
        )

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


_TYPE_NAMES = {int: "int", float: "float", str: "str", bool: "bool"}


def _type_of(name: str) -> str:
    default = RunConfig.__dataclass_fields__[name].default
    if isinstance(default, tuple):
        return "floats" if any(isinstance(v, float) for v in default) else "ints"
    return _TYPE_NAMES[type(default)]


def _convert(type_name: str, raw: str):
    raw = raw.strip()
    if type_name == "int":
        return int(raw)
    if type_name == "float":
        return float(raw)
    if type_name == "str":
        return raw
    if type_name == "bool":
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if type_name in ("ints", "floats"):
        conv = int if type_name == "ints" else float
        return tuple(conv(v) for v in raw.split(",") if v.strip())
    raise ValueError(f"unknown type {type_name!r}")


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(repr(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_run_config(text: str, base: RunConfig | None = None, source: str | None = None) -> RunConfig:
    values = {}
    known = RunConfig.__dataclass_fields__
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        head, sep, value = line.partition("=")
        key, colon, type_name = head.partition(":")
        key, type_name = key.strip(), type_name.strip()
        if not sep or not colon:
            raise FormatError("expected 'key: type = value'", lineno, source)
        if key not in known:
            raise FormatError(f"unknown config key {key!r}", lineno, source)
        expected = _type_of(key)
        if type_name != expected:
            raise FormatError(f"key {key!r} has type {expected}, got {type_name}", lineno, source)
        try:
            values[key] = _convert(type_name, value)
        except ValueError as exc:
            raise FormatError(f"bad value for {key!r}: {exc}", lineno, source) from None
    return dataclasses.replace(base or RunConfig(), **values)


def apply_overrides(cfg: RunConfig, overrides: dict[str, str]) -> RunConfig:
    """Apply ``key -> raw string`` overrides (CLI flags), typed by the schema."""
    known = RunConfig.__dataclass_fields__
    values = {}
    for key, raw in overrides.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            values[key] = _convert(_type_of(key), str(raw))
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from None
    return dataclasses.replace(cfg, **values)


def format_run_config(cfg: RunConfig) -> str:
    lines = [f"{f.name}: {_type_of(f.name)} = {_format(getattr(cfg, f.name))}" for f in fields(cfg)]
    return "\n".join(lines) + "\n"


def load_run_config(path) -> RunConfig:
    path = Path(path)
    return parse_run_config(path.read_text(encoding="utf-8"), source=str(path))


def run_config_from_dict(values: dict) -> RunConfig:
    known = RunConfig.__dataclass_fields__
    clean = {k: (tuple(v) if isinstance(v, list) else v) for k, v in values.items() if k in known}
    return dataclasses.replace(RunConfig(), **clean)
