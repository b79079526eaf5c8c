"""Versioned checkpoint files.

A checkpoint is a ``torch.save`` dict with the keys

    format        "spkver-checkpoint"
    version       1
    arch          "ecapa" or "resnet34se"
    model_config  dict of the architecture config fields
    encoder       encoder state dict (parameters and batch-norm buffers)
    head          classifier state dict ({"weight": N x D}) or None
    speakers      classifier label order, list of speaker ids
    step          optimizer steps taken so far
    optimizer     optimizer state dict or None
    run_config    resolved run configuration, dict of plain values

It loads with ``torch.load(..., weights_only=True)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import torch

from spkver.errors import FormatError
from spkver.models.ecapa import EcapaConfig, EcapaTDNN
from spkver.models.resnet import ResnetConfig, ResNet34SE

CKPT_FORMAT = "spkver-checkpoint"
CKPT_VERSION = 1

ARCHS = {
    "ecapa": (EcapaConfig, EcapaTDNN),
    "resnet34se": (ResnetConfig, ResNet34SE),
}


def build_model(arch: str, config: dict | None = None):
    try:
        cfg_cls, model_cls = ARCHS[arch]
    except KeyError:
        raise FormatError(f"unknown architecture {arch!r}") from None
    return model_cls(cfg_cls(**(config or {})))


@dataclass
class Checkpoint:
    arch: str
    model_config: dict
    encoder: dict
    head: dict | None = None
    speakers: list = field(default_factory=list)
    step: int = 0
    optimizer: dict | None = None
    run_config: dict = field(default_factory=dict)

    def build_encoder(self):
        model = build_model(self.arch, self.model_config)
        model.load_state_dict(self.encoder)
        return model


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    payload = {
        "format": CKPT_FORMAT,
        "version": CKPT_VERSION,
        "arch": ckpt.arch,
        "model_config": dict(ckpt.model_config),
        "encoder": ckpt.encoder,
        "head": ckpt.head,
        "speakers": list(ckpt.speakers),
        "step": int(ckpt.step),
        "optimizer": ckpt.optimizer,
        "run_config": dict(ckpt.run_config),
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, str(path))


def load_checkpoint(path) -> Checkpoint:
    try:
        payload = torch.load(str(path), map_location="cpu", weights_only=True)
    except Exception as exc:  # torch raises a variety of unpickling errors
        raise FormatError(f"cannot read checkpoint: {exc}", source=str(path)) from None
    if not isinstance(payload, dict) or payload.get("format") != CKPT_FORMAT:
        raise FormatError("not a spkver checkpoint", source=str(path))
    if payload.get("version") != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {payload.get('version')}", source=str(path))
    cfg = dict(payload["model_config"])
    for key, val in cfg.items():
        if isinstance(val, list):
            cfg[key] = tuple(val)
    return Checkpoint(
        arch=payload["arch"],
        model_config=cfg,
        encoder=payload["encoder"],
        head=payload.get("head"),
        speakers=list(payload.get("speakers") or []),
        step=int(payload.get("step", 0)),
        optimizer=payload.get("optimizer"),
        run_config=dict(payload.get("run_config") or {}),
    )
