"""Checkpoint container: parameters plus training-phase state, versioned.

A checkpoint is a ``torch.save`` file holding a single dict:

    format_version: 1
    train_config:   TrainConfig as a plain dict (model presets included)
    epoch:          last completed epoch (1-based)
    bounded:        whether the representation head still squashes its output
    adapted:        True once the head has been re-initialized to emit degrees
    state:          {'repr': ..., 'align': ..., 'redir': ...} state dicts
    optimizer:      optimizer state dict or None
    history:        list of per-step loss rows
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import torch

from .config import TrainConfig
from .models import ModelSet, build_models

CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    models: ModelSet
    config: TrainConfig
    epoch: int
    bounded: bool
    adapted: bool
    history: list
    optimizer_state: dict | None


def build_models_from_config(config: TrainConfig, bounded: bool = True) -> ModelSet:
    return build_models(
        repr_preset=config.repr_preset,
        repr_dim=config.repr_dim,
        input_size=config.image_size,
        bounded=bounded,
        redir_widths=config.redir_widths,
        delta_channels=config.delta_channels,
        max_residual=config.max_residual,
    )


def save_checkpoint(
    path: str | Path,
    models: ModelSet,
    config: TrainConfig,
    *,
    epoch: int,
    bounded: bool,
    adapted: bool = False,
    optimizer: torch.optim.Optimizer | None = None,
    history: list | None = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "train_config": config.to_dict(),
        "epoch": epoch,
        "bounded": bounded,
        "adapted": adapted,
        "state": {
            "repr": models.repr_net.state_dict(),
            "align": models.align_net.state_dict(),
            "redir": models.redir_net.state_dict(),
        },
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "history": list(history) if history is not None else [],
    }
    torch.save(payload, path)
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version!r}")
    config = TrainConfig.from_dict(payload["train_config"])
    models = build_models_from_config(config, bounded=payload["bounded"])
    models.repr_net.load_state_dict(payload["state"]["repr"])
    models.align_net.load_state_dict(payload["state"]["align"])
    models.redir_net.load_state_dict(payload["state"]["redir"])
    models.eval()
    return Checkpoint(
        models=models,
        config=config,
        epoch=payload["epoch"],
        bounded=payload["bounded"],
        adapted=payload.get("adapted", False),
        history=payload.get("history", []),
        optimizer_state=payload.get("optimizer"),
    )


def models_digest(models: ModelSet, history: list | None = None) -> str:
    """SHA-256 over all parameter bytes (and optional loss history), for
    bit-reproducibility checks."""
    hasher = hashlib.sha256()
    for net in (models.repr_net, models.align_net, models.redir_net):
        for name, param in sorted(net.state_dict().items()):
            hasher.update(name.encode())
            hasher.update(param.detach().cpu().numpy().tobytes())
    if history is not None:
        import json

        hasher.update(json.dumps(history, sort_keys=True).encode())
    return hasher.hexdigest()
