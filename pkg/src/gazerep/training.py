"""Unsupervised training loop: pair sampling, schedule, checkpointing.

Schedule follows the reference recipe: Adam at 1e-4 with the rate halved
every 3 epochs, batch size 16, tanh-bounded representation for the first 2
epochs and a plain linear head afterwards (same parameters, squashing
removed). An epoch is one pass over the sampled pair set.

Training reads no gaze labels; callers can (and the tests do) pass a
label-guarded manifest to prove it.
"""

from __future__ import annotations

import csv
import random
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .checkpoint import models_digest, save_checkpoint
from .config import TrainConfig
from .data import ImageStore, Manifest, augment, sample_pairs
from .features import FeatureExtractor
from .losses import LOSS_LOG_FIELDS, total_loss
from .models import ModelSet, unsup_forward


class NonFiniteLossError(RuntimeError):
    """Training aborted on a non-finite loss; diagnostics dumped if possible."""


@dataclass
class TrainResult:
    models: ModelSet
    config: TrainConfig
    history: list[dict]
    checkpoint_path: Path | None
    pairs_used: int
    persons_skipped: int
    digest: str


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)


def learning_rate(config: TrainConfig, epoch: int) -> float:
    """Halve the base rate every `lr_halve_every` epochs (1-based epochs)."""
    return config.learning_rate * 0.5 ** ((epoch - 1) // config.lr_halve_every)


def build_extractor(config: TrainConfig) -> FeatureExtractor:
    if config.vgg_weights:
        return FeatureExtractor.from_vgg16_weights(config.vgg_weights)
    return FeatureExtractor.random(
        seed=config.extractor_seed, channels=config.extractor_channels
    )


def train_unsupervised(
    config: TrainConfig,
    manifest: Manifest,
    extractor: FeatureExtractor | None = None,
    out_dir: str | Path | None = None,
) -> TrainResult:
    """Run the full unsupervised objective over the manifest's records.

    Writes per-epoch checkpoints and a delimited loss log when ``out_dir`` is
    given; returns the trained models with their loss history either way.
    """
    from .checkpoint import build_models_from_config

    seed_everything(config.seed)
    if extractor is None:
        extractor = build_extractor(config)
    models = build_models_from_config(config, bounded=config.bounded_epochs > 0)
    models.train()

    pairs, skipped = sample_pairs(manifest, config.pair_policy, seed=config.seed)
    if not pairs:
        raise ValueError("pair policy produced no training pairs")
    store = ImageStore(manifest)

    optimizer = torch.optim.Adam(models.all_parameters(), lr=config.learning_rate)

    out_path = Path(out_dir) if out_dir is not None else None
    log_fh = None
    log_writer = None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        log_fh = open(out_path / "loss_log.csv", "w", newline="")
        log_writer = csv.writer(log_fh)
        log_writer.writerow(LOSS_LOG_FIELDS)

    history: list[dict] = []
    step = 0
    checkpoint_path = None
    try:
        for epoch in range(1, config.epochs + 1):
            models.repr_net.bounded = epoch <= config.bounded_epochs
            lr = learning_rate(config, epoch)
            for group in optimizer.param_groups:
                group["lr"] = lr

            order = np.random.default_rng((config.seed, epoch)).permutation(len(pairs))
            aug_gen = torch.Generator().manual_seed(config.seed * 100003 + epoch)
            aug_fn = None
            if config.augment_enabled:
                aug_fn = lambda imgs: augment(imgs, config.augment, aug_gen)

            for start in range(0, len(order), config.batch_size):
                batch_idx = order[start : start + config.batch_size]
                imgs_in = store.batch([pairs[i][0] for i in batch_idx])
                imgs_out = store.batch([pairs[i][1] for i in batch_idx])

                bundle = unsup_forward(models, imgs_in, imgs_out, augment_fn=aug_fn)
                breakdown = total_loss(
                    models.redir_net,
                    bundle,
                    imgs_out,
                    config.weights,
                    extractor,
                    config.squared_norms,
                )
                if not torch.isfinite(breakdown.total):
                    _dump_nonfinite(out_path, imgs_in, imgs_out, bundle, breakdown)
                    raise NonFiniteLossError(
                        f"non-finite loss at epoch {epoch} step {step}: "
                        f"{breakdown.to_floats()}"
                    )
                optimizer.zero_grad()
                breakdown.total.backward()
                optimizer.step()

                step += 1
                row = {"step": step, "epoch": epoch, **breakdown.to_floats(), "lr": lr}
                history.append(row)
                if log_writer is not None:
                    log_writer.writerow([row[k] for k in LOSS_LOG_FIELDS])

            if out_path is not None:
                checkpoint_path = save_checkpoint(
                    out_path / f"checkpoint_epoch{epoch:03d}.pt",
                    models,
                    config,
                    epoch=epoch,
                    bounded=models.repr_net.bounded,
                    optimizer=optimizer,
                    history=history,
                )
    finally:
        if log_fh is not None:
            log_fh.close()

    if out_path is not None:
        checkpoint_path = save_checkpoint(
            out_path / "checkpoint.pt",
            models,
            config,
            epoch=config.epochs,
            bounded=models.repr_net.bounded,
            optimizer=optimizer,
            history=history,
        )
    models.eval()
    return TrainResult(
        models=models,
        config=config,
        history=history,
        checkpoint_path=checkpoint_path,
        pairs_used=len(pairs),
        persons_skipped=skipped,
        digest=models_digest(models, history),
    )


def _dump_nonfinite(out_path, imgs_in, imgs_out, bundle, breakdown):
    if out_path is None:
        return
    torch.save(
        {
            "imgs_in": imgs_in,
            "imgs_out": imgs_out,
            "delta": bundle.delta.detach(),
            "field": bundle.field.detach(),
            "redirected": bundle.redirected.detach(),
            "breakdown": breakdown.to_floats(),
        },
        out_path / "nonfinite_batch.pt",
    )
