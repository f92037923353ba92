"""Run configuration: dataclass defaults, YAML round trip, flag overrides.

Config files are flat YAML mappings whose keys mirror ``TrainConfig`` field
names (nested blocks for weights / pair policy / augmentation). Command-line
flags override file values; see the annotated example in the README.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .data import AugmentRanges, PairPolicy
from .losses import LossWeights


@dataclass(frozen=True)
class TrainConfig:
    """Everything one unsupervised training run depends on."""

    # optimization schedule
    learning_rate: float = 1e-4
    batch_size: int = 16
    epochs: int = 10
    lr_halve_every: int = 3
    bounded_epochs: int = 2
    weights: LossWeights = field(default_factory=LossWeights)
    # model presets
    repr_preset: str = "resnet-small"
    repr_dim: int = 2
    image_size: tuple[int, int] = (32, 48)
    redir_widths: tuple[int, int, int] = (16, 32, 48)
    delta_channels: int = 16
    max_residual: float = 0.75
    # data
    pair_policy: PairPolicy = field(default_factory=lambda: PairPolicy(max_pairs=2400))
    augment: AugmentRanges = field(default_factory=AugmentRanges)
    augment_enabled: bool = True
    # perceptual backbone: fixed-seed random stack, or a VGG16 weight file
    extractor_seed: int = 0
    extractor_channels: tuple[int, int, int] = (12, 24, 48)
    vgg_weights: str | None = None
    squared_norms: bool = False
    seed: int = 0

    def __post_init__(self):
        if min(self.learning_rate, self.batch_size, self.epochs, self.lr_halve_every) <= 0:
            raise ValueError("learning rate, batch size, epochs, halving period must be positive")
        if not 0 <= self.bounded_epochs <= self.epochs:
            raise ValueError("bounded_epochs must lie within the epoch budget")
        if self.repr_dim not in (2, 3):
            raise ValueError("repr_dim must be 2 (gaze) or 3 (head pose)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["image_size"] = list(self.image_size)
        d["redir_widths"] = list(self.redir_widths)
        d["extractor_channels"] = list(self.extractor_channels)
        d["pair_policy"]["window"] = list(self.pair_policy.window)
        d["augment"]["scale"] = list(self.augment.scale)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(data)
        if "weights" in kwargs and not isinstance(kwargs["weights"], LossWeights):
            kwargs["weights"] = LossWeights(**kwargs["weights"])
        if "pair_policy" in kwargs and not isinstance(kwargs["pair_policy"], PairPolicy):
            pp = dict(kwargs["pair_policy"])
            if "window" in pp:
                pp["window"] = tuple(pp["window"])
            kwargs["pair_policy"] = PairPolicy(**pp)
        if "augment" in kwargs and not isinstance(kwargs["augment"], AugmentRanges):
            aug = dict(kwargs["augment"])
            if "scale" in aug:
                aug["scale"] = tuple(aug["scale"])
            kwargs["augment"] = AugmentRanges(**aug)
        for key in ("image_size", "redir_widths", "extractor_channels"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)

    def with_overrides(self, **overrides) -> "TrainConfig":
        cleaned = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, **cleaned)


def load_train_config(path: str | Path | None, **overrides) -> TrainConfig:
    """Build a TrainConfig from an optional YAML file plus flag overrides."""
    if path is None:
        return TrainConfig().with_overrides(**overrides)
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    return TrainConfig.from_dict(data).with_overrides(**overrides)


def save_train_config(config: TrainConfig, path: str | Path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=False)
