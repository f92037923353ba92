"""Dataset contract: manifests, pair sampling, augmentation, image loading.

A manifest is a CSV with one record per line:

    image_path,person_id,frame_index,head_pitch,head_yaw,head_roll,gaze_pitch,gaze_yaw,split

``image_path`` is resolved relative to the manifest's directory. Gaze columns
may be empty (unlabeled data). ``split`` is ``train`` or ``test`` with no
person appearing in both.

Unsupervised training must never read gaze labels; ``Manifest.guarded()``
replaces every gaze field with a sentinel that raises ``LabelAccessError`` on
any use, which tests rely on to prove the contract.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch
from PIL import Image as PILImage
from torch import Tensor

from .warp import affine_field, sample

MANIFEST_FIELDS = (
    "image_path",
    "person_id",
    "frame_index",
    "head_pitch",
    "head_yaw",
    "head_roll",
    "gaze_pitch",
    "gaze_yaw",
    "split",
)


class LabelAccessError(RuntimeError):
    """A gaze label was touched from a context that must stay unsupervised."""


class _GuardedLabel:
    """Sentinel standing in for a gaze label under the access guard."""

    def _blocked(self, *args, **kwargs):
        raise LabelAccessError("gaze labels are guarded during unsupervised training")

    __iter__ = _blocked
    __getitem__ = _blocked
    __float__ = _blocked
    __len__ = _blocked
    __eq__ = _blocked
    __bool__ = _blocked

    def __repr__(self):
        return "<guarded gaze label>"


GUARDED_LABEL = _GuardedLabel()


@dataclass(frozen=True)
class SampleRecord:
    image_path: str
    person_id: str
    frame_index: int
    head_pose: tuple[float, float, float]
    gaze: tuple[float, float] | None | _GuardedLabel
    split: str = "train"


class Manifest:
    """An ordered collection of sample records plus their base directory."""

    def __init__(self, records: list[SampleRecord], base_dir: str | Path = "."):
        self.records = list(records)
        self.base_dir = Path(base_dir)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @classmethod
    def load(cls, path: str | Path) -> "Manifest":
        path = Path(path)
        records = []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = set(MANIFEST_FIELDS) - set(reader.fieldnames or ())
            if missing:
                raise ValueError(f"manifest {path} missing columns: {sorted(missing)}")
            for row in reader:
                gaze = None
                if row["gaze_pitch"] != "" and row["gaze_yaw"] != "":
                    gaze = (float(row["gaze_pitch"]), float(row["gaze_yaw"]))
                records.append(
                    SampleRecord(
                        image_path=row["image_path"],
                        person_id=row["person_id"],
                        frame_index=int(row["frame_index"]),
                        head_pose=(
                            float(row["head_pitch"]),
                            float(row["head_yaw"]),
                            float(row["head_roll"]),
                        ),
                        gaze=gaze,
                        split=row["split"],
                    )
                )
        return cls(records, base_dir=path.parent)

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(MANIFEST_FIELDS)
            for rec in self.records:
                gaze = rec.gaze
                if isinstance(gaze, _GuardedLabel):
                    raise LabelAccessError("cannot serialize a guarded manifest")
                gp, gy = ("", "") if gaze is None else (repr(gaze[0]), repr(gaze[1]))
                writer.writerow(
                    [
                        rec.image_path,
                        rec.person_id,
                        rec.frame_index,
                        repr(rec.head_pose[0]),
                        repr(rec.head_pose[1]),
                        repr(rec.head_pose[2]),
                        gp,
                        gy,
                        rec.split,
                    ]
                )

    def split(self, name: str) -> "Manifest":
        return Manifest([r for r in self.records if r.split == name], self.base_dir)

    def persons(self) -> list[str]:
        return sorted({r.person_id for r in self.records})

    def guarded(self) -> "Manifest":
        return Manifest(
            [replace(r, gaze=GUARDED_LABEL) for r in self.records], self.base_dir
        )

    def resolve(self, record: SampleRecord) -> Path:
        p = Path(record.image_path)
        return p if p.is_absolute() else self.base_dir / p


def load_image(path: str | Path) -> Tensor:
    """Load a grayscale image as a (1, H, W) float32 tensor in [0, 1]."""
    with PILImage.open(path) as img:
        arr = np.asarray(img.convert("L"), dtype=np.float32) / 255.0
    return torch.from_numpy(arr).unsqueeze(0)


class ImageStore:
    """In-memory image cache keyed by resolved path (desk-scale datasets fit)."""

    def __init__(self, manifest: Manifest):
        self.manifest = manifest
        self._cache: dict[str, Tensor] = {}

    def get(self, record: SampleRecord) -> Tensor:
        key = str(self.manifest.resolve(record))
        if key not in self._cache:
            self._cache[key] = load_image(key)
        return self._cache[key]

    def batch(self, records) -> Tensor:
        return torch.stack([self.get(r) for r in records])


@dataclass(frozen=True)
class PairPolicy:
    """How unsupervised training pairs are drawn.

    ``random`` pairs any two frames of one person whose head poses differ by
    at most ``head_pose_max_deg``; ``temporal`` pairs frames of one person
    whose index gap lies inside ``window``.
    """

    mode: str = "random"
    window: tuple[int, int] = (10, 20)
    max_pairs: int = 200_000
    head_pose_max_deg: float = 10.0

    def __post_init__(self):
        if self.mode not in ("random", "temporal"):
            raise ValueError(f"unknown pair mode {self.mode!r}")
        if self.window[0] > self.window[1] or self.window[0] < 1:
            raise ValueError(f"bad temporal window {self.window}")
        if self.max_pairs < 1:
            raise ValueError("max_pairs must be positive")


def _pose_distance(a: SampleRecord, b: SampleRecord) -> float:
    return math.dist(a.head_pose, b.head_pose)


def sample_pairs(
    manifest: Manifest, policy: PairPolicy, seed: int = 0
) -> tuple[list[tuple[SampleRecord, SampleRecord]], int]:
    """Draw up to ``max_pairs`` same-person pairs per the policy.

    Deterministic for a fixed seed. Returns the pair list and the number of
    persons skipped for having no admissible partner.
    """
    if len(manifest) == 0:
        raise ValueError("manifest is empty")
    rng = np.random.default_rng(seed)
    by_person: dict[str, list[SampleRecord]] = {}
    for rec in manifest:
        by_person.setdefault(rec.person_id, []).append(rec)

    candidates: list[tuple[SampleRecord, SampleRecord]] = []
    skipped = 0
    for person in sorted(by_person):
        recs = sorted(by_person[person], key=lambda r: r.frame_index)
        found = []
        if policy.mode == "temporal":
            lo, hi = policy.window
            by_frame = {r.frame_index: r for r in recs}
            for r in recs:
                for gap in range(lo, hi + 1):
                    other = by_frame.get(r.frame_index + gap)
                    if other is not None:
                        found.append((r, other))
                        found.append((other, r))
        else:
            for i, r in enumerate(recs):
                for other in recs[i + 1 :]:
                    if _pose_distance(r, other) <= policy.head_pose_max_deg:
                        found.append((r, other))
                        found.append((other, r))
        if not found:
            skipped += 1
        candidates.extend(found)

    if not candidates:
        return [], skipped
    if len(candidates) > policy.max_pairs:
        idx = rng.choice(len(candidates), size=policy.max_pairs, replace=False)
        pairs = [candidates[i] for i in sorted(idx)]
        order = rng.permutation(len(pairs))
        pairs = [pairs[i] for i in order]
    else:
        order = rng.permutation(len(candidates))
        pairs = [candidates[i] for i in order]
    return pairs, skipped


@dataclass(frozen=True)
class AugmentRanges:
    """Random-perturbation ranges: translation as a fraction of image size,
    scale as a multiplicative interval."""

    max_translate: float = 0.10
    scale: tuple[float, float] = (0.9, 1.1)

    def __post_init__(self):
        if self.max_translate < 0 or self.scale[0] <= 0 or self.scale[0] > self.scale[1]:
            raise ValueError(f"bad augmentation ranges {self}")


def augment(images: Tensor, ranges: AugmentRanges, generator: torch.Generator) -> Tensor:
    """Random per-image translation and scaling via the warp primitives."""
    squeeze = images.ndim == 3
    if squeeze:
        images = images.unsqueeze(0)
    b, _, h, w = images.shape

    def uniform(lo, hi):
        return torch.rand(b, generator=generator) * (hi - lo) + lo

    # fraction of image size -> normalized units (the image spans 2 units)
    tx = uniform(-ranges.max_translate, ranges.max_translate) * 2.0 * w / (w - 1)
    ty = uniform(-ranges.max_translate, ranges.max_translate) * 2.0 * h / (h - 1)
    scale = uniform(*ranges.scale)
    field = affine_field(tx, ty, scale, h, w)
    out = sample(images, field)
    return out.squeeze(0) if squeeze else out
