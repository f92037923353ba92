"""Deterministic parametric renderers for desk-scale eye and face datasets.

The eye renderer couples gaze to image structure the way real eyes move:
yaw translates the iris horizontally, pitch moves the iris vertically and
opens/closes the eyelids. The face renderer rotates a landmark rig under
pitch/yaw/roll with weak-perspective projection. Both give exact ground-truth
angles, which makes representation-vs-angle correlation claims testable
without gated datasets.

All rendering is pure: the same spec, appearance, and rng state give
bit-identical images.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .data import Manifest, SampleRecord


@dataclass(frozen=True)
class EyeAppearance:
    """Per-person eye geometry and shading, in units of image size."""

    iris_radius: float = 0.15  # fraction of width
    sclera_ax: float = 0.40  # horizontal semi-axis, fraction of width
    sclera_ay: float = 0.38  # vertical semi-axis, fraction of height
    lid_base: float = 0.30  # half-aperture of the lids, fraction of height
    lid_gain: float = 0.16  # aperture change over the full pitch range
    skin_level: float = 0.55
    sclera_level: float = 0.92
    iris_level: float = 0.28
    pupil_level: float = 0.06

    @classmethod
    def sample(cls, rng: np.random.Generator) -> "EyeAppearance":
        return cls(
            iris_radius=rng.uniform(0.13, 0.17),
            sclera_ax=rng.uniform(0.36, 0.44),
            sclera_ay=rng.uniform(0.35, 0.42),
            lid_base=rng.uniform(0.27, 0.33),
            lid_gain=rng.uniform(0.13, 0.18),
            skin_level=rng.uniform(0.45, 0.65),
            sclera_level=rng.uniform(0.85, 0.97),
            iris_level=rng.uniform(0.20, 0.36),
            pupil_level=rng.uniform(0.03, 0.10),
        )


@dataclass(frozen=True)
class FaceAppearance:
    """Per-person face rig: landmark offsets and shading levels."""

    face_radius: float = 0.42  # fraction of min(H, W)
    eye_dx: float = 0.38  # landmark coords relative to face radius
    eye_dy: float = -0.28
    nose_len: float = 0.30
    mouth_dy: float = 0.45
    skin_level: float = 0.62
    feature_level: float = 0.15
    background: float = 0.35

    @classmethod
    def sample(cls, rng: np.random.Generator) -> "FaceAppearance":
        return cls(
            face_radius=rng.uniform(0.38, 0.45),
            eye_dx=rng.uniform(0.33, 0.43),
            eye_dy=rng.uniform(-0.34, -0.22),
            nose_len=rng.uniform(0.24, 0.36),
            mouth_dy=rng.uniform(0.40, 0.52),
            skin_level=rng.uniform(0.55, 0.72),
            feature_level=rng.uniform(0.08, 0.22),
            background=rng.uniform(0.25, 0.45),
        )


@dataclass(frozen=True)
class RenderSpec:
    """Dataset geometry: image size, angle ranges, population, jitter."""

    kind: str = "eye"  # 'eye' or 'face'
    height: int = 32
    width: int = 48
    persons: int = 7
    frames_per_person: int = 400
    train_persons: int = 5
    pitch_range: float = 25.0  # degrees, symmetric
    yaw_range: float = 35.0
    roll_range: float = 30.0  # faces only
    max_iris_shift_x: float = 6.0  # pixels at the yaw range endpoint
    max_iris_shift_y: float = 5.0  # pixels at the pitch range endpoint
    jitter_translate_px: float = 2.0
    jitter_scale: float = 0.05

    def __post_init__(self):
        if self.kind not in ("eye", "face"):
            raise ValueError(f"unknown render kind {self.kind!r}")
        if self.height < 8 or self.width < 8:
            raise ValueError("image size too small to render")
        if self.train_persons >= self.persons:
            raise ValueError("need at least one held-out person")


# paper-scale sizes for reference runs on real-data geometries
PAPER_SIZE_SMALL = (36, 60)
PAPER_SIZE_LARGE = (60, 75)


@dataclass(frozen=True)
class Jitter:
    dx: float = 0.0
    dy: float = 0.0
    scale: float = 1.0

    @classmethod
    def sample(cls, spec: RenderSpec, rng: np.random.Generator) -> "Jitter":
        return cls(
            dx=rng.uniform(-spec.jitter_translate_px, spec.jitter_translate_px),
            dy=rng.uniform(-spec.jitter_translate_px, spec.jitter_translate_px),
            scale=1.0 + rng.uniform(-spec.jitter_scale, spec.jitter_scale),
        )


def _soft_inside(value: np.ndarray, edge: float = 1.0) -> np.ndarray:
    """1 inside (value <= 0), 0 outside, linear ramp of width `edge` pixels."""
    return np.clip(0.5 - value / edge, 0.0, 1.0)


def render_eye(
    pitch: float,
    yaw: float,
    app: EyeAppearance,
    spec: RenderSpec,
    jitter: Jitter = Jitter(),
) -> np.ndarray:
    """Render one eye image, float64 in [0, 1], shape (H, W).

    Iris horizontal offset is linear in yaw; iris vertical offset and lid
    aperture are linear in pitch (up-gaze moves the iris up and opens the
    lids). Jitter shifts and scales the whole scene.
    """
    if abs(pitch) > spec.pitch_range + 1e-9 or abs(yaw) > spec.yaw_range + 1e-9:
        raise ValueError(
            f"gaze ({pitch}, {yaw}) outside render range "
            f"(±{spec.pitch_range}, ±{spec.yaw_range})"
        )
    h, w = spec.height, spec.width
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    cx = (w - 1) / 2 + jitter.dx
    cy = (h - 1) / 2 + jitter.dy
    s = jitter.scale

    ax = app.sclera_ax * w * s
    ay = app.sclera_ay * h * s
    ri = app.iris_radius * w * s

    # eyelid aperture grows with pitch (looking up opens the eye)
    p_norm = pitch / spec.pitch_range
    y_norm = yaw / spec.yaw_range
    ap_top = (app.lid_base + app.lid_gain * p_norm) * h * s
    ap_bot = (app.lid_base * 0.85) * h * s

    # visible eye region: sclera ellipse clipped by the lid curves
    ell = ((xs - cx) / ax) ** 2 + ((ys - cy) / ay) ** 2 - 1.0
    eye_mask = _soft_inside(ell * min(ax, ay))  # rescale to ~pixel units
    lid_profile = 1.0 - np.clip(((xs - cx) / ax) ** 2, 0.0, 1.0)
    top_curve = cy - ap_top * lid_profile
    bot_curve = cy + ap_bot * lid_profile
    lid_mask = _soft_inside(top_curve - ys) * _soft_inside(ys - bot_curve)
    eye_mask = eye_mask * lid_mask

    # iris center: linear in the gaze angles, jitter-scaled like the geometry;
    # the excursion is clamped per appearance so the iris disc always stays
    # inside the sclera ellipse
    shift_x = min(spec.max_iris_shift_x * s, 0.9 * (ax - ri))
    shift_y = min(spec.max_iris_shift_y * s, 0.9 * (ay - ri))
    ix = cx + shift_x * y_norm
    iy = cy - shift_y * p_norm
    iris_d = np.hypot(xs - ix, ys - iy)
    iris_mask = _soft_inside(iris_d - ri)
    pupil_mask = _soft_inside(iris_d - 0.45 * ri)

    img = np.full((h, w), app.skin_level)
    inner = app.sclera_level + iris_mask * (app.iris_level - app.sclera_level)
    inner = inner + pupil_mask * (app.pupil_level - app.iris_level)
    img = img + eye_mask * (inner - img)
    return np.clip(img, 0.0, 1.0)


def _rotation(pitch_deg: float, yaw_deg: float, roll_deg: float) -> np.ndarray:
    """Head rotation, intrinsic yaw-pitch-roll; positive angles move the
    forward axis the same way positive gaze angles do."""
    p, y, r = (math.radians(a) for a in (pitch_deg, yaw_deg, roll_deg))
    ry = np.array([[math.cos(y), 0, -math.sin(y)], [0, 1, 0], [math.sin(y), 0, math.cos(y)]])
    rx = np.array([[1, 0, 0], [0, math.cos(p), math.sin(p)], [0, -math.sin(p), math.cos(p)]])
    rz = np.array([[math.cos(r), -math.sin(r), 0], [math.sin(r), math.cos(r), 0], [0, 0, 1]])
    return ry @ rx @ rz


def render_face(
    pitch: float,
    yaw: float,
    roll: float,
    app: FaceAppearance,
    spec: RenderSpec,
    jitter: Jitter = Jitter(),
) -> np.ndarray:
    """Render a face rig rotated by (pitch, yaw, roll), weak perspective."""
    h, w = spec.height, spec.width
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    cx = (w - 1) / 2 + jitter.dx
    cy = (h - 1) / 2 + jitter.dy
    radius = app.face_radius * min(h, w) * jitter.scale

    rot = _rotation(pitch, yaw, roll)
    # face disc: unit circle in the face plane maps to an ellipse under the
    # in-plane part of the rotation
    a2 = rot[:2, :2] * radius
    m = np.linalg.inv(a2 @ a2.T)
    px = xs - cx
    py = ys - cy
    quad = m[0, 0] * px**2 + 2 * m[0, 1] * px * py + m[1, 1] * py**2 - 1.0
    face_mask = _soft_inside(quad * radius * 0.5)

    def project(point):
        q = rot @ np.asarray(point, dtype=np.float64)
        return cx + q[0] * radius, cy + q[1] * radius

    img = np.full((h, w), app.background)
    shade = 0.85 + 0.15 * float(rot[2, 2])  # tilt darkens the face slightly
    img = img + face_mask * (app.skin_level * shade - img)

    # landmarks: two eyes, nose tip (off-plane, so it swings with pose), mouth
    blobs = [
        ((-app.eye_dx, app.eye_dy, 0.12), 0.11),
        ((app.eye_dx, app.eye_dy, 0.12), 0.11),
        ((0.0, 0.10, app.nose_len), 0.09),
        ((0.0, app.mouth_dy, 0.10), 0.14),
    ]
    for point, size in blobs:
        bx, by = project(point)
        d = np.hypot(xs - bx, ys - by)
        mask = _soft_inside(d - size * radius) * face_mask
        img = img + mask * (app.feature_level - img)
    return np.clip(img, 0.0, 1.0)


def locate_iris(img: np.ndarray) -> tuple[float, float]:
    """Darkness-weighted centroid (x, y) of the iris region; the renderer's
    own oracle for where the iris landed."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr.squeeze()
    weights = np.clip(0.5 - arr, 0.0, None) ** 2
    total = weights.sum()
    if total <= 0:
        return (arr.shape[1] - 1) / 2, (arr.shape[0] - 1) / 2
    ys, xs = np.mgrid[0 : arr.shape[0], 0 : arr.shape[1]]
    return float((weights * xs).sum() / total), float((weights * ys).sum() / total)


def _walk(rng: np.random.Generator, n: int, bound: float, step: float) -> np.ndarray:
    """Bounded random walk (reflecting), for temporally coherent sequences."""
    out = np.empty(n)
    x = rng.uniform(-bound, bound)
    for i in range(n):
        out[i] = x
        x += rng.normal(0.0, step)
        if x > bound:
            x = 2 * bound - x
        elif x < -bound:
            x = -2 * bound - x
    return out


def generate_dataset(spec: RenderSpec, out_dir: str | Path, seed: int = 0) -> Manifest:
    """Write PNG images plus a manifest with exact labels and a no-overlap
    person split. Re-running with the same seed is byte-identical."""
    out = Path(out_dir)
    image_dir = out / "images"
    image_dir.mkdir(parents=True, exist_ok=True)

    records = []
    for person in range(spec.persons):
        rng = np.random.default_rng(np.random.SeedSequence((seed, person)))
        split = "train" if person < spec.train_persons else "test"
        pid = f"p{person:03d}"
        if spec.kind == "eye":
            app = EyeAppearance.sample(rng)
            pitches = rng.uniform(-spec.pitch_range, spec.pitch_range, spec.frames_per_person)
            yaws = rng.uniform(-spec.yaw_range, spec.yaw_range, spec.frames_per_person)
        else:
            app = FaceAppearance.sample(rng)
            n = spec.frames_per_person
            pitches = _walk(rng, n, spec.pitch_range, spec.pitch_range / 6)
            yaws = _walk(rng, n, spec.yaw_range, spec.yaw_range / 6)
            rolls = _walk(rng, n, spec.roll_range, spec.roll_range / 6)

        for frame in range(spec.frames_per_person):
            jitter = Jitter.sample(spec, rng)
            if spec.kind == "eye":
                img = render_eye(pitches[frame], yaws[frame], app, spec, jitter)
                head_pose = (0.0, 0.0, 0.0)
                gaze = (float(pitches[frame]), float(yaws[frame]))
            else:
                img = render_face(
                    pitches[frame], yaws[frame], rolls[frame], app, spec, jitter
                )
                head_pose = (float(pitches[frame]), float(yaws[frame]), float(rolls[frame]))
                gaze = None
            rel_path = f"images/{pid}_f{frame:04d}.png"
            data = np.round(img * 255.0).astype(np.uint8)
            PILImage.fromarray(data, mode="L").save(out / rel_path)
            records.append(
                SampleRecord(
                    image_path=rel_path,
                    person_id=pid,
                    frame_index=frame,
                    head_pose=head_pose,
                    gaze=gaze,
                    split=split,
                )
            )

    manifest = Manifest(records, base_dir=out)
    manifest.save(out / "manifest.csv")
    return manifest
