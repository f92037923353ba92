"""Differentiable inverse-warping primitives.

A warping field stores, for every output pixel, the normalized coordinate at
which the source image is sampled. Coordinates follow the align-corners
convention: -1 is the center of the first pixel, +1 the center of the last.
Fields are tensors of shape (2, H, W) or (B, 2, H, W); channel 0 holds the
horizontal coordinate, channel 1 the vertical one.

Out-of-range coordinates are resolved by border replication, so sampled
intensities stay inside the input's value range.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor


class WarpError(ValueError):
    """Invalid warp geometry (bad dimensions, scale, or shapes)."""


@dataclass(frozen=True)
class AlignParams:
    """Global motion parameters: translation in normalized units, relative scale."""

    tx: float
    ty: float
    scale: float

    def __post_init__(self):
        if not self.scale > 0:
            raise WarpError(f"scale must be positive, got {self.scale}")
        if abs(self.tx) > 1 or abs(self.ty) > 1:
            raise WarpError(f"|tx|, |ty| must be <= 1, got ({self.tx}, {self.ty})")


def identity_field(
    height: int,
    width: int,
    *,
    dtype: torch.dtype = torch.float32,
    device: torch.device | str | None = None,
) -> Tensor:
    """Field that reproduces the input exactly: coordinate of each pixel center.

    Returns a (2, height, width) tensor.
    """
    if height < 2 or width < 2:
        raise WarpError(f"field dimensions must be >= 2, got {height}x{width}")
    xs = torch.linspace(-1.0, 1.0, width, dtype=dtype, device=device)
    ys = torch.linspace(-1.0, 1.0, height, dtype=dtype, device=device)
    grid_y, grid_x = torch.meshgrid(ys, xs, indexing="ij")
    return torch.stack([grid_x, grid_y], dim=0)


def affine_field(
    tx: float | Tensor,
    ty: float | Tensor,
    scale: float | Tensor,
    height: int,
    width: int,
    *,
    dtype: torch.dtype = torch.float32,
    device: torch.device | str | None = None,
) -> Tensor:
    """Field sampling at (scale * x + tx, scale * y + ty) for output coord (x, y).

    Scalars give a (2, H, W) field; 1-D tensors of batch size B give
    (B, 2, H, W) and keep gradient flow into the parameters. (0, 0, 1) is the
    identity field.
    """
    params = [torch.as_tensor(p) for p in (tx, ty, scale)]
    batched = any(p.ndim > 0 for p in params)
    if batched:
        tx_t, ty_t, s_t = (p.reshape(-1) for p in params)
        if dtype is not None and not s_t.is_floating_point():
            tx_t, ty_t, s_t = tx_t.to(dtype), ty_t.to(dtype), s_t.to(dtype)
        dtype = s_t.dtype
        device = s_t.device
    else:
        tx_t, ty_t, s_t = (p.to(dtype) for p in params)
    with torch.no_grad():
        bad = (s_t <= 0).any() if batched else s_t.item() <= 0
    if bad:
        raise WarpError("scale must be positive")

    base = identity_field(height, width, dtype=dtype, device=device)
    if not batched:
        field = base * s_t
        field[0] = field[0] + tx_t
        field[1] = field[1] + ty_t
        return field
    shift = torch.stack([tx_t, ty_t], dim=1)  # (B, 2)
    return base.unsqueeze(0) * s_t.view(-1, 1, 1, 1) + shift.view(-1, 2, 1, 1)


def field_from_align_params(params: AlignParams, height: int, width: int, **kw) -> Tensor:
    return affine_field(params.tx, params.ty, params.scale, height, width, **kw)


def sample(image: Tensor, field: Tensor) -> Tensor:
    """Bilinear inverse warp of `image` at the field's coordinates.

    image: (C, H, W) or (B, C, H, W); field: (2, Ho, Wo) or (B, 2, Ho, Wo).
    Output has the field's spatial shape. Each channel is interpolated
    independently; coordinates beyond [-1, 1] clamp to the border. The result
    is differentiable with respect to both the image and the field.
    """
    squeeze = image.ndim == 3
    if squeeze:
        image = image.unsqueeze(0)
    if field.ndim == 3:
        field = field.unsqueeze(0)
    if image.ndim != 4 or field.ndim != 4 or field.shape[1] != 2:
        raise WarpError(
            f"expected image (B,C,H,W) and field (B,2,Ho,Wo), got {tuple(image.shape)} "
            f"and {tuple(field.shape)}"
        )
    if field.shape[0] != image.shape[0]:
        if field.shape[0] == 1:
            field = field.expand(image.shape[0], -1, -1, -1)
        elif image.shape[0] == 1:
            image = image.expand(field.shape[0], -1, -1, -1)
        else:
            raise WarpError(
                f"batch mismatch: image {image.shape[0]} vs field {field.shape[0]}"
            )

    batch, channels, height, width = image.shape
    out_h, out_w = field.shape[2], field.shape[3]

    # Normalized -> pixel coordinates, clamped for border replication.
    x = (field[:, 0] + 1.0) * 0.5 * (width - 1)
    y = (field[:, 1] + 1.0) * 0.5 * (height - 1)
    x = x.clamp(0.0, float(width - 1))
    y = y.clamp(0.0, float(height - 1))
    # Coordinates within 1e-6 px of a pixel center snap to it, so identity
    # fields reproduce the input bit-exactly despite normalization roundoff.
    # The snap is a constant offset: gradients are those of the snapped point.
    with torch.no_grad():
        dx = x.round() - x
        dy = y.round() - y
        dx = torch.where(dx.abs() < 1e-6, dx, torch.zeros_like(dx))
        dy = torch.where(dy.abs() < 1e-6, dy, torch.zeros_like(dy))
    x = x + dx
    y = y + dy

    x0 = x.floor()
    y0 = y.floor()
    wx = x - x0  # interpolation weights carry the field gradient
    wy = y - y0
    ix0 = x0.long()
    iy0 = y0.long()
    ix1 = (ix0 + 1).clamp(max=width - 1)
    iy1 = (iy0 + 1).clamp(max=height - 1)

    flat = image.reshape(batch, channels, height * width)

    def gather(iy: Tensor, ix: Tensor) -> Tensor:
        idx = (iy * width + ix).reshape(batch, 1, out_h * out_w)
        idx = idx.expand(-1, channels, -1)
        return flat.gather(2, idx).reshape(batch, channels, out_h, out_w)

    v00 = gather(iy0, ix0)
    v01 = gather(iy0, ix1)
    v10 = gather(iy1, ix0)
    v11 = gather(iy1, ix1)

    wx = wx.unsqueeze(1)
    wy = wy.unsqueeze(1)
    top = v00 + wx * (v01 - v00)
    bottom = v10 + wx * (v11 - v10)
    out = top + wy * (bottom - top)
    return out.squeeze(0) if squeeze else out
