"""Training objective: pixel, feature, style, and warp-regularization terms.

The total is ``pixel*lp + feature*lf + style*ls + warp_reg*lw``. The warp
regularizer re-runs the redirection decoder with each code dimension dropped
in turn and penalizes the motion component that should then vanish (against
the identity field) while pinning the other component to the main forward's
field. Its gradient reaches only the decoder parameters: the code delta, the
main field, and the encoder activations all enter as detached constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor

from .features import FeatureExtractor
from .models import ForwardBundle, RedirNet
from .warp import identity_field


@dataclass(frozen=True)
class LossWeights:
    pixel: float = 1.0
    feature: float = 0.02
    style: float = 0.1
    warp_reg: float = 0.25

    def __post_init__(self):
        if min(self.pixel, self.feature, self.style, self.warp_reg) < 0:
            raise ValueError("loss weights must be nonnegative")

    @classmethod
    def blurry(cls) -> "LossWeights":
        """Preset for blurry sources: pixel weight lowered to 0.2."""
        return cls(pixel=0.2)


@dataclass
class LossBreakdown:
    total: Tensor
    pixel: Tensor
    feature: Tensor
    style: Tensor
    warp_reg: Tensor

    def to_floats(self) -> dict[str, float]:
        return {
            "total": self.total.detach().item(),
            "pixel": self.pixel.detach().item(),
            "feature": self.feature.detach().item(),
            "style": self.style.detach().item(),
            "warp_reg": self.warp_reg.detach().item(),
        }


LOSS_LOG_FIELDS = ("step", "epoch", "total", "pixel", "feature", "style", "warp_reg", "lr")


def pixel_loss(img_a: Tensor, img_b: Tensor) -> Tensor:
    """Mean absolute intensity difference (L1 over all pixels and channels)."""
    if img_a.shape != img_b.shape:
        raise ValueError(f"shape mismatch {tuple(img_a.shape)} vs {tuple(img_b.shape)}")
    return (img_a - img_b).abs().mean()


def _tap_norm(diff: Tensor, squared: bool) -> Tensor:
    # diff: (B, ...) -> per-sample Euclidean norm of the flattened difference
    flat = diff.reshape(diff.shape[0], -1)
    norms = flat.norm(dim=1)
    return (norms**2 if squared else norms).mean()


def feature_loss(
    img_a: Tensor,
    img_b: Tensor,
    extractor: FeatureExtractor,
    squared: bool = False,
) -> Tensor:
    """Feature reconstruction distance over the extractor's three taps,
    each normalized by channel count times spatial size."""
    if img_a.ndim == 3:
        img_a, img_b = img_a.unsqueeze(0), img_b.unsqueeze(0)
    maps_a = extractor(img_a)
    maps_b = extractor(img_b)
    total = img_a.new_zeros(())
    for ma, mb in zip(maps_a, maps_b):
        channels = ma.shape[1]
        spatial = ma.shape[2] * ma.shape[3]
        total = total + _tap_norm(ma - mb, squared) / (channels * spatial)
    return total


def style_loss(
    img_a: Tensor,
    img_b: Tensor,
    extractor: FeatureExtractor,
    squared: bool = False,
) -> Tensor:
    """Gram-matrix distance over the extractor's taps, normalized by the
    squared channel count."""
    from .features import gram

    if img_a.ndim == 3:
        img_a, img_b = img_a.unsqueeze(0), img_b.unsqueeze(0)
    maps_a = extractor(img_a)
    maps_b = extractor(img_b)
    total = img_a.new_zeros(())
    for ma, mb in zip(maps_a, maps_b):
        channels = ma.shape[1]
        total = total + _tap_norm(gram(ma) - gram(mb), squared) / channels**2
    return total


def _detached_encoder_state(
    redir_net: RedirNet, aligned: Tensor, encoder_state
) -> tuple[Tensor, ...]:
    if encoder_state is None:
        with torch.no_grad():
            encoder_state = redir_net.encode(aligned.detach())
    return tuple(t.detach() for t in encoder_state)


def warp_reg_loss(
    redir_net: RedirNet,
    aligned: Tensor,
    delta: Tensor,
    field: Tensor,
    encoder_state=None,
) -> Tensor:
    """Representation-dropout regularizer for the 2-D gaze code.

    Dropping the second (yaw) component must leave the horizontal field at
    identity and the vertical field unchanged; dropping the first (pitch)
    component, symmetrically. Only decoder parameters receive gradient.
    """
    if delta.shape[-1] != 2:
        raise ValueError(
            "warp_reg_loss handles 2-D codes; use headpose_warp_reg_loss for 3-D"
        )
    delta = delta.detach()
    field = field.detach()
    state = _detached_encoder_state(redir_net, aligned, encoder_state)

    zeros = torch.zeros_like(delta[:, 0])
    keep_pitch = torch.stack([delta[:, 0], zeros], dim=1)
    keep_yaw = torch.stack([zeros, delta[:, 1]], dim=1)
    # one batched decoder pass covers both dropout patterns
    batch = delta.shape[0]
    doubled = tuple(torch.cat([t, t], dim=0) for t in state)
    fields = redir_net.decode(doubled, torch.cat([keep_pitch, keep_yaw], dim=0))
    field_kp, field_ky = fields[:batch], fields[batch:]

    h, w = field.shape[-2:]
    ident = identity_field(h, w, dtype=field.dtype, device=field.device)
    loss = (
        (field_kp[:, 0] - ident[0]).abs().mean()
        + (field_kp[:, 1] - field[:, 1]).abs().mean()
        + (field_ky[:, 1] - ident[1]).abs().mean()
        + (field_ky[:, 0] - field[:, 0]).abs().mean()
    )
    return loss


def total_loss(
    redir_net: RedirNet,
    bundle: ForwardBundle,
    target: Tensor,
    weights: LossWeights,
    extractor: FeatureExtractor,
    squared_norms: bool = False,
) -> LossBreakdown:
    """Weighted combination of all terms against the target image."""
    lp = pixel_loss(bundle.redirected, target)
    lf = feature_loss(bundle.redirected, target, extractor, squared_norms)
    ls = style_loss(bundle.redirected, target, extractor, squared_norms)
    if bundle.delta.shape[-1] == 2:
        lw = warp_reg_loss(
            redir_net, bundle.aligned, bundle.delta, bundle.field, bundle.encoder_state
        )
    else:
        from .headpose import headpose_warp_reg_loss

        lw = headpose_warp_reg_loss(
            redir_net, bundle.aligned, bundle.delta, bundle.field, bundle.encoder_state
        )
    total = weights.pixel * lp + weights.feature * lf + weights.style * ls + weights.warp_reg * lw
    return LossBreakdown(total=total, pixel=lp, feature=lf, style=ls, warp_reg=lw)
