"""Head-pose extension: 3-D codes (pitch, yaw, roll) and their dropout scheme.

The regularizer keeps one rotation-related component at a time: dropping
{yaw, roll} (keeping pitch) must leave the horizontal field at identity,
dropping {pitch, roll} (keeping yaw) must leave the vertical field at
identity; the untouched component is pinned to the main forward's field in
each case. Roll never gets a dedicated term, so no structure is promised for
the roll code.
"""

from __future__ import annotations

import torch
from torch import Tensor

from .models import RedirNet
from .warp import identity_field


def headpose_warp_reg_loss(
    redir_net: RedirNet,
    aligned: Tensor,
    delta: Tensor,
    field: Tensor,
    encoder_state=None,
) -> Tensor:
    """Dropout regularizer for 3-D codes. Gradient reaches only the decoder."""
    from .losses import _detached_encoder_state

    if delta.shape[-1] != 3:
        raise ValueError("headpose_warp_reg_loss requires a 3-D code delta")
    delta = delta.detach()
    field = field.detach()
    state = _detached_encoder_state(redir_net, aligned, encoder_state)

    zeros = torch.zeros_like(delta[:, 0])
    keep_pitch = torch.stack([delta[:, 0], zeros, zeros], dim=1)
    keep_yaw = torch.stack([zeros, delta[:, 1], zeros], dim=1)
    batch = delta.shape[0]
    doubled = tuple(torch.cat([t, t], dim=0) for t in state)
    fields = redir_net.decode(doubled, torch.cat([keep_pitch, keep_yaw], dim=0))
    field_kp, field_ky = fields[:batch], fields[batch:]

    h, w = field.shape[-2:]
    ident = identity_field(h, w, dtype=field.dtype, device=field.device)
    return (
        (field_kp[:, 0] - ident[0]).abs().mean()
        + (field_kp[:, 1] - field[:, 1]).abs().mean()
        + (field_ky[:, 1] - ident[1]).abs().mean()
        + (field_ky[:, 0] - field[:, 0]).abs().mean()
    )
