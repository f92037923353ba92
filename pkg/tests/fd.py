"""Central finite-difference helpers shared by gradient-check tests."""

import numpy as np
import torch


def central_difference(fn, tensor, flat_index, h=1e-4):
    """FD of scalar fn at one coordinate of `tensor` (detached copies)."""
    base = tensor.detach().clone()
    flat = base.reshape(-1)
    flat[flat_index] += h
    plus = fn(base)
    flat[flat_index] -= 2 * h
    minus = fn(base)
    flat[flat_index] += h
    return (plus - minus) / (2 * h)


def assert_grad_matches_fd(
    fn,
    tensor,
    n_coords=30,
    h=1e-4,
    rtol=1e-5,
    seed=0,
    skip=None,
):
    """Compare autograd gradient of scalar fn(tensor) against central FD.

    `skip(plus_tensor, minus_tensor)` may veto coordinates whose perturbation
    crosses a non-differentiable point. Relative error uses the larger of the
    two magnitudes, floored at 1e-8.
    """
    leaf = tensor.detach().clone().requires_grad_(True)
    value = fn(leaf)
    (grad,) = torch.autograd.grad(value, leaf)
    rng = np.random.default_rng(seed)
    idxs = rng.choice(leaf.numel(), size=min(n_coords, leaf.numel()), replace=False)
    checked = 0
    for idx in idxs:
        base = leaf.detach().clone()
        flat = base.reshape(-1)
        flat[idx] += h
        plus_t = base
        base2 = leaf.detach().clone()
        base2.reshape(-1)[idx] -= h
        minus_t = base2
        if skip is not None and skip(plus_t, minus_t):
            continue
        fd = (fn(plus_t) - fn(minus_t)).item() / (2 * h)
        an = grad.reshape(-1)[idx].item()
        denom = max(abs(fd), abs(an), 1e-8)
        assert abs(fd - an) / denom < rtol, (idx, fd, an)
        checked += 1
    assert checked >= n_coords // 2, "too many coordinates skipped as kinks"
