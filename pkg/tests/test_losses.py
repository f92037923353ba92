import numpy as np
import pytest
import torch

from fd import assert_grad_matches_fd
from gazerep.features import FeatureExtractor, gram
from gazerep.losses import (
    LossBreakdown,
    LossWeights,
    feature_loss,
    pixel_loss,
    style_loss,
    total_loss,
    warp_reg_loss,
)
from gazerep.models import build_models, unsup_forward
from gazerep.warp import identity_field


@pytest.fixture(scope="module")
def extractor():
    return FeatureExtractor.random(seed=0, channels=(4, 6, 8))


def _pair(h=12, w=16, seed=0):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(1, 1, h, w, generator=g), torch.rand(1, 1, h, w, generator=g)


# ---------------------------------------------------------------- pixel loss


def test_pixel_loss_identical_zero():
    a, _ = _pair()
    assert pixel_loss(a, a).item() == 0.0


def test_pixel_loss_constant_offset():
    a, _ = _pair()
    b = a + 0.1
    assert abs(pixel_loss(a, b).item() - 0.1) < 1e-6


def test_pixel_loss_symmetric():
    a, b = _pair(seed=1)
    assert pixel_loss(a, b).item() == pytest.approx(pixel_loss(b, a).item())


def test_pixel_loss_shape_mismatch():
    with pytest.raises(ValueError):
        pixel_loss(torch.zeros(1, 1, 4, 4), torch.zeros(1, 1, 4, 5))


# ------------------------------------------------------- feature/style loss


def test_feature_loss_identical_zero(extractor):
    a, _ = _pair()
    assert feature_loss(a, a, extractor).item() == 0.0


def test_feature_loss_nonnegative(extractor):
    for seed in range(5):
        a, b = _pair(seed=seed)
        assert feature_loss(a, b, extractor).item() >= 0


def test_feature_loss_matches_numpy_oracle(extractor):
    a, b = _pair(seed=2)
    got = feature_loss(a, b, extractor).item()
    expected = 0.0
    for ma, mb in zip(extractor(a), extractor(b)):
        da = ma[0].numpy().astype(np.float64)
        db = mb[0].numpy().astype(np.float64)
        c, s = da.shape[0], da.shape[1] * da.shape[2]
        expected += np.linalg.norm((da - db).ravel()) / (c * s)
    assert got == pytest.approx(expected, rel=1e-5)


def test_style_loss_identical_zero(extractor):
    a, _ = _pair()
    assert style_loss(a, a, extractor).item() == 0.0


def test_style_loss_matches_numpy_oracle(extractor):
    a, b = _pair(seed=3)
    got = style_loss(a, b, extractor).item()
    expected = 0.0
    for ma, mb in zip(extractor(a), extractor(b)):
        da = ma[0].numpy().astype(np.float64).reshape(ma.shape[1], -1)
        db = mb[0].numpy().astype(np.float64).reshape(mb.shape[1], -1)
        ga = da @ da.T / da.shape[1]
        gb = db @ db.T / db.shape[1]
        expected += np.linalg.norm((ga - gb).ravel()) / da.shape[0] ** 2
    assert got == pytest.approx(expected, rel=1e-5)


# --------------------------------------------------------------- warp reg


class StubRedir:
    """Decoder stub returning canned fields keyed by the dropout pattern
    (rows with the yaw component zeroed get the keep-pitch field)."""

    def __init__(self, keep_pitch_field, keep_yaw_field):
        self.keep_pitch_field = keep_pitch_field
        self.keep_yaw_field = keep_yaw_field

    def decode(self, state, delta):
        rows = [
            self.keep_pitch_field if d[1] == 0 else self.keep_yaw_field for d in delta
        ]
        return torch.cat(rows, dim=0)


def _dummy_state():
    return (torch.zeros(1), torch.zeros(1))


def test_warp_reg_consistent_stub_is_zero():
    ident = identity_field(6, 8).unsqueeze(0)
    main = ident + 0.2
    stub = StubRedir(
        keep_pitch_field=torch.stack([ident[:, 0], main[:, 1]], dim=1),
        keep_yaw_field=torch.stack([main[:, 0], ident[:, 1]], dim=1),
    )
    delta = torch.tensor([[0.3, -0.4]])
    loss = warp_reg_loss(stub, torch.zeros(1, 1, 6, 8), delta, main, _dummy_state())
    assert loss.item() == 0.0


def test_warp_reg_offset_stub_closed_form():
    eps, c = 0.05, 0.3
    ident = identity_field(6, 8).unsqueeze(0)
    main = ident + c
    stub = StubRedir(keep_pitch_field=ident + eps, keep_yaw_field=ident + eps)
    delta = torch.tensor([[0.3, -0.4]])
    loss = warp_reg_loss(stub, torch.zeros(1, 1, 6, 8), delta, main, _dummy_state())
    assert loss.item() == pytest.approx(2 * eps + 2 * abs(eps - c), rel=1e-6)


def test_warp_reg_rejects_3d_delta():
    ident = identity_field(6, 8).unsqueeze(0)
    stub = StubRedir(ident, ident)
    with pytest.raises(ValueError):
        warp_reg_loss(stub, torch.zeros(1, 1, 6, 8), torch.zeros(1, 3), ident, _dummy_state())


def test_warp_reg_gradient_only_reaches_decoder():
    torch.manual_seed(0)
    models = build_models(input_size=(16, 24))
    g = torch.Generator().manual_seed(1)
    a = torch.rand(2, 1, 16, 24, generator=g)
    b = torch.rand(2, 1, 16, 24, generator=g)
    bundle = unsup_forward(models, a, b)
    loss = warp_reg_loss(
        models.redir_net, bundle.aligned, bundle.delta, bundle.field, bundle.encoder_state
    )
    for p in models.all_parameters():
        p.grad = None
    loss.backward()

    def all_exactly_zero(params):
        return all(p.grad is None or bool((p.grad == 0).all()) for p in params)

    assert all_exactly_zero(models.repr_net.parameters())
    assert all_exactly_zero(models.align_net.parameters())
    assert all_exactly_zero(models.redir_net.encoder_parameters())
    dec_norm = sum(
        p.grad.abs().sum().item()
        for p in models.redir_net.decoder_parameters()
        if p.grad is not None
    )
    assert dec_norm > 0


# --------------------------------------------------------------- total loss


def test_total_loss_zero_weights(extractor):
    torch.manual_seed(1)
    models = build_models(input_size=(16, 24))
    g = torch.Generator().manual_seed(2)
    a = torch.rand(2, 1, 16, 24, generator=g)
    b = torch.rand(2, 1, 16, 24, generator=g)
    bundle = unsup_forward(models, a, b)
    weights = LossWeights(0.0, 0.0, 0.0, 0.0)
    breakdown = total_loss(models.redir_net, bundle, b, weights, extractor)
    assert breakdown.total.item() == 0.0


def test_default_weights_match_configuration():
    w = LossWeights()
    assert (w.pixel, w.feature, w.style, w.warp_reg) == (1.0, 0.02, 0.1, 0.25)


def test_blurry_preset_lowers_pixel_weight():
    w = LossWeights.blurry()
    assert w.pixel == 0.2
    assert (w.feature, w.style, w.warp_reg) == (0.02, 0.1, 0.25)


def test_negative_weights_rejected():
    with pytest.raises(ValueError):
        LossWeights(pixel=-1.0)


def test_breakdown_consistency(extractor):
    torch.manual_seed(2)
    models = build_models(input_size=(16, 24))
    g = torch.Generator().manual_seed(3)
    a = torch.rand(2, 1, 16, 24, generator=g)
    b = torch.rand(2, 1, 16, 24, generator=g)
    bundle = unsup_forward(models, a, b)
    w = LossWeights()
    bd = total_loss(models.redir_net, bundle, b, w, extractor)
    recomputed = (
        w.pixel * bd.pixel + w.feature * bd.feature + w.style * bd.style + w.warp_reg * bd.warp_reg
    )
    assert abs(bd.total.item() - recomputed.item()) <= 1e-10 * max(abs(bd.total.item()), 1e-12)


# ---------------------------------------------------------- gradient checks


def test_pixel_loss_gradient_fd():
    g = torch.Generator().manual_seed(4)
    a = torch.rand(1, 1, 8, 12, generator=g, dtype=torch.float64)
    b = torch.rand(1, 1, 8, 12, generator=g, dtype=torch.float64)
    # keep |a - b| away from the L1 kink at zero
    mask = (a - b).abs() < 1e-3
    b = torch.where(mask, b + 2e-3, b)
    assert_grad_matches_fd(lambda x: pixel_loss(x, b), a, n_coords=25)


def _double_extractor():
    ext = FeatureExtractor.random(seed=5, channels=(3, 4, 5))
    return ext.double()


def _relu_sign_signature(extractor, img):
    signs = []
    x = img.unsqueeze(0) if img.ndim == 3 else img
    if x.shape[1] == 1:
        x = x.expand(-1, extractor.in_channels, -1, -1)
    for module in extractor.layers:
        if isinstance(module, torch.nn.ReLU):
            signs.append(x.reshape(-1) > 0)
        x = module(x)
    return torch.cat(signs)


def _relu_kink_skip(extractor):
    def skip(plus_t, minus_t):
        sp = _relu_sign_signature(extractor, plus_t)
        sm = _relu_sign_signature(extractor, minus_t)
        return bool((sp != sm).any())

    return skip


def test_feature_loss_gradient_fd():
    ext = _double_extractor()
    g = torch.Generator().manual_seed(6)
    a = torch.rand(1, 1, 8, 12, generator=g, dtype=torch.float64)
    b = torch.rand(1, 1, 8, 12, generator=g, dtype=torch.float64)
    assert_grad_matches_fd(
        lambda x: feature_loss(x, b, ext), a, n_coords=20, skip=_relu_kink_skip(ext)
    )


def test_style_loss_gradient_fd():
    ext = _double_extractor()
    g = torch.Generator().manual_seed(7)
    a = torch.rand(1, 1, 8, 12, generator=g, dtype=torch.float64)
    b = torch.rand(1, 1, 8, 12, generator=g, dtype=torch.float64)
    assert_grad_matches_fd(
        lambda x: style_loss(x, b, ext), a, n_coords=20, skip=_relu_kink_skip(ext)
    )
