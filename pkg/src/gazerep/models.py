"""The three trainable networks and their composed unsupervised forward pass.

* ``GazeRepNet`` maps an eye (or face) image to a d-dimensional code. During
  the first training epochs the output is squashed into (-1, 1) by tanh; the
  squashing is later removed, leaving the same affine head as a pure linear
  projection (the ``bounded`` flag).
* ``AlignNet`` predicts translation + relative scale between two images via
  weight-shared branches and resamples the first onto the second.
* ``RedirNet`` is an encoder-decoder predicting a dense warping field from an
  aligned image and a code difference injected at the bottleneck. The decoder
  emits a bounded residual added to the identity field, so an untrained
  network warps by exactly the identity.

Architecture presets approximate the intent of small research models at desk
scale; exact layer plans live here and channel widths are recorded in
checkpoints.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .warp import affine_field, identity_field, sample

PRESETS_REPR = ("resnet-small", "mnistnet")


def _gn(channels: int) -> nn.GroupNorm:
    groups = 4 if channels % 4 == 0 else 1
    return nn.GroupNorm(groups, channels)


class ResidualBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=1)
        self.norm1 = _gn(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.norm2 = _gn(cout)
        self.act = nn.ReLU()
        if stride != 1 or cin != cout:
            self.proj = nn.Conv2d(cin, cout, 1, stride=stride)
        else:
            self.proj = nn.Identity()

    def forward(self, x: Tensor) -> Tensor:
        h = self.act(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        return self.act(h + self.proj(x))


class GazeRepNet(nn.Module):
    """Representation network G: image -> d-dim code, optionally tanh-bounded."""

    def __init__(
        self,
        preset: str = "resnet-small",
        repr_dim: int = 2,
        in_channels: int = 1,
        input_size: tuple[int, int] = (32, 48),
        bounded: bool = True,
    ):
        super().__init__()
        self.preset = preset
        self.repr_dim = repr_dim
        self.bounded = bounded
        if preset == "resnet-small":
            self.body = nn.Sequential(
                nn.Conv2d(in_channels, 16, 3, padding=1),
                _gn(16),
                nn.ReLU(),
                ResidualBlock(16, 16, stride=2),
                ResidualBlock(16, 24, stride=2),
                ResidualBlock(24, 32, stride=2),
                ResidualBlock(32, 32),
                nn.AdaptiveAvgPool2d(1),
                nn.Flatten(),
            )
            feat_dim = 32
        elif preset == "mnistnet":
            h, w = input_size
            fh, fw = (h - 4) // 2, (w - 4) // 2
            fh, fw = (fh - 4) // 2, (fw - 4) // 2
            self.body = nn.Sequential(
                nn.Conv2d(in_channels, 20, 5),
                nn.ReLU(),
                nn.MaxPool2d(2),
                nn.Conv2d(20, 50, 5),
                nn.ReLU(),
                nn.MaxPool2d(2),
                nn.Flatten(),
                nn.Linear(50 * fh * fw, 128),
                nn.ReLU(),
            )
            feat_dim = 128
        else:
            raise ValueError(f"unknown representation preset {preset!r}")
        self.head = nn.Linear(feat_dim, repr_dim)

    def forward(self, x: Tensor) -> Tensor:
        out = self.head(self.body(x))
        return torch.tanh(out) if self.bounded else out


class AlignNet(nn.Module):
    """Alignment network A: (I_i, I_o) -> global translation + relative scale.

    Both images pass through the same branch (shared weights); the final head
    is zero-initialized so the untrained network predicts the identity motion
    (tx, ty, scale) = (0, 0, 1).
    """

    def __init__(
        self,
        in_channels: int = 1,
        max_shift: float = 0.5,
        log_scale_range: float = 0.4,
    ):
        super().__init__()
        self.max_shift = max_shift
        self.log_scale_range = log_scale_range
        self.branch = nn.Sequential(
            nn.Conv2d(in_channels, 12, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(12, 24, 3, stride=2, padding=1),
            nn.ReLU(),
        )
        self.merge = nn.Sequential(
            nn.Conv2d(48, 32, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.AdaptiveAvgPool2d(1),
            nn.Flatten(),
            nn.Linear(32, 32),
            nn.ReLU(),
        )
        # small head init: near-identity motion at start, but gradients still
        # reach the branches
        self.head = nn.Linear(32, 3)
        nn.init.normal_(self.head.weight, std=1e-3)
        nn.init.zeros_(self.head.bias)

    def forward(self, img_in: Tensor, img_out: Tensor) -> Tensor:
        if img_in.shape != img_out.shape:
            raise ValueError(
                f"aligned pair must share a shape, got {tuple(img_in.shape)} "
                f"vs {tuple(img_out.shape)}"
            )
        feats = torch.cat([self.branch(img_in), self.branch(img_out)], dim=1)
        raw = self.head(self.merge(feats))
        tx = self.max_shift * torch.tanh(raw[:, 0])
        ty = self.max_shift * torch.tanh(raw[:, 1])
        scale = torch.exp(self.log_scale_range * torch.tanh(raw[:, 2]))
        return torch.stack([tx, ty, scale], dim=1)

    def transform(self, img_in: Tensor, img_out: Tensor) -> tuple[Tensor, Tensor]:
        """Predict motion parameters and resample img_in accordingly."""
        params = self(img_in, img_out)
        h, w = img_in.shape[-2:]
        field = affine_field(params[:, 0], params[:, 1], params[:, 2], h, w)
        return params, sample(img_in, field)


class _RedirEncoder(nn.Module):
    def __init__(self, in_channels: int, widths: tuple[int, int, int]):
        super().__init__()
        c0, c1, c2 = widths
        self.stem = nn.Sequential(
            nn.Conv2d(in_channels, c0, 3, padding=1), _gn(c0), nn.ReLU(),
        )
        self.down1 = nn.Sequential(
            nn.Conv2d(c0, c1, 3, stride=2, padding=1), _gn(c1), nn.ReLU(),
            nn.Conv2d(c1, c1, 3, padding=1), _gn(c1), nn.ReLU(),
        )
        self.down2 = nn.Sequential(
            nn.Conv2d(c1, c2, 3, stride=2, padding=1), _gn(c2), nn.ReLU(),
            nn.Conv2d(c2, c2, 3, padding=1), _gn(c2), nn.ReLU(),
        )

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        skip = self.down1(self.stem(x))
        bottleneck = self.down2(skip)
        return bottleneck, skip


class _RedirDecoder(nn.Module):
    def __init__(self, repr_dim: int, widths: tuple[int, int, int], delta_channels: int):
        super().__init__()
        c0, c1, c2 = widths
        self.delta_proj = nn.Linear(repr_dim, delta_channels)
        self.fuse = nn.Sequential(
            nn.Conv2d(c2 + delta_channels, c2, 3, padding=1), _gn(c2), nn.ReLU(),
        )
        self.up1 = nn.Sequential(
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(c2, c1, 3, padding=1), _gn(c1), nn.ReLU(),
        )
        self.post1 = nn.Sequential(
            nn.Conv2d(2 * c1, c1, 3, padding=1), _gn(c1), nn.ReLU(),
        )
        self.up0 = nn.Sequential(
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(c1, c0, 3, padding=1), _gn(c0), nn.ReLU(),
        )
        self.head = nn.Conv2d(c0, 2, 3, padding=1)
        nn.init.normal_(self.head.weight, std=1e-3)
        nn.init.zeros_(self.head.bias)

    def forward(self, bottleneck: Tensor, skip: Tensor, delta: Tensor) -> Tensor:
        proj = torch.relu(self.delta_proj(delta))
        proj = proj[:, :, None, None].expand(-1, -1, *bottleneck.shape[-2:])
        h = self.fuse(torch.cat([bottleneck, proj], dim=1))
        h = self.post1(torch.cat([self.up1(h), skip], dim=1))
        return self.head(self.up0(h))


class RedirNet(nn.Module):
    """Redirection network R: aligned image + code delta -> warping field.

    The decoder (everything downstream of the encoder, including the delta
    projection) forms the explicitly partitioned parameter subset targeted by
    the warp regularizer.
    """

    def __init__(
        self,
        repr_dim: int = 2,
        in_channels: int = 1,
        widths: tuple[int, int, int] = (16, 32, 48),
        delta_channels: int = 16,
        max_residual: float = 0.75,
    ):
        super().__init__()
        self.repr_dim = repr_dim
        self.max_residual = max_residual
        self.encoder = _RedirEncoder(in_channels, widths)
        self.decoder = _RedirDecoder(repr_dim, widths, delta_channels)
        enc_ids = {id(p) for p in self.encoder.parameters()}
        dec_ids = {id(p) for p in self.decoder.parameters()}
        all_ids = {id(p) for p in self.parameters()}
        assert enc_ids.isdisjoint(dec_ids) and enc_ids | dec_ids == all_ids

    def encode(self, img: Tensor) -> tuple[Tensor, Tensor]:
        return self.encoder(img)

    def decode(self, encoder_state: tuple[Tensor, Tensor], delta: Tensor) -> Tensor:
        if delta.shape[-1] != self.repr_dim:
            raise ValueError(
                f"delta dimension {delta.shape[-1]} does not match repr_dim {self.repr_dim}"
            )
        bottleneck, skip = encoder_state
        raw = self.decoder(bottleneck, skip, delta)
        h, w = raw.shape[-2:]
        base = identity_field(h, w, dtype=raw.dtype, device=raw.device)
        return base.unsqueeze(0) + self.max_residual * torch.tanh(raw)

    def forward(self, img: Tensor, delta: Tensor) -> Tensor:
        return self.decode(self.encode(img), delta)

    def encoder_parameters(self):
        return self.encoder.parameters()

    def decoder_parameters(self):
        return self.decoder.parameters()


@dataclass
class ModelSet:
    """The three jointly trained networks."""

    repr_net: GazeRepNet
    align_net: AlignNet
    redir_net: RedirNet

    def all_parameters(self):
        for net in (self.repr_net, self.align_net, self.redir_net):
            yield from net.parameters()

    def train(self):
        for net in (self.repr_net, self.align_net, self.redir_net):
            net.train()
        return self

    def eval(self):
        for net in (self.repr_net, self.align_net, self.redir_net):
            net.eval()
        return self


@dataclass
class ForwardBundle:
    """Everything the unsupervised losses need from one forward pass."""

    aligned: Tensor  # I_i resampled toward I_o
    align_params: Tensor  # (B, 3) tx, ty, scale
    delta: Tensor  # (B, d) code difference
    field: Tensor  # (B, 2, H, W) warping field
    redirected: Tensor  # warped aligned image
    encoder_state: tuple[Tensor, Tensor]


def unsup_forward(
    models: ModelSet,
    img_in: Tensor,
    img_out: Tensor,
    augment_fn=None,
) -> ForwardBundle:
    """Compose alignment, representation difference, and redirection.

    ``augment_fn`` perturbs only the representation network's inputs and is
    applied independently to each image; the redirection path always sees the
    unperturbed pair.
    """
    align_params, aligned = models.align_net.transform(img_in, img_out)
    code_in = models.repr_net(augment_fn(img_in) if augment_fn else img_in)
    code_out = models.repr_net(augment_fn(img_out) if augment_fn else img_out)
    delta = code_in - code_out
    encoder_state = models.redir_net.encode(aligned)
    field = models.redir_net.decode(encoder_state, delta)
    redirected = sample(aligned, field)
    return ForwardBundle(
        aligned=aligned,
        align_params=align_params,
        delta=delta,
        field=field,
        redirected=redirected,
        encoder_state=encoder_state,
    )


def build_models(
    repr_preset: str = "resnet-small",
    repr_dim: int = 2,
    in_channels: int = 1,
    input_size: tuple[int, int] = (32, 48),
    bounded: bool = True,
    redir_widths: tuple[int, int, int] = (16, 32, 48),
    delta_channels: int = 16,
    max_residual: float = 0.75,
) -> ModelSet:
    repr_net = GazeRepNet(
        preset=repr_preset,
        repr_dim=repr_dim,
        in_channels=in_channels,
        input_size=input_size,
        bounded=bounded,
    )
    align_net = AlignNet(in_channels=in_channels)
    redir_net = RedirNet(
        repr_dim=repr_dim,
        in_channels=in_channels,
        widths=redir_widths,
        delta_channels=delta_channels,
        max_residual=max_residual,
    )
    return ModelSet(repr_net, align_net, redir_net)
