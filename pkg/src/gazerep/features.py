"""Frozen convolutional feature extractor with three tap points.

Supplies the feature-reconstruction and style (gram) losses. Two backbones
share one tap topology:

* a fixed-seed random-weight stack (default; hermetic, no weight files), taking
  raw [0, 1] inputs;
* a VGG16 prefix loaded from a weight file (see ``from_vgg16_weights``), with
  ImageNet normalization applied internally.

Tap indices count modules in the layer sequence (conv, relu, and pool each
count one), matching torchvision's indexing of ``vgg16().features``. Under
that counting the default taps (3, 8, 13) sit after the activations at full,
half, and quarter resolution, so tap spatial sizes strictly decrease.
"""

from __future__ import annotations

import torch
from torch import Tensor, nn


class FeatureSizeError(ValueError):
    """Input too small for the extractor's pooling pyramid."""


# conv channel plan of the VGG16 prefix covering taps up to index 15
_VGG16_PREFIX = [64, 64, "M", 128, 128, "M", 256, 256, 256]

_IMAGENET_MEAN = (0.485, 0.456, 0.406)
_IMAGENET_STD = (0.229, 0.224, 0.225)


def _conv_stack(channel_plan, in_channels: int) -> nn.Sequential:
    layers: list[nn.Module] = []
    prev = in_channels
    for item in channel_plan:
        if item == "M":
            layers.append(nn.MaxPool2d(2, stride=2))
        else:
            layers.append(nn.Conv2d(prev, item, kernel_size=3, padding=1))
            layers.append(nn.ReLU(inplace=False))
            prev = item
    return nn.Sequential(*layers)


def _seed_weights(stack: nn.Sequential, seed: int) -> None:
    gen = torch.Generator().manual_seed(seed)
    for module in stack:
        if isinstance(module, nn.Conv2d):
            fan_in = module.in_channels * module.kernel_size[0] * module.kernel_size[1]
            std = (2.0 / fan_in) ** 0.5
            with torch.no_grad():
                module.weight.copy_(torch.randn(module.weight.shape, generator=gen) * std)
                bound = fan_in**-0.5
                module.bias.copy_(
                    (torch.rand(module.bias.shape, generator=gen) * 2 - 1) * bound
                )


class FeatureExtractor(nn.Module):
    """Frozen conv stack; ``forward`` returns the three tap feature maps."""

    def __init__(
        self,
        layers: nn.Sequential,
        taps: tuple[int, int, int],
        mean: tuple[float, ...] | None = None,
        std: tuple[float, ...] | None = None,
    ):
        super().__init__()
        if len(taps) != 3 or sorted(taps) != list(taps):
            raise ValueError(f"taps must be three increasing indices, got {taps}")
        self.layers = layers[: max(taps) + 1]
        self.taps = tuple(taps)
        first_conv = next(m for m in self.layers if isinstance(m, nn.Conv2d))
        self.in_channels = first_conv.in_channels
        if mean is not None:
            self.register_buffer("input_mean", torch.tensor(mean).view(1, -1, 1, 1))
            self.register_buffer("input_std", torch.tensor(std).view(1, -1, 1, 1))
        else:
            self.input_mean = None
            self.input_std = None
        n_pools = sum(
            1 for m in self.layers[: max(taps) + 1] if isinstance(m, nn.MaxPool2d)
        )
        self.min_size = 2**n_pools * 2
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    @classmethod
    def random(
        cls,
        seed: int = 0,
        channels: tuple[int, int, int] = (16, 32, 64),
        in_channels: int = 3,
        convs_per_stage: int = 2,
    ) -> "FeatureExtractor":
        """Fixed-seed random-weight backbone; a valid perceptual metric that
        keeps training and tests hermetic when no pretrained file is given.

        Three stages separated by pooling, tapped after each stage's last
        activation; ``convs_per_stage=1`` gives a cheap variant for CPU
        training."""
        plan: list = []
        taps = []
        idx = -1
        for stage, width in enumerate(channels):
            if stage > 0:
                plan.append("M")
                idx += 1
            plan.extend([width] * convs_per_stage)
            idx += 2 * convs_per_stage  # each conv adds conv+relu modules
            taps.append(idx)
        stack = _conv_stack(plan, in_channels)
        _seed_weights(stack, seed)
        return cls(stack, taps=tuple(taps))

    @classmethod
    def from_vgg16_weights(
        cls, path: str, taps: tuple[int, int, int] = (3, 8, 13)
    ) -> "FeatureExtractor":
        """Load a pretrained VGG16 prefix from a weight container.

        The container is a ``torch.save``'d state dict whose keys follow the
        sequential layout documented in the README ("0.weight", "0.bias",
        "2.weight", ... for the conv layers of the VGG16 feature stack).
        """
        stack = _conv_stack(_VGG16_PREFIX, in_channels=3)
        state = torch.load(path, map_location="cpu", weights_only=True)
        needed = {k: v for k, v in state.items() if k in dict(stack.state_dict())}
        stack.load_state_dict(needed)
        return cls(stack, taps=taps, mean=_IMAGENET_MEAN, std=_IMAGENET_STD)

    def forward(self, images: Tensor) -> list[Tensor]:
        squeeze = images.ndim == 3
        if squeeze:
            images = images.unsqueeze(0)
        if images.shape[1] == 1 and self.in_channels > 1:
            images = images.expand(-1, self.in_channels, -1, -1)
        elif images.shape[1] != self.in_channels:
            raise ValueError(
                f"extractor expects 1 or {self.in_channels} channels, got {images.shape[1]}"
            )
        if images.shape[2] < self.min_size or images.shape[3] < self.min_size:
            raise FeatureSizeError(
                f"input {tuple(images.shape[2:])} below minimum {self.min_size}x{self.min_size}"
            )
        if self.input_mean is not None:
            images = (images - self.input_mean) / self.input_std
        maps = []
        x = images
        for idx, module in enumerate(self.layers):
            x = module(x)
            if idx in self.taps:
                maps.append(x.squeeze(0) if squeeze else x)
        return maps

    def extract(self, images: Tensor) -> list[Tensor]:
        return self(images)


def gram(feature_map: Tensor) -> Tensor:
    """Gram matrix (1/s) * m @ m.T of a feature map.

    Accepts (C, S), (C, H, W), or batched (B, C, H, W); returns (C, C) or
    (B, C, C).
    """
    if feature_map.ndim == 2:
        m = feature_map
    elif feature_map.ndim == 3:
        m = feature_map.reshape(feature_map.shape[0], -1)
    elif feature_map.ndim == 4:
        m = feature_map.reshape(feature_map.shape[0], feature_map.shape[1], -1)
        return m @ m.transpose(1, 2) / m.shape[2]
    else:
        raise ValueError(f"unsupported feature map rank {feature_map.ndim}")
    return m @ m.T / m.shape[1]
