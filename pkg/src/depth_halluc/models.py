"""Generator and discriminator definitions.

The generator is a fully convolutional encoder/decoder: a 7x7 stride-1 stem,
two stride-2 downsampling convs, a stack of shape-preserving residual blocks,
two stride-2 transposed convs back up, and a 7x7 tanh head. The discriminator
is a patch classifier: stride-2 4x4 convs down to a single-map score grid
(input_size / 2^(layers+1) per side), with no output nonlinearity because the
adversarial objective is least-squares.

Instance normalization follows every generator conv except the output layer
and every discriminator conv except the first and last. Residual blocks use
stride 1 throughout; stride-2 blocks cannot preserve the shape their skip
connection requires.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .errors import ValidationError

WEIGHT_INIT_STD = 0.02


@dataclass(frozen=True)
class GeneratorConfig:
    maps: tuple[int, int, int] = (64, 128, 256)
    res_blocks: int = 6
    in_channels: int = 3
    out_channels: int = 3

    def param_count(self) -> int:
        """Closed-form parameter count from the layer table (conv weights and
        biases; instance norm carries no parameters)."""
        c1, c2, c3 = self.maps
        n = 7 * 7 * self.in_channels * c1 + c1
        n += 3 * 3 * c1 * c2 + c2
        n += 3 * 3 * c2 * c3 + c3
        n += self.res_blocks * 2 * (3 * 3 * c3 * c3 + c3)
        n += 3 * 3 * c3 * c2 + c2
        n += 3 * 3 * c2 * c1 + c1
        n += 7 * 7 * c1 * self.out_channels + self.out_channels
        return n


@dataclass(frozen=True)
class DiscriminatorConfig:
    maps: tuple[int, ...] = (64, 128, 256, 256)
    in_channels: int = 3

    @property
    def size_divisor(self) -> int:
        # One stride-2 conv per listed map count plus the final score conv.
        return 2 ** (len(self.maps) + 1)

    def param_count(self) -> int:
        n = 0
        prev = self.in_channels
        for c in self.maps:
            n += 4 * 4 * prev * c + c
            prev = c
        n += 4 * 4 * prev * 1 + 1
        return n


class ResidualBlock(nn.Module):
    """Two 3x3 stride-1 convs with instance norm; identity skip."""

    def __init__(self, channels: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, stride=1, padding=1),
            nn.InstanceNorm2d(channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, stride=1, padding=1),
            nn.InstanceNorm2d(channels),
        )

    def forward(self, x):
        return x + self.body(x)


class Generator(nn.Module):
    def __init__(self, config: GeneratorConfig = GeneratorConfig()):
        super().__init__()
        self.config = config
        c1, c2, c3 = config.maps
        layers = [
            nn.ReflectionPad2d(3),
            nn.Conv2d(config.in_channels, c1, 7, stride=1),
            nn.InstanceNorm2d(c1),
            nn.ReLU(inplace=True),
            nn.Conv2d(c1, c2, 3, stride=2, padding=1),
            nn.InstanceNorm2d(c2),
            nn.ReLU(inplace=True),
            nn.Conv2d(c2, c3, 3, stride=2, padding=1),
            nn.InstanceNorm2d(c3),
            nn.ReLU(inplace=True),
        ]
        layers += [ResidualBlock(c3) for _ in range(config.res_blocks)]
        layers += [
            nn.ConvTranspose2d(c3, c2, 3, stride=2, padding=1, output_padding=1),
            nn.InstanceNorm2d(c2),
            nn.ReLU(inplace=True),
            nn.ConvTranspose2d(c2, c1, 3, stride=2, padding=1, output_padding=1),
            nn.InstanceNorm2d(c1),
            nn.ReLU(inplace=True),
            nn.ReflectionPad2d(3),
            nn.Conv2d(c1, config.out_channels, 7, stride=1),
            nn.Tanh(),
        ]
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        _check_input(x, self.config.in_channels, divisor=4)
        return self.net(x)


class Discriminator(nn.Module):
    def __init__(self, config: DiscriminatorConfig = DiscriminatorConfig()):
        super().__init__()
        self.config = config
        layers: list[nn.Module] = []
        prev = config.in_channels
        for i, c in enumerate(config.maps):
            layers.append(nn.Conv2d(prev, c, 4, stride=2, padding=1))
            if i > 0:
                layers.append(nn.InstanceNorm2d(c))
            layers.append(nn.LeakyReLU(0.2, inplace=True))
            prev = c
        layers.append(nn.Conv2d(prev, 1, 4, stride=2, padding=1))
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        _check_input(x, self.config.in_channels, divisor=self.config.size_divisor)
        return self.net(x)


class PassthroughGenerator(nn.Module):
    """Identity mapping with the generator's IO contract; debug plumbing."""

    def __init__(self):
        super().__init__()
        self.config = GeneratorConfig(maps=(0, 0, 0), res_blocks=0)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        _check_input(x, 3, divisor=1)
        return x


def _check_input(x: torch.Tensor, channels: int, divisor: int):
    if x.dim() != 4 or x.shape[1] != channels:
        raise ValidationError(
            f"expected a 1x{channels}xHxW tensor, got shape {tuple(x.shape)}"
        )
    if x.shape[2] % divisor or x.shape[3] % divisor:
        raise ValidationError(
            f"spatial size {tuple(x.shape[2:])} not divisible by {divisor}"
        )


def _init_weights(module: nn.Module, seed: int):
    g = torch.Generator().manual_seed(seed)
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            with torch.no_grad():
                m.weight.copy_(
                    torch.randn(m.weight.shape, generator=g) * WEIGHT_INIT_STD
                )
                if m.bias is not None:
                    m.bias.zero_()


def init_generator(seed: int, config: GeneratorConfig = GeneratorConfig()) -> Generator:
    """Seeded generator; weights ~ N(0, 0.02^2), biases zero."""
    gen = Generator(config)
    _init_weights(gen, seed)
    return gen


def init_discriminator(
    seed: int, config: DiscriminatorConfig = DiscriminatorConfig()
) -> Discriminator:
    """Seeded discriminator; weights ~ N(0, 0.02^2), biases zero."""
    disc = Discriminator(config)
    _init_weights(disc, seed)
    return disc


# ---------------------------------------------------------------------------
# numpy-facing helpers (model space is H x W x C float32)


def image_to_tensor(image: np.ndarray) -> torch.Tensor:
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim != 3:
        raise ValidationError(f"expected an HxWxC image, got shape {arr.shape}")
    return torch.from_numpy(np.ascontiguousarray(arr)).permute(2, 0, 1).unsqueeze(0)


def tensor_to_image(tensor: torch.Tensor) -> np.ndarray:
    return tensor.detach().squeeze(0).permute(1, 2, 0).cpu().numpy()


def generator_forward(gen: nn.Module, image: np.ndarray) -> np.ndarray:
    """Run one HxWx3 image through the generator, returning HxWx3."""
    with torch.no_grad():
        return tensor_to_image(gen(image_to_tensor(image)))


def discriminator_forward(disc: Discriminator, image: np.ndarray) -> np.ndarray:
    """Run one HxWx3 image through the discriminator; returns the patch score
    grid as (h, w, 1)."""
    with torch.no_grad():
        return tensor_to_image(disc(image_to_tensor(image)))
