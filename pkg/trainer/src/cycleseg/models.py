"""Network definitions: ResNet generators, PatchGAN discriminators, UNet segmenter.

All three are dimension-parametric (dims=3 for volumes, dims=2 for the
fast toy mode) and use a first-layer width of 32. ``build_models`` runs
a shape self-check on the meta device and raises if any layer deviates
from the expected feature-map sizes, naming the layer.

Generator (for input 1 x 208^3): 32 x 208^3 -> 64 x 104^3 -> 128 x 52^3
-> three residual blocks at 128 x 52^3 -> 64 x 104^3 -> 32 x 208^3 ->
1 x 208^3. Discriminator: 32 x 104^3 -> 64 x 52^3 -> 128 x 26^3 ->
256 x 25^3 -> 1 x 24^3.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn


class ModelBuildError(RuntimeError):
    """A constructed network failed its shape self-check."""


def _layers(dims: int):
    if dims == 3:
        return nn.Conv3d, nn.ConvTranspose3d, nn.InstanceNorm3d, nn.MaxPool3d
    if dims == 2:
        return nn.Conv2d, nn.ConvTranspose2d, nn.InstanceNorm2d, nn.MaxPool2d
    raise ValueError(f"dims must be 2 or 3, got {dims}")


class ResidualBlock(nn.Module):
    def __init__(self, channels: int, dims: int):
        super().__init__()
        conv, _, norm, _ = _layers(dims)
        self.block = nn.Sequential(
            conv(channels, channels, kernel_size=3, stride=1, padding=1),
            norm(channels),
            nn.ReLU(inplace=True),
            conv(channels, channels, kernel_size=3, stride=1, padding=1),
            norm(channels),
        )

    def forward(self, x):
        return x + self.block(x)


class ResnetGenerator(nn.Module):
    """Two stride-2 downsamplings, a residual trunk, two upsamplings, Tanh."""

    def __init__(self, dims: int = 3, base_width: int = 32, n_blocks: int = 3):
        super().__init__()
        conv, convt, norm, _ = _layers(dims)
        w = base_width
        stages: list[nn.Module] = [
            nn.Sequential(conv(1, w, kernel_size=7, stride=1, padding=3),
                          norm(w), nn.ReLU(inplace=True)),
            nn.Sequential(conv(w, 2 * w, kernel_size=3, stride=2, padding=1),
                          norm(2 * w), nn.ReLU(inplace=True)),
            nn.Sequential(conv(2 * w, 4 * w, kernel_size=3, stride=2, padding=1),
                          norm(4 * w), nn.ReLU(inplace=True)),
        ]
        stages += [ResidualBlock(4 * w, dims) for _ in range(n_blocks)]
        stages += [
            nn.Sequential(convt(4 * w, 2 * w, kernel_size=3, stride=2, padding=1,
                                output_padding=1),
                          norm(2 * w), nn.ReLU(inplace=True)),
            nn.Sequential(convt(2 * w, w, kernel_size=3, stride=2, padding=1,
                                output_padding=1),
                          norm(w), nn.ReLU(inplace=True)),
            nn.Sequential(conv(w, 1, kernel_size=7, stride=1, padding=3),
                          nn.Tanh()),
        ]
        self.stages = nn.ModuleList(stages)

    def forward(self, x):
        for stage in self.stages:
            x = stage(x)
        return x


class PatchDiscriminator(nn.Module):
    """Stride-2 pyramid ending in two stride-1 layers (kernel 4, pad 1)."""

    def __init__(self, dims: int = 3, base_width: int = 32):
        super().__init__()
        conv, _, norm, _ = _layers(dims)
        w = base_width
        self.stages = nn.ModuleList([
            nn.Sequential(conv(1, w, kernel_size=4, stride=2, padding=1),
                          nn.LeakyReLU(0.2, inplace=True)),
            nn.Sequential(conv(w, 2 * w, kernel_size=4, stride=2, padding=1),
                          norm(2 * w), nn.LeakyReLU(0.2, inplace=True)),
            nn.Sequential(conv(2 * w, 4 * w, kernel_size=4, stride=2, padding=1),
                          norm(4 * w), nn.LeakyReLU(0.2, inplace=True)),
            nn.Sequential(conv(4 * w, 8 * w, kernel_size=4, stride=1, padding=1),
                          norm(8 * w), nn.LeakyReLU(0.2, inplace=True)),
            conv(8 * w, 1, kernel_size=4, stride=1, padding=1),
        ])

    def forward(self, x):
        for stage in self.stages:
            x = stage(x)
        return x


class _DoubleConv(nn.Module):
    def __init__(self, c_in: int, c_out: int, dims: int):
        super().__init__()
        conv, _, norm, _ = _layers(dims)
        self.block = nn.Sequential(
            conv(c_in, c_out, kernel_size=3, padding=1), norm(c_out),
            nn.ReLU(inplace=True),
            conv(c_out, c_out, kernel_size=3, padding=1), norm(c_out),
            nn.ReLU(inplace=True),
        )

    def forward(self, x):
        return self.block(x)


class UNetSegmenter(nn.Module):
    """Three-level encoder/decoder UNet, 32 filters first, 2-class output.

    Spatial dimensions are preserved, so inputs must be divisible by 8.
    """

    def __init__(self, dims: int = 3, base_width: int = 32, n_classes: int = 2):
        super().__init__()
        conv, convt, _, pool = _layers(dims)
        w = base_width
        self.enc1 = _DoubleConv(1, w, dims)
        self.enc2 = _DoubleConv(w, 2 * w, dims)
        self.enc3 = _DoubleConv(2 * w, 4 * w, dims)
        self.bottleneck = _DoubleConv(4 * w, 8 * w, dims)
        self.pool = pool(2)
        self.up3 = convt(8 * w, 4 * w, kernel_size=2, stride=2)
        self.dec3 = _DoubleConv(8 * w, 4 * w, dims)
        self.up2 = convt(4 * w, 2 * w, kernel_size=2, stride=2)
        self.dec2 = _DoubleConv(4 * w, 2 * w, dims)
        self.up1 = convt(2 * w, w, kernel_size=2, stride=2)
        self.dec1 = _DoubleConv(2 * w, w, dims)
        self.head = conv(w, n_classes, kernel_size=1)

    def forward(self, x):
        e1 = self.enc1(x)
        e2 = self.enc2(self.pool(e1))
        e3 = self.enc3(self.pool(e2))
        b = self.bottleneck(self.pool(e3))
        d3 = self.dec3(torch.cat([self.up3(b), e3], dim=1))
        d2 = self.dec2(torch.cat([self.up2(d3), e2], dim=1))
        d1 = self.dec1(torch.cat([self.up1(d2), e1], dim=1))
        return self.head(d1)


@dataclass
class ModelBundle:
    """The five networks trained together."""

    g_a2b: ResnetGenerator
    g_b2a: ResnetGenerator
    d_a: PatchDiscriminator
    d_b: PatchDiscriminator
    segmenter: UNetSegmenter
    dims: int

    def gan_modules(self) -> dict[str, nn.Module]:
        return {"g_a2b": self.g_a2b, "g_b2a": self.g_b2a,
                "d_a": self.d_a, "d_b": self.d_b}

    def all_modules(self) -> dict[str, nn.Module]:
        return self.gan_modules() | {"segmenter": self.segmenter}

    def train_mode(self) -> None:
        for m in self.all_modules().values():
            m.train()


def expected_generator_shapes(n: int, dims: int, w: int = 32,
                              n_blocks: int = 3) -> list[tuple[int, ...]]:
    """Per-stage output sizes for an n^dims input (n divisible by 4)."""
    def space(s):
        return (s,) * dims

    shapes = [(w, *space(n)), (2 * w, *space(n // 2)), (4 * w, *space(n // 4))]
    shapes += [(4 * w, *space(n // 4))] * n_blocks
    shapes += [(2 * w, *space(n // 2)), (w, *space(n)), (1, *space(n))]
    return shapes


def expected_discriminator_shapes(n: int, dims: int, w: int = 32) -> list[tuple[int, ...]]:
    def space(s):
        return (s,) * dims

    return [
        (w, *space(n // 2)),
        (2 * w, *space(n // 4)),
        (4 * w, *space(n // 8)),
        (8 * w, *space(n // 8 - 1)),
        (1, *space(n // 8 - 2)),
    ]


def staged_shapes(module: nn.Module, patch: int, dims: int) -> list[tuple[int, ...]]:
    """Forward a meta-device input and collect each stage's output shape."""
    module.eval()
    x = torch.empty((1, 1) + (patch,) * dims, device="meta")
    shapes = []
    with torch.no_grad():
        for stage in module.stages:
            x = stage(x)
            shapes.append(tuple(x.shape[1:]))
    return shapes


def check_shapes(name: str, got: list[tuple[int, ...]],
                 expected: list[tuple[int, ...]]) -> None:
    for i, (g, e) in enumerate(zip(got, expected)):
        if g != e:
            raise ModelBuildError(
                f"{name} stage {i}: output shape {g} != expected {e}")
    if len(got) != len(expected):
        raise ModelBuildError(
            f"{name}: {len(got)} stages, expected {len(expected)}")


def build_models(config) -> ModelBundle:
    """Construct all five networks and self-check their feature-map sizes.

    The generator/discriminator checks run on the meta device, so even
    the full 208^3 configuration verifies instantly without allocating
    activations.
    """
    if config.patch_size % 8 != 0:
        raise ModelBuildError(
            f"patch_size must be divisible by 8, got {config.patch_size}")
    torch.manual_seed(config.rng_seed)
    dims = config.dims
    w = config.base_width
    bundle = ModelBundle(
        g_a2b=ResnetGenerator(dims, w),
        g_b2a=ResnetGenerator(dims, w),
        d_a=PatchDiscriminator(dims, w),
        d_b=PatchDiscriminator(dims, w),
        segmenter=UNetSegmenter(dims, w),
        dims=dims,
    )

    meta_gen = ResnetGenerator(dims, w).to(device="meta")
    check_shapes("generator", staged_shapes(meta_gen, config.patch_size, dims),
                 expected_generator_shapes(config.patch_size, dims, w))
    meta_disc = PatchDiscriminator(dims, w).to(device="meta")
    check_shapes("discriminator", staged_shapes(meta_disc, config.patch_size, dims),
                 expected_discriminator_shapes(config.patch_size, dims, w))

    meta_seg = UNetSegmenter(dims, w).to(device="meta")
    meta_seg.eval()
    with torch.no_grad():
        seg_out = meta_seg(torch.empty((1, 1) + (config.patch_size,) * dims,
                                       device="meta"))
    expected_seg = (2,) + (config.patch_size,) * dims
    if tuple(seg_out.shape[1:]) != expected_seg:
        raise ModelBuildError(
            f"segmenter head: output shape {tuple(seg_out.shape[1:])} != "
            f"expected {expected_seg}")
    return bundle
