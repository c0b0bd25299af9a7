"""Synthetic gray-scale scans from label volumes, plus preprocessing.

Scan synthesis assigns independent uniform random integers per voxel:
[128, 255] to vessel foreground and [0, 127] to background. The stream is
counter-based (Philox keyed by the seed, one draw per voxel in C order),
so generation is reproducible and order-stable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateRangeError, EmptyForegroundError, PreconditionError
from .rasterize import GridSpec, LabelVolume


@dataclass
class ScanVolume:
    """Scalar voxel volume on a GridSpec (int16 raw or float32 normalized)."""

    grid: GridSpec
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data)
        if self.data.shape != self.grid.dims:
            raise PreconditionError(
                f"scan array shape {self.data.shape} != grid dims {self.grid.dims}")


@dataclass(frozen=True)
class CropBox:
    """Half-open index box per axis: start inclusive, stop exclusive."""

    start: tuple[int, int, int]
    stop: tuple[int, int, int]

    def slices(self) -> tuple[slice, slice, slice]:
        return tuple(slice(a, b) for a, b in zip(self.start, self.stop))


@dataclass(frozen=True)
class Patch:
    """A sub-volume and the offset of its corner in the source volume."""

    offset: tuple[int, int, int]
    data: np.ndarray = field(repr=False)


def synth_scan(label: LabelVolume, rng_seed: int) -> ScanVolume:
    """Gray-scale scan: foreground uniform in [128, 255], background in [0, 127]."""
    rng = np.random.Generator(np.random.Philox(rng_seed))
    draws = rng.integers(0, 128, size=label.data.shape, dtype=np.int16)
    values = draws + np.int16(128) * (label.data > 0).astype(np.int16)
    return ScanVolume(label.grid, values)


def minmax_normalize(volume: ScanVolume) -> ScanVolume:
    """Map values linearly so the minimum becomes 0.0 and the maximum 1.0."""
    data = volume.data
    vmin = data.min()
    vmax = data.max()
    if vmin == vmax:
        raise DegenerateRangeError(
            f"volume is constant ({vmin}); min-max normalization undefined")
    scaled = (data.astype(np.float32) - np.float32(vmin)) / np.float32(vmax - vmin)
    return ScanVolume(volume.grid, scaled)


def _axis_grid_offsets(dim: int, patch: int, stride: int) -> list[int]:
    offsets = list(range(0, dim - patch + 1, stride))
    if offsets[-1] != dim - patch:
        offsets.append(dim - patch)  # clamp the last patch to the boundary
    return offsets


def extract_patches(volume, patch_size, mode: str = "grid", *,
                    stride=None, count: int | None = None,
                    rng_seed: int | None = None) -> list[Patch]:
    """Cut fixed-size sub-volumes out of a volume.

    grid mode: a lattice of offsets with the given stride (default: the
    patch size), the final offset per axis clamped so the last patch ends
    exactly at the boundary. random mode: ``count`` offsets drawn
    uniformly (seeded) over all in-bounds positions.
    """
    data = volume.data if hasattr(volume, "data") else np.asarray(volume)
    dims = data.shape
    if data.ndim != 3:
        raise PreconditionError(f"expected a 3D volume, got shape {dims}")
    patch = tuple(int(p) for p in ((patch_size,) * 3 if np.isscalar(patch_size)
                                   else patch_size))
    if any(p < 1 for p in patch):
        raise PreconditionError(f"patch size must be >= 1, got {patch}")
    if any(p > d for p, d in zip(patch, dims)):
        raise PreconditionError(
            f"patch size {patch} exceeds volume dims {dims}")

    if mode == "grid":
        stride = patch if stride is None else tuple(
            int(s) for s in ((stride,) * 3 if np.isscalar(stride) else stride))
        if any(s < 1 for s in stride):
            raise PreconditionError(f"stride must be >= 1, got {stride}")
        axes = [_axis_grid_offsets(d, p, s) for d, p, s in zip(dims, patch, stride)]
        offsets = [(i, j, k) for i in axes[0] for j in axes[1] for k in axes[2]]
    elif mode == "random":
        if count is None or count < 1:
            raise PreconditionError("random mode requires count >= 1")
        rng = np.random.Generator(np.random.PCG64(rng_seed))
        highs = [d - p + 1 for d, p in zip(dims, patch)]
        draws = rng.integers(0, highs, size=(count, 3))
        offsets = [tuple(int(v) for v in row) for row in draws]
    else:
        raise PreconditionError(f"unknown patch mode {mode!r}")

    return [
        Patch(offset=off,
              data=data[off[0]:off[0] + patch[0],
                        off[1]:off[1] + patch[1],
                        off[2]:off[2] + patch[2]].copy())
        for off in offsets
    ]


def otsu_threshold_256(data: np.ndarray) -> tuple[int, np.ndarray]:
    """Otsu's threshold over a 256-bin histogram of the requantized volume.

    Returns (threshold bin k, per-voxel bin indices); above-threshold
    means bin index > k.
    """
    vmin = data.min()
    vmax = data.max()
    if vmin == vmax:
        raise DegenerateRangeError("volume is constant; Otsu threshold undefined")
    q = np.rint((data.astype(np.float64) - vmin) * (255.0 / (vmax - vmin))).astype(np.int64)
    hist = np.bincount(q.ravel(), minlength=256).astype(np.float64)

    total = hist.sum()
    omega = np.cumsum(hist) / total                 # class-A weight up to bin k
    mu = np.cumsum(hist * np.arange(256)) / total   # cumulative mean
    mu_t = mu[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        sigma_b = (mu_t * omega - mu) ** 2 / (omega * (1.0 - omega))
    sigma_b[~np.isfinite(sigma_b)] = -1.0
    k = int(np.argmax(sigma_b))  # argmax takes the smallest index on ties
    return k, q


def otsu_crop(volume: ScanVolume, margin_voxels: int = 0) -> tuple[ScanVolume, CropBox]:
    """Crop to the bounding box of Otsu-foreground voxels, plus a margin."""
    if margin_voxels < 0:
        raise PreconditionError(f"margin must be >= 0, got {margin_voxels}")
    k, q = otsu_threshold_256(volume.data)
    above = q > k
    if not above.any():
        raise EmptyForegroundError("no voxel above the Otsu threshold")
    start = []
    stop = []
    for axis in range(3):
        other = tuple(a for a in range(3) if a != axis)
        profile = above.any(axis=other)
        nz = np.flatnonzero(profile)
        lo = max(int(nz[0]) - margin_voxels, 0)
        hi = min(int(nz[-1]) + 1 + margin_voxels, volume.grid.dims[axis])
        start.append(lo)
        stop.append(hi)
    box = CropBox(start=tuple(start), stop=tuple(stop))
    cropped = volume.data[box.slices()].copy()
    new_origin = tuple(
        volume.grid.origin[a] + box.start[a] * volume.grid.spacing[a] for a in range(3))
    new_grid = GridSpec(dims=cropped.shape, spacing=volume.grid.spacing, origin=new_origin)
    return ScanVolume(new_grid, cropped), box
