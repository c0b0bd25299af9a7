"""Voxelization of vessel trees into binary label volumes.

A voxel is foreground iff its center lies inside the tapered capsule of
at least one segment: distance to the segment axis at the clamped
projection parameter t is compared against the radius linearly
interpolated between the segment's end radii (clamping yields
hemispherical caps). The parent-side radius of a segment is the radius
of the edge entering its parent node; segments leaving the root use
their own radius at both ends.

``voxelize`` prunes work with per-segment bounding boxes;
``voxelize_bruteforce`` evaluates every voxel against every segment.
Both apply the identical per-voxel arithmetic, so their outputs agree
bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import PreconditionError, ValidationError
from .graph import VesselTree


def _as_triple(value, name: str) -> tuple:
    if np.isscalar(value):
        value = (value, value, value)
    value = tuple(value)
    if len(value) != 3:
        raise ValidationError(f"{name} must be a scalar or 3-sequence, got {value!r}")
    return value


@dataclass(frozen=True)
class GridSpec:
    """Voxel lattice: dims (nx, ny, nz), spacing (µm/voxel), origin (µm).

    Voxel (i, j, k) has its center at origin + (index + 0.5) * spacing.
    """

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in _as_triple(self.dims, "dims")))
        object.__setattr__(self, "spacing",
                           tuple(float(s) for s in _as_triple(self.spacing, "spacing")))
        object.__setattr__(self, "origin",
                           tuple(float(o) for o in _as_triple(self.origin, "origin")))
        if any(d < 1 for d in self.dims):
            raise ValidationError(f"dims must all be >= 1, got {self.dims}")
        if any(not s > 0 for s in self.spacing):
            raise ValidationError(f"spacing must be > 0, got {self.spacing}")

    @property
    def voxel_count(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    def axis_centers(self, axis: int) -> np.ndarray:
        n = self.dims[axis]
        return self.origin[axis] + (np.arange(n, dtype=np.float64) + 0.5) * self.spacing[axis]


@dataclass
class LabelVolume:
    """Binary voxel volume (1 = vessel) on a GridSpec; array shape == dims."""

    grid: GridSpec
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.uint8)
        if self.data.shape != self.grid.dims:
            raise ValidationError(
                f"label array shape {self.data.shape} != grid dims {self.grid.dims}")

    def foreground(self) -> np.ndarray:
        return self.data > 0


def _edge_capsules(tree: VesselTree) -> list[tuple[np.ndarray, np.ndarray, float, float]]:
    """Per edge: (parent position, child position, parent-end radius, child-end radius)."""
    inflow_radius = {e.child_id: e.radius for e in tree.edges}
    capsules = []
    for e in sorted(tree.edges, key=lambda e: (e.parent_id, e.child_id)):
        if e.radius is None or not e.radius > 0:
            raise PreconditionError(
                f"edge {e.parent_id}->{e.child_id} has no positive radius")
        r1 = float(e.radius)
        r0 = inflow_radius.get(e.parent_id)
        r0 = r1 if r0 is None else float(r0)
        a = tree.nodes[e.parent_id].pos_array()
        b = tree.nodes[e.child_id].pos_array()
        if (a == b).all():
            raise PreconditionError(
                f"edge {e.parent_id}->{e.child_id} has coincident endpoints")
        capsules.append((a, b, r0, r1))
    return capsules


def _capsule_mask(xs: np.ndarray, ys: np.ndarray, zs: np.ndarray,
                  a: np.ndarray, b: np.ndarray, r0: float, r1: float) -> np.ndarray:
    """Evaluate the tapered-capsule predicate on the grid xs × ys × zs.

    Component arithmetic is written out explicitly; voxelize and the
    brute-force oracle both call this on (sub)grids, and identical
    elementwise expressions guarantee bit-identical results.
    """
    x = xs[:, None, None]
    y = ys[None, :, None]
    z = zs[None, None, :]
    dx, dy, dz = b[0] - a[0], b[1] - a[1], b[2] - a[2]
    dd = dx * dx + dy * dy + dz * dz
    wx = x - a[0]
    wy = y - a[1]
    wz = z - a[2]
    t = (wx * dx + wy * dy + wz * dz) / dd
    t = np.clip(t, 0.0, 1.0)
    ex = wx - t * dx
    ey = wy - t * dy
    ez = wz - t * dz
    dist2 = ex * ex + ey * ey + ez * ez
    rt = r0 + (r1 - r0) * t
    return dist2 <= rt * rt


def voxelize(tree: VesselTree, grid: GridSpec) -> LabelVolume:
    """Rasterize the tree, visiting only voxels near each segment.

    Geometry outside the grid is clipped silently; an edgeless tree gives
    an all-background volume.
    """
    out = np.zeros(grid.dims, dtype=bool)
    centers = [grid.axis_centers(axis) for axis in range(3)]
    for a, b, r0, r1 in _edge_capsules(tree):
        rmax = max(r0, r1)
        lo = np.minimum(a, b) - rmax
        hi = np.maximum(a, b) + rmax
        idx = []
        empty = False
        for axis in range(3):
            s = grid.spacing[axis]
            o = grid.origin[axis]
            # centers o + (i + 0.5) s within [lo, hi], widened one voxel
            i0 = int(np.floor((lo[axis] - o) / s - 0.5)) - 1
            i1 = int(np.ceil((hi[axis] - o) / s - 0.5)) + 1
            i0 = max(i0, 0)
            i1 = min(i1, grid.dims[axis] - 1)
            if i0 > i1:
                empty = True
                break
            idx.append((i0, i1))
        if empty:
            continue
        (x0, x1), (y0, y1), (z0, z1) = idx
        sub = _capsule_mask(centers[0][x0:x1 + 1], centers[1][y0:y1 + 1],
                            centers[2][z0:z1 + 1], a, b, r0, r1)
        out[x0:x1 + 1, y0:y1 + 1, z0:z1 + 1] |= sub
    return LabelVolume(grid, out.astype(np.uint8))


def voxelize_bruteforce(tree: VesselTree, grid: GridSpec) -> LabelVolume:
    """Oracle rasterizer: every voxel center against every segment.

    Deliberately does not call the accelerated path's helpers for the
    per-voxel test; the arithmetic is restated here with the same
    elementwise expression structure so outputs stay bit-identical.
    """
    out = np.zeros(grid.dims, dtype=bool)
    x = grid.axis_centers(0)[:, None, None]
    y = grid.axis_centers(1)[None, :, None]
    z = grid.axis_centers(2)[None, None, :]
    for a, b, r0, r1 in _edge_capsules(tree):
        dx, dy, dz = b[0] - a[0], b[1] - a[1], b[2] - a[2]
        dd = dx * dx + dy * dy + dz * dz
        wx = x - a[0]
        wy = y - a[1]
        wz = z - a[2]
        t = (wx * dx + wy * dy + wz * dz) / dd
        t = np.clip(t, 0.0, 1.0)
        ex = wx - t * dx
        ey = wy - t * dy
        ez = wz - t * dz
        dist2 = ex * ex + ey * ey + ez * ez
        rt = r0 + (r1 - r0) * t
        out |= dist2 <= rt * rt
    return LabelVolume(grid, out.astype(np.uint8))
