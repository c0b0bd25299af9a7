"""Segmentation metrics: accuracy, DICE, centerline DICE, post-processing.

The centerline DICE needs skeletons; ``skeletonize`` is a sequential 3D
medial-axis thinning that deletes border points whose removal provably
preserves topology (simple points under the 26/6 foreground/background
connectivity pair), protecting curve endpoints, iterated to a fixpoint.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import GridMismatchError, PreconditionError
from .rasterize import LabelVolume


@dataclass(frozen=True)
class MetricsReport:
    """Accuracy / DICE / clDICE plus the confusion counts behind them."""

    accuracy: float
    dice: float
    cl_dice: float
    tp: int
    fp: int
    fn: int
    tn: int

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "dice": self.dice,
            "cl_dice": self.cl_dice,
            "voxels": {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn},
        }


def _masks(pred: LabelVolume, gt: LabelVolume) -> tuple[np.ndarray, np.ndarray]:
    if pred.grid.dims != gt.grid.dims:
        raise GridMismatchError(
            f"prediction dims {pred.grid.dims} != ground-truth dims {gt.grid.dims}")
    return pred.data > 0, gt.data > 0


def dice(pred: LabelVolume, gt: LabelVolume) -> float:
    """Overlap score 2|P∩G| / (|P|+|G|); defined as 1.0 when both are empty."""
    p, g = _masks(pred, gt)
    sp = int(p.sum())
    sg = int(g.sum())
    if sp + sg == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / (sp + sg)


def accuracy(pred: LabelVolume, gt: LabelVolume) -> float:
    """Fraction of voxels with matching labels."""
    p, g = _masks(pred, gt)
    return float((p == g).mean())


# ---------------------------------------------------------------------------
# 3D thinning
#
# Local topology tables over the 3x3x3 neighborhood, flattened in C order
# (center index 13). A border foreground point p is *simple* iff
#   - the foreground of its 26-neighborhood forms one 26-component, and
#   - the background of its 18-neighborhood forms one 6-component that
#     touches a face neighbor of p
# (Malandain-Bertrand characterization for the (26, 6) pair).


def _build_tables():
    cells = [(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)]
    index = {c: i for i, c in enumerate(cells)}
    center = index[(0, 0, 0)]

    idx26 = [i for c, i in index.items() if c != (0, 0, 0)]
    manhattan = {c: abs(c[0]) + abs(c[1]) + abs(c[2]) for c in cells}
    idx18 = [index[c] for c in cells if manhattan[c] in (1, 2)]
    face6 = frozenset(index[c] for c in cells if manhattan[c] == 1)

    adj26: list[list[int]] = [[] for _ in range(27)]
    adj6: list[list[int]] = [[] for _ in range(27)]
    in18 = set(idx18)
    for a in cells:
        for b in cells:
            if a == b:
                continue
            ia, ib = index[a], index[b]
            cheb = max(abs(a[0] - b[0]), abs(a[1] - b[1]), abs(a[2] - b[2]))
            if cheb == 1 and ia != center and ib != center:
                adj26[ia].append(ib)
            man = abs(a[0] - b[0]) + abs(a[1] - b[1]) + abs(a[2] - b[2])
            if man == 1 and ia in in18 and ib in in18:
                adj6[ia].append(ib)
    return idx26, idx18, face6, adj26, adj6


_IDX26, _IDX18, _FACE6, _ADJ26, _ADJ6 = _build_tables()


def _fg_neighbors_connected(nb: np.ndarray) -> bool:
    """True iff the foreground 26-neighbors form exactly one 26-component.

    Deleting a voxel with this property never changes the foreground
    component count: its neighbors stay mutually connected and nothing
    can be orphaned.
    """
    fg = [i for i in _IDX26 if nb[i]]
    if not fg:
        return False
    seen = {fg[0]}
    stack = [fg[0]]
    fg_set = set(fg)
    while stack:
        i = stack.pop()
        for j in _ADJ26[i]:
            if j in fg_set and j not in seen:
                seen.add(j)
                stack.append(j)
    return len(seen) == len(fg_set)


def _is_simple(nb: np.ndarray) -> bool:
    """nb: flattened 27-cell boolean neighborhood (foreground), center fg."""
    if not _fg_neighbors_connected(nb):
        return False

    # one 6-component of 18-neighborhood background touching a face cell
    bg = {i for i in _IDX18 if not nb[i]}
    faces_bg = [i for i in bg if i in _FACE6]
    if not faces_bg:
        return False
    seen_bg = {faces_bg[0]}
    stack = [faces_bg[0]]
    while stack:
        i = stack.pop()
        for j in _ADJ6[i]:
            if j in bg and j not in seen_bg:
                seen_bg.add(j)
                stack.append(j)
    # every background face cell must lie in that single component
    return all(f in seen_bg for f in faces_bg)


def _neighbor_count26(mask: np.ndarray) -> np.ndarray:
    padded = np.pad(mask, 1).astype(np.uint8)
    total = np.zeros(mask.shape, dtype=np.uint8)
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dz in (-1, 0, 1):
                if dx == dy == dz == 0:
                    continue
                total += padded[1 + dx:1 + dx + mask.shape[0],
                                1 + dy:1 + dy + mask.shape[1],
                                1 + dz:1 + dz + mask.shape[2]]
    return total


def _border_mask(mask: np.ndarray) -> np.ndarray:
    padded = np.pad(mask, 1)
    bg_face = np.zeros(mask.shape, dtype=bool)
    for axis in range(3):
        for sign in (-1, 1):
            sl = [slice(1, -1)] * 3
            sl[axis] = slice(1 + sign, mask.shape[axis] + 1 + sign)
            bg_face |= ~padded[tuple(sl)]
    return mask & bg_face


def _full_block_corners(inner: np.ndarray) -> np.ndarray:
    m = inner
    block = (m[:-1, :-1, :-1] & m[1:, :-1, :-1] & m[:-1, 1:, :-1]
             & m[:-1, :-1, 1:] & m[1:, 1:, :-1] & m[1:, :-1, 1:]
             & m[:-1, 1:, 1:] & m[1:, 1:, 1:])
    return np.argwhere(block)


def _break_blocks(padded: np.ndarray) -> int:
    """Delete voxels of leftover 2x2x2 blocks without changing the fg count.

    Dense tangles can lock the homotopy-preserving pass: every member of
    a remaining block is non-simple (each deletion would open or close a
    tunnel). The contract pins only the component count, so such blocks
    are broken with locally-connected deletions, falling back to a global
    recount when no member qualifies locally.
    """
    deleted = 0
    while True:
        inner = padded[1:-1, 1:-1, 1:-1]
        corners = _full_block_corners(inner)
        if len(corners) == 0:
            return deleted
        progress = False
        for cx, cy, cz in corners:
            for dx, dy, dz in ((a, b, c) for a in (0, 1) for b in (0, 1)
                               for c in (0, 1)):
                x, y, z = cx + dx, cy + dy, cz + dz
                nb = padded[x:x + 3, y:y + 3, z:z + 3].ravel()
                if _fg_neighbors_connected(nb):
                    padded[x + 1, y + 1, z + 1] = False
                    deleted += 1
                    progress = True
                    break
            if progress:
                break
        if progress:
            continue
        base_count = ndimage.label(inner, _STRUCTURES[26])[1]
        for cx, cy, cz in corners:
            for dx, dy, dz in ((a, b, c) for a in (0, 1) for b in (0, 1)
                               for c in (0, 1)):
                x, y, z = cx + dx, cy + dy, cz + dz
                padded[x + 1, y + 1, z + 1] = False
                if ndimage.label(inner, _STRUCTURES[26])[1] == base_count:
                    deleted += 1
                    progress = True
                    break
                padded[x + 1, y + 1, z + 1] = True
            if progress:
                break
        if not progress:  # pragma: no cover - no such configuration is known
            raise RuntimeError(
                "cannot break a 2x2x2 block without changing the component count")


def skeletonize(mask: LabelVolume) -> LabelVolume:
    """Medial-axis thinning preserving the 26-connectivity component count.

    Border points whose deletion provably preserves topology (simple
    points) are removed to a fixpoint, protecting curve endpoints;
    any 2x2x2 blocks that survive that pass are then broken with
    component-count-preserving deletions and the thinning repeated. The
    result is a subset of the input, keeps the component count, and
    contains no fully-foreground 2x2x2 block; already-thin structures
    (1-voxel curves) come back unchanged.
    """
    fg = mask.data > 0
    padded = np.pad(fg, 1)
    shape = fg.shape

    while True:
        while True:
            inner = padded[1:-1, 1:-1, 1:-1]
            candidates = _border_mask(inner)
            if candidates.any():
                counts = _neighbor_count26(inner)
                candidates &= counts > 1  # protect curve endpoints
            coords = np.argwhere(candidates)
            deleted = 0
            for x, y, z in coords:
                if not padded[x + 1, y + 1, z + 1]:
                    continue
                nb = padded[x:x + 3, y:y + 3, z:z + 3].ravel()
                # recheck endpoint against the current state
                live = 0
                for i in _IDX26:
                    if nb[i]:
                        live += 1
                if live <= 1:
                    continue
                if _is_simple(nb):
                    padded[x + 1, y + 1, z + 1] = False
                    deleted += 1
            if deleted == 0:
                break
        if _break_blocks(padded) == 0:
            break

    out = padded[1:-1, 1:-1, 1:-1].astype(np.uint8)
    assert out.shape == shape
    return LabelVolume(mask.grid, out)


def cl_dice(pred: LabelVolume, gt: LabelVolume) -> float:
    """Centerline DICE: harmonic mean of topology precision and sensitivity.

    Tprec = |skel(P) ∩ G| / |skel(P)|, Tsens = |skel(G) ∩ P| / |skel(G)|.
    Conventions: 1.0 when both masks are empty, 0.0 when exactly one is.
    """
    p, g = _masks(pred, gt)
    p_any = bool(p.any())
    g_any = bool(g.any())
    if not p_any and not g_any:
        return 1.0
    if p_any != g_any:
        return 0.0
    skel_p = skeletonize(pred).data > 0
    skel_g = skeletonize(gt).data > 0
    tprec = int((skel_p & g).sum()) / int(skel_p.sum())
    tsens = int((skel_g & p).sum()) / int(skel_g.sum())
    if tprec + tsens == 0.0:
        return 0.0
    return 2.0 * tprec * tsens / (tprec + tsens)


_STRUCTURES = {
    6: ndimage.generate_binary_structure(3, 1),
    18: ndimage.generate_binary_structure(3, 2),
    26: ndimage.generate_binary_structure(3, 3),
}


def largest_component(mask: LabelVolume, connectivity: int = 26) -> LabelVolume:
    """Keep only the largest connected component (ties: smallest linear index)."""
    if connectivity not in _STRUCTURES:
        raise PreconditionError(f"connectivity must be one of {sorted(_STRUCTURES)}")
    fg = mask.data > 0
    labels, count = ndimage.label(fg, structure=_STRUCTURES[connectivity])
    if count == 0:
        return LabelVolume(mask.grid, np.zeros(mask.grid.dims, dtype=np.uint8))
    flat = labels.ravel()
    sizes = np.bincount(flat)
    sizes[0] = -1
    best = sizes.max()
    tied = np.flatnonzero(sizes == best)
    if len(tied) > 1:
        labels_seen, first_index = np.unique(flat, return_index=True)
        first_of = dict(zip(labels_seen.tolist(), first_index.tolist()))
        winner = min(tied, key=lambda lab: first_of[lab])
    else:
        winner = tied[0]
    return LabelVolume(mask.grid, (labels == winner).astype(np.uint8))


def evaluate_pair(pred: LabelVolume, gt: LabelVolume) -> MetricsReport:
    """Full report for one prediction / ground-truth pair."""
    p, g = _masks(pred, gt)
    tp = int((p & g).sum())
    fp = int((p & ~g).sum())
    fn = int((~p & g).sum())
    tn = int((~p & ~g).sum())
    return MetricsReport(
        accuracy=accuracy(pred, gt),
        dice=dice(pred, gt),
        cl_dice=cl_dice(pred, gt),
        tp=tp, fp=fp, fn=fn, tn=tn,
    )


def format_table(reports: dict[str, MetricsReport]) -> str:
    """Fixed-order table (Acc, DICE, clDICE) in percent with one decimal."""
    lines = [f"{'Model':<12} {'Acc':>6} {'DICE':>6} {'clDICE':>7}"]
    for name, r in reports.items():
        lines.append(
            f"{name:<12} {100 * r.accuracy:>6.1f} {100 * r.dice:>6.1f} "
            f"{100 * r.cl_dice:>7.1f}")
    return "\n".join(lines)


def report_to_json(reports: dict[str, MetricsReport]) -> str:
    return json.dumps({name: r.to_dict() for name, r in reports.items()}, indent=2)
