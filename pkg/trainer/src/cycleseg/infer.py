"""Tiled segmenter inference over whole scans.

Real scans skip every GAN component: the normalized volume is tiled
with overlapping patches (grid offsets with the final patch clamped to
the boundary, matching the dataset package's patch semantics),
foreground probabilities are averaged where tiles overlap, and the
average is thresholded at 0.5.
"""

from __future__ import annotations

import numpy as np
import torch

from .data import normalize_scan


def grid_offsets(dim: int, patch: int, stride: int) -> list[int]:
    """Lattice offsets with the last patch clamped to end at the boundary."""
    offsets = list(range(0, dim - patch + 1, stride))
    if offsets[-1] != dim - patch:
        offsets.append(dim - patch)
    return offsets


def infer(scan: np.ndarray, segmenter, patch_size: int, stride: int | None = None,
          threshold: float = 0.5) -> np.ndarray:
    """Segment a raw scan array; returns a uint8 mask of the same shape.

    A scan smaller than the patch along any axis is padded up to the
    patch size (with its minimum value) and processed as a single
    clamped patch; the output is cropped back.
    """
    scan = np.asarray(scan)
    dims = scan.ndim
    if dims not in (2, 3):
        raise ValueError(f"expected a 2D or 3D scan, got shape {scan.shape}")
    stride = patch_size if stride is None else stride
    if stride < 1 or stride > patch_size:
        raise ValueError(f"stride must be in [1, patch_size], got {stride}")

    normalized = normalize_scan(scan)
    original_shape = normalized.shape
    pad = [(0, max(0, patch_size - d)) for d in original_shape]
    if any(p[1] for p in pad):
        normalized = np.pad(normalized, pad, mode="constant",
                            constant_values=np.float32(-1.0))

    prob_sum = np.zeros(normalized.shape, dtype=np.float64)
    hits = np.zeros(normalized.shape, dtype=np.int32)
    axes_offsets = [grid_offsets(d, patch_size, stride) for d in normalized.shape]

    segmenter.eval()
    mesh = np.meshgrid(*axes_offsets, indexing="ij")
    all_offsets = np.stack([m.ravel() for m in mesh], axis=1)
    with torch.no_grad():
        for offset in all_offsets:
            slices = tuple(slice(int(o), int(o) + patch_size) for o in offset)
            tile = torch.as_tensor(np.ascontiguousarray(normalized[slices]))[None, None]
            logits = segmenter(tile)
            prob = torch.softmax(logits, dim=1)[0, 1].numpy()
            prob_sum[slices] += prob
            hits[slices] += 1

    averaged = prob_sum / hits
    mask = (averaged >= threshold).astype(np.uint8)
    crop = tuple(slice(0, d) for d in original_shape)
    return mask[crop]
