"""Data access: manifest-backed volumes and the synthetic 2D toy pair.

Volumes come from the dataset manifest + NIfTI files produced by the
synthesis package; scans are min-max normalized to [0, 1] and then
mapped to [-1, 1] to match the Tanh range of the generators. Patch
offsets are drawn from a seeded stream, so sample order is
deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from venatree.io import read_manifest, read_nifti


def normalize_scan(data: np.ndarray) -> np.ndarray:
    """Min-max normalize to [0, 1], then affinely map to [-1, 1].

    Works for 2D and 3D arrays (same arithmetic as the dataset package's
    volume normalizer).
    """
    data = np.asarray(data)
    vmin = data.min()
    vmax = data.max()
    if vmin == vmax:
        raise ValueError(f"scan is constant ({vmin}); cannot normalize")
    unit = (data.astype(np.float32) - np.float32(vmin)) / np.float32(vmax - vmin)
    return unit * np.float32(2.0) - np.float32(1.0)


@dataclass
class VolumePair:
    scan: np.ndarray            # normalized to [-1, 1], float32
    label: np.ndarray | None    # binary uint8, same shape


class ManifestDataset:
    """Loads every sample of one domain from a manifest into memory."""

    def __init__(self, manifest_path, domain: str):
        manifest_path = Path(manifest_path)
        manifest = read_manifest(manifest_path)
        base = manifest_path.parent
        self.pairs: list[VolumePair] = []
        for sample in manifest.samples:
            if sample.domain != domain:
                continue
            scan = read_nifti(_resolve(base, sample.scan_path), kind="scan")
            label = None
            if sample.label_path:
                label = read_nifti(_resolve(base, sample.label_path), kind="label").data
            self.pairs.append(VolumePair(scan=normalize_scan(scan.data), label=label))
        if not self.pairs:
            raise ValueError(f"manifest has no domain-{domain} samples")


def _resolve(base: Path, rel: str) -> Path:
    p = Path(rel)
    return p if p.is_absolute() else base / p


class PatchSampler:
    """Seed-deterministic random patches pairing domain A and B independently."""

    def __init__(self, domain_a: list[VolumePair], domain_b: list[VolumePair],
                 patch_size: int, dims: int, rng_seed: int = 0):
        self.domain_a = domain_a
        self.domain_b = domain_b
        self.patch = patch_size
        self.dims = dims
        self.rng = np.random.Generator(np.random.PCG64(rng_seed))

    def _random_patch(self, pair: VolumePair):
        shape = pair.scan.shape
        offsets = []
        for d in shape:
            if d < self.patch:
                raise ValueError(f"volume dim {d} smaller than patch {self.patch}")
            offsets.append(int(self.rng.integers(0, d - self.patch + 1)))
        slices = tuple(slice(o, o + self.patch) for o in offsets)
        scan = pair.scan[slices]
        label = pair.label[slices] if pair.label is not None else None
        return scan, label

    def __call__(self, step: int):
        pair_a = self.domain_a[int(self.rng.integers(0, len(self.domain_a)))]
        pair_b = self.domain_b[int(self.rng.integers(0, len(self.domain_b)))]
        scan_a, _ = self._random_patch(pair_a)
        scan_b, label_b = self._random_patch(pair_b)
        return (_to_tensor(scan_a), _to_tensor(scan_b),
                torch.as_tensor(np.ascontiguousarray(label_b), dtype=torch.float32)
                [None])


def _to_tensor(patch: np.ndarray) -> torch.Tensor:
    return torch.as_tensor(np.ascontiguousarray(patch), dtype=torch.float32)[None, None]


# ---------------------------------------------------------------------------
# 2D toy fixtures


def toy_label(size: int = 32, rng_seed: int = 0) -> np.ndarray:
    """A branching band pattern, roughly a quarter foreground."""
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    label = np.zeros((size, size), dtype=np.uint8)
    row = size // 2
    width = max(2, size // 8)
    label[row - width:row + width, :] = 1
    col = int(rng.integers(size // 4, 3 * size // 4))
    label[row:, col - width // 2:col + width // 2] = 1
    return label


def toy_scan(label: np.ndarray, rng_seed: int) -> np.ndarray:
    """Class-separated uniform noise: background [0,127], foreground [128,255]."""
    rng = np.random.Generator(np.random.Philox(rng_seed))
    draws = rng.integers(0, 128, size=label.shape, dtype=np.int16)
    return (draws + 128 * (label > 0)).astype(np.int16)


def make_toy_sampler(patch: int = 32, rng_seed: int = 0):
    """A single synthetic (scan, label) training pair plus one domain-A scan."""
    label_b = toy_label(patch, rng_seed)
    scan_b = normalize_scan(toy_scan(label_b, rng_seed + 1))
    label_a = toy_label(patch, rng_seed + 2)
    scan_a = normalize_scan(toy_scan(label_a, rng_seed + 3))

    t_a = _to_tensor(scan_a)
    t_b = _to_tensor(scan_b)
    t_label = torch.as_tensor(label_b, dtype=torch.float32)[None]

    def sampler(step: int):
        return t_a, t_b, t_label

    return sampler, (t_b, t_label)
