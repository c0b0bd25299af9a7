"""The trainer consumes the synthesis package only through its file formats."""

import json

import numpy as np
import pytest
import torch
from venatree.cli import main as venatree_main

from cycleseg.data import ManifestDataset, PatchSampler, normalize_scan


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("ds")
    config = {
        "gco": {"terminal_count": 20, "max_iterations": 4, "rng_seed": None},
        "prebuilt": {
            "nodes": [
                {"id": 0, "pos_um": [320.0, 320.0, 600.0]},
                {"id": 1, "pos_um": [320.0, 320.0, 480.0]},
                {"id": 2, "pos_um": [240.0, 280.0, 360.0]},
                {"id": 3, "pos_um": [400.0, 360.0, 360.0]},
            ],
            "edges": [
                {"from": 0, "to": 1, "radius_um": 80.0, "flow_um3s": None},
                {"from": 1, "to": 2, "radius_um": 60.0, "flow_um3s": None},
                {"from": 1, "to": 3, "radius_um": 60.0, "flow_um3s": None},
            ],
            "root": 0,
        },
        "mask": {"ellipsoid": {"center": [320.0, 320.0, 320.0],
                               "semi_axes": [250.0, 220.0, 200.0]}},
    }
    config_path = tmp / "config.json"
    config_path.write_text(json.dumps(config))
    out = tmp / "out"
    code = venatree_main(["gen-dataset", "--config", str(config_path),
                          "--trees", "2", "--dims", "40,40,40", "--spacing", "16",
                          "--seed", "21", "--out", str(out)])
    assert code == 0
    return out


class TestManifestDataset:
    def test_loads_domain_b_pairs(self, dataset_dir):
        ds = ManifestDataset(dataset_dir / "manifest.json", "B")
        assert len(ds.pairs) == 2
        for pair in ds.pairs:
            assert pair.scan.dtype == np.float32
            assert pair.scan.min() == -1.0 and pair.scan.max() == 1.0
            assert pair.label is not None
            assert pair.label.shape == pair.scan.shape
            assert set(np.unique(pair.label)) <= {0, 1}

    def test_missing_domain_raises(self, dataset_dir):
        with pytest.raises(ValueError, match="domain-A"):
            ManifestDataset(dataset_dir / "manifest.json", "A")

    def test_patch_sampler_deterministic(self, dataset_dir):
        pairs = ManifestDataset(dataset_dir / "manifest.json", "B").pairs
        a = PatchSampler(pairs, pairs, patch_size=16, dims=3, rng_seed=5)
        b = PatchSampler(pairs, pairs, patch_size=16, dims=3, rng_seed=5)
        for step in range(3):
            ta = a(step)
            tb = b(step)
            for x, y in zip(ta, tb):
                assert torch.equal(x, y)
        real_a, real_b, label_b = a(99)
        assert tuple(real_a.shape) == (1, 1, 16, 16, 16)
        assert tuple(label_b.shape) == (1, 16, 16, 16)


class TestNormalize:
    def test_range_and_idempotent_extremes(self):
        rng = np.random.default_rng(0)
        data = rng.integers(0, 256, (10, 10)).astype(np.int16)
        out = normalize_scan(data)
        assert out.min() == -1.0 and out.max() == 1.0

    def test_constant_rejected(self):
        with pytest.raises(ValueError, match="constant"):
            normalize_scan(np.full((4, 4), 7))
