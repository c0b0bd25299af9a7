import numpy as np
import pytest
from scipy import ndimage

from venatree.errors import GridMismatchError
from venatree.metrics import (
    accuracy,
    cl_dice,
    dice,
    evaluate_pair,
    format_table,
    largest_component,
    skeletonize,
)
from venatree.rasterize import GridSpec, LabelVolume


def vol(data):
    data = np.asarray(data, dtype=np.uint8)
    return LabelVolume(GridSpec(data.shape, 1.0), data)


def count_components_26(mask):
    labels, n = ndimage.label(mask, structure=np.ones((3, 3, 3)))
    return n


def has_full_2x2x2_block(mask):
    m = mask.astype(bool)
    core = (m[:-1, :-1, :-1] & m[1:, :-1, :-1] & m[:-1, 1:, :-1] & m[:-1, :-1, 1:]
            & m[1:, 1:, :-1] & m[1:, :-1, 1:] & m[:-1, 1:, 1:] & m[1:, 1:, 1:])
    return bool(core.any())


def random_blob_mask(rng, shape=(24, 24, 24), p=0.12, dilations=1):
    mask = rng.random(shape) < p
    for _ in range(dilations):
        mask = ndimage.binary_dilation(mask)
    return mask.astype(np.uint8)


class TestDice:
    def test_identical_nonempty(self):
        data = np.zeros((4, 4, 4))
        data[1:3, 1:3, 1:3] = 1
        assert dice(vol(data), vol(data)) == 1.0

    def test_disjoint(self):
        a = np.zeros((4, 4, 4))
        b = np.zeros((4, 4, 4))
        a[0, 0, 0] = 1
        b[3, 3, 3] = 1
        assert dice(vol(a), vol(b)) == 0.0

    def test_half_overlap(self):
        a = np.zeros((4, 4, 4))
        b = np.zeros((4, 4, 4))
        a[0, 0, :4] = 1          # |P| = 4
        b[0, 0, 2:4] = 1         # overlap 2
        b[0, 1, 0:2] = 1         # |G| = 4
        assert dice(vol(a), vol(b)) == 0.5

    def test_both_empty(self):
        assert dice(vol(np.zeros((3, 3, 3))), vol(np.zeros((3, 3, 3)))) == 1.0

    def test_symmetric(self):
        rng = np.random.default_rng(0)
        a = vol(rng.integers(0, 2, (6, 6, 6)))
        b = vol(rng.integers(0, 2, (6, 6, 6)))
        assert dice(a, b) == dice(b, a)

    def test_dim_mismatch(self):
        with pytest.raises(GridMismatchError):
            dice(vol(np.zeros((2, 2, 2))), vol(np.zeros((3, 3, 3))))


class TestAccuracy:
    def test_equal_and_complement(self):
        rng = np.random.default_rng(1)
        g = rng.integers(0, 2, (4, 4, 4))
        assert accuracy(vol(g), vol(g)) == 1.0
        assert accuracy(vol(1 - g), vol(g)) == 0.0

    def test_one_wrong_of_eight(self):
        g = np.zeros((2, 2, 2))
        p = g.copy()
        p[0, 0, 0] = 1
        assert accuracy(vol(p), vol(g)) == 0.875


class TestSkeletonize:
    def test_empty_in_empty_out(self):
        out = skeletonize(vol(np.zeros((5, 5, 5))))
        assert not out.data.any()

    def test_thin_line_unchanged(self):
        data = np.zeros((12, 5, 5), dtype=np.uint8)
        data[2:10, 2, 2] = 1
        out = skeletonize(vol(data))
        np.testing.assert_array_equal(out.data, data)

    def test_solid_bar_thins_to_connected_centerline(self):
        data = np.zeros((5, 5, 11), dtype=np.uint8)
        data[1:4, 1:4, 1:10] = 1
        out = skeletonize(vol(data))
        assert out.data.sum() > 0
        assert np.all(data[out.data > 0] == 1)              # subset of the bar
        assert count_components_26(out.data) == 1           # still one piece
        assert not has_full_2x2x2_block(out.data)           # thin
        assert out.data.sum() < data.sum()

    @pytest.mark.parametrize("seed", range(8))
    def test_random_masks_subset_topology_thinness(self, seed):
        rng = np.random.default_rng(seed)
        mask = random_blob_mask(rng)
        out = skeletonize(vol(mask))
        assert np.all(mask[out.data > 0] == 1)
        assert count_components_26(out.data) == count_components_26(mask)
        assert not has_full_2x2x2_block(out.data)

    @pytest.mark.parametrize("seed", [10017, 10026, 10037])
    def test_dense_tangles_still_thin(self, seed):
        # dense masks can lock the homotopy-preserving pass with 2x2x2
        # blocks whose members are all non-simple; the component-count
        # cleanup must break them
        rng = np.random.default_rng(seed)
        shape = tuple(int(d) for d in rng.integers(12, 33, size=3))
        density = float(rng.uniform(0.05, 0.35))
        mask = rng.random(shape) < density
        if rng.random() < 0.5:
            mask = ndimage.binary_dilation(mask)
        mask = mask.astype(np.uint8)
        out = skeletonize(vol(mask))
        assert np.all(mask[out.data > 0] == 1)
        assert count_components_26(out.data) == count_components_26(mask)
        assert not has_full_2x2x2_block(out.data)


class TestClDice:
    def test_identical_nonempty(self):
        data = np.zeros((8, 8, 8), dtype=np.uint8)
        data[2:6, 2:6, 2:6] = 1
        assert cl_dice(vol(data), vol(data)) == 1.0

    def test_disjoint(self):
        a = np.zeros((8, 8, 8), dtype=np.uint8)
        b = np.zeros((8, 8, 8), dtype=np.uint8)
        a[1, 1, 1:4] = 1
        b[6, 6, 4:7] = 1
        assert cl_dice(vol(a), vol(b)) == 0.0

    def test_exactly_one_empty(self):
        a = np.zeros((4, 4, 4), dtype=np.uint8)
        b = a.copy()
        b[1, 1, 1] = 1
        assert cl_dice(vol(a), vol(b)) == 0.0
        assert cl_dice(vol(b), vol(a)) == 0.0

    def test_both_empty(self):
        z = vol(np.zeros((4, 4, 4)))
        assert cl_dice(z, z) == 1.0

    def test_hand_computed_thin_fixture(self):
        # Both masks are 1-voxel lines, so each is its own skeleton:
        # P covers x in 1..8, G covers x in 3..10, overlap 6 of 8.
        # Tprec = Tsens = 6/8 -> clDICE = 0.75 exactly.
        p = np.zeros((12, 9, 9), dtype=np.uint8)
        g = np.zeros((12, 9, 9), dtype=np.uint8)
        p[1:9, 4, 4] = 1
        g[3:11, 4, 4] = 1
        assert abs(cl_dice(vol(p), vol(g)) - 0.75) <= 1e-12

    def test_thick_pred_over_thin_gt(self):
        # Thick tube fully covers the thin line: Tsens = 1; precision is
        # limited by how much of the tube's centerline leaves the line.
        g = np.zeros((11, 7, 7), dtype=np.uint8)
        g[1:10, 3, 3] = 1
        p = np.zeros((11, 7, 7), dtype=np.uint8)
        p[1:10, 2:5, 2:5] = 1
        value = cl_dice(vol(p), vol(g))
        skel_p = skeletonize(vol(p)).data > 0
        tprec = (skel_p & (g > 0)).sum() / skel_p.sum()
        expected = 2 * tprec * 1.0 / (tprec + 1.0)
        assert value == pytest.approx(expected, abs=1e-12)
        assert 0.0 < value <= 1.0

    def test_symmetric(self):
        rng = np.random.default_rng(3)
        a = vol(random_blob_mask(rng, shape=(14, 14, 14)))
        b = vol(random_blob_mask(rng, shape=(14, 14, 14)))
        assert cl_dice(a, b) == cl_dice(b, a)


class TestLargestComponent:
    def test_blob_plus_floaters(self):
        data = np.zeros((20, 20, 20), dtype=np.uint8)
        data[4:12, 4:12, 4:12] = 1
        floaters = [(0, 0, 0), (19, 19, 19), (0, 19, 0), (15, 1, 18), (1, 18, 2)]
        for f in floaters:
            data[f] = 1
        out = largest_component(vol(data), connectivity=26)
        assert out.data.sum() == 8 ** 3
        for f in floaters:
            assert out.data[f] == 0

    def test_single_component_identity(self):
        data = np.zeros((6, 6, 6), dtype=np.uint8)
        data[1:5, 2, 2] = 1
        out = largest_component(vol(data))
        np.testing.assert_array_equal(out.data, data)

    def test_tie_break_smallest_linear_index(self):
        data = np.zeros((9, 3, 3), dtype=np.uint8)
        data[0:2, 0, 0] = 1   # first in C order
        data[5:7, 2, 2] = 1   # same size, later
        out = largest_component(vol(data), connectivity=6)
        assert out.data[0, 0, 0] == 1 and out.data[5, 2, 2] == 0

    def test_empty_mask_ok(self):
        out = largest_component(vol(np.zeros((3, 3, 3))))
        assert not out.data.any()

    def test_output_connected(self):
        rng = np.random.default_rng(8)
        data = random_blob_mask(rng, dilations=0)
        out = largest_component(vol(data), connectivity=26)
        assert count_components_26(out.data) in (0, 1)


class TestReport:
    def test_postprocess_never_hurts_on_fp_only_fixture(self):
        gt = np.zeros((16, 16, 16), dtype=np.uint8)
        gt[3:13, 7:9, 7:9] = 1
        pred = gt.copy()
        for f in [(0, 0, 0), (15, 15, 15), (0, 15, 0)]:
            pred[f] = 1  # floating false positives only
        raw = evaluate_pair(vol(pred), vol(gt))
        cleaned = largest_component(vol(pred))
        post = evaluate_pair(cleaned, vol(gt))
        assert post.dice > raw.dice
        assert post.cl_dice >= raw.cl_dice

    def test_report_fields_consistent(self):
        rng = np.random.default_rng(4)
        p = vol(rng.integers(0, 2, (6, 6, 6)))
        g = vol(rng.integers(0, 2, (6, 6, 6)))
        r = evaluate_pair(p, g)
        total = r.tp + r.fp + r.fn + r.tn
        assert total == 6 ** 3
        assert r.accuracy == (r.tp + r.tn) / total
        assert 0.0 <= r.dice <= 1.0 and 0.0 <= r.cl_dice <= 1.0

    def test_table_format(self):
        r = evaluate_pair(vol(np.ones((4, 4, 4))), vol(np.ones((4, 4, 4))))
        table = format_table({"pred": r})
        lines = table.splitlines()
        assert "Acc" in lines[0] and "DICE" in lines[0] and "clDICE" in lines[0]
        assert "100.0" in lines[1]
