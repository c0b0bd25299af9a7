"""Acceptance suite: one test per release criterion, at pinned tolerances.

Run with `pytest tests/test_acceptance.py -v -s` to see one PASS line per
criterion (a failed criterion shows up as the pytest failure for its test).
"""

import math
import time

import numpy as np
import pytest
from scipy import ndimage

from venatree.cli import main as cli_main
from venatree.gco import (
    EllipsoidMask,
    make_prebuilt,
    relax,
    synthesize_with_trace,
)
from venatree.graph import (
    Edge,
    GcoConfig,
    Node,
    VesselTree,
    edge_cost_terms,
    propagate_flows,
    total_cost,
    update_radii_murray,
    validate_tree,
)
from venatree.io import (
    DatasetManifest,
    ManifestSample,
    read_nifti,
    write_manifest,
    write_nifti,
)
from venatree.metrics import (
    cl_dice,
    dice,
    evaluate_pair,
    largest_component,
    skeletonize,
)
from venatree.rasterize import GridSpec, LabelVolume, voxelize, voxelize_bruteforce
from venatree.scangen import ScanVolume, minmax_normalize, synth_scan


def _pass(name):
    print(f"[ACCEPTANCE] PASS - {name}")


def demo_mask():
    return EllipsoidMask(center=(500.0, 500.0, 500.0), semi_axes=(400.0, 350.0, 300.0))


def demo_prebuilt():
    nodes = [
        Node(0, (500.0, 500.0, 950.0)),
        Node(1, (500.0, 500.0, 780.0)),
        Node(2, (350.0, 450.0, 600.0)),
        Node(3, (650.0, 550.0, 600.0)),
    ]
    edges = [Edge(0, 1, radius=80.0), Edge(1, 2, radius=60.0), Edge(1, 3, radius=60.0)]
    return make_prebuilt(nodes, edges, 0)


def check_physiology(tree, gamma=3.0):
    cmap = tree.children_map()
    pmap = tree.parent_edge_map()
    for nid in tree.nodes:
        kids = cmap[nid]
        if not kids or nid not in pmap:
            continue
        inflow = pmap[nid].flow
        outflow = math.fsum(k.flow for k in kids)
        assert abs(inflow - outflow) <= 1e-9 * max(abs(inflow), abs(outflow))
        rp = pmap[nid].radius
        if len(kids) >= 2:
            residual = abs(rp ** gamma - math.fsum(k.radius ** gamma for k in kids))
            assert residual <= 1e-9 * rp ** gamma


class TestPhysiologySuite:
    def test_flow_and_murray_on_synthesized_trees(self):
        for count, seed in ((50, 11), (250, 12)):
            cfg = GcoConfig(terminal_count=count, rng_seed=seed, max_iterations=6)
            res = synthesize_with_trace(demo_prebuilt(), demo_mask(), cfg)
            assert validate_tree(res.tree) == []
            check_physiology(res.tree)
        _pass("physiology: flow conservation <= 1e-9 and Murray residual <= 1e-9 "
              "on 50- and 250-terminal trees")

    def test_terminal_flow_from_paper_boundary_conditions(self):
        cfg = GcoConfig(terminal_count=68564, inlet_flow=1.167e11, terminal_flow=None)
        _, qt = cfg.resolved_flows()
        assert float(f"{qt:.3g}") == 1.70e6
        _pass("physiology: Q_t = Q/N = 1.70e6 um^3/s to 3 significant figures")

    def test_thousand_terminal_runtime_under_60s(self):
        cfg = GcoConfig(terminal_count=1000, rng_seed=4, max_iterations=6)
        start = time.perf_counter()
        res = synthesize_with_trace(demo_prebuilt(), demo_mask(), cfg)
        elapsed = time.perf_counter() - start
        assert elapsed < 60.0, f"synthesis took {elapsed:.1f}s"
        assert validate_tree(res.tree) == []
        check_physiology(res.tree)
        _pass(f"physiology: 1000-terminal synthesis in {elapsed:.1f}s (< 60s), "
              "invariants hold at every node")


class TestOptimizationSuite:
    def test_cost_trace_monotone(self):
        cfg = GcoConfig(terminal_count=80, rng_seed=3, max_iterations=6)
        res = synthesize_with_trace(demo_prebuilt(), demo_mask(), cfg)
        for earlier, later in zip(res.cost_trace, res.cost_trace[1:]):
            assert later <= earlier + 1e-12
        assert res.cost_trace[-1] < res.cost_trace[0]
        _pass("optimization: recorded cost trace monotone non-increasing (1e-12 slack)")

    def test_planted_kink_matches_grid_search(self):
        nodes = [
            Node(0, (0.0, 0.0, 0.0), fixed=True),
            Node(1, (50.0, 40.0, 0.0)),
            Node(2, (80.0, -10.0, 0.0)),
            Node(3, (80.0, 10.0, 0.0)),
        ]
        edges = [Edge(0, 1, radius=10.0), Edge(1, 2, radius=8.0), Edge(1, 3, radius=8.0)]
        tree = update_radii_murray(propagate_flows(VesselTree(nodes, edges, 0), 1e6), 3.0)
        config = GcoConfig(relax_tolerance=1e-12, max_iterations=300)

        before = total_cost(tree, config).total
        relaxed = relax(tree, config)
        after = total_cost(relaxed, config).total
        assert after < before

        steps = 41
        lo, hi = (0.0, -50.0, -25.0), (100.0, 50.0, 25.0)
        incident = list(tree.edges)
        best_pos, best_cost = None, math.inf
        for x in np.linspace(lo[0], hi[0], steps):
            for y in np.linspace(lo[1], hi[1], steps):
                for z in np.linspace(lo[2], hi[2], steps):
                    cost = 0.0
                    for e in incident:
                        other = e.parent_id if e.child_id == 1 else e.child_id
                        length = math.dist((x, y, z), tree.nodes[other].position)
                        cost += sum(edge_cost_terms(length, e.radius, e.flow,
                                                    config.viscosity,
                                                    config.material_weight))
                    if cost < best_cost:
                        best_cost, best_pos = cost, (x, y, z)
        resolution = max((h - l) / (steps - 1) for l, h in zip(lo, hi))
        assert math.dist(relaxed.nodes[1].position, best_pos) <= math.sqrt(3) * resolution
        assert after <= best_cost + 1e-9 * best_cost
        _pass("optimization: planted-kink relaxation strictly improves and matches "
              "brute-force grid search within the grid resolution")


class TestRasterizationOracle:
    def test_200_randomized_trees_bit_exact(self):
        start = time.perf_counter()
        for case in range(200):
            rng = np.random.default_rng(1000 + case)
            dims = tuple(int(d) for d in rng.integers(8, 65, size=3))
            spacing = float(rng.uniform(0.5, 3.0))
            grid = GridSpec(dims, spacing, origin=tuple(rng.uniform(-10, 10, size=3)))
            extent = spacing * max(dims)
            positions = [rng.uniform(0, extent, size=3)]
            edges = []
            n_edges = int(rng.integers(1, 11))
            for child in range(1, n_edges + 1):
                positions.append(rng.uniform(-0.2 * extent, 1.2 * extent, size=3))
                edges.append(Edge(int(rng.integers(0, child)), child,
                                  radius=float(rng.uniform(0.3, 5.0))))
            tree = VesselTree(
                [Node(i, tuple(map(float, p))) for i, p in enumerate(positions)],
                edges, 0)
            fast = voxelize(tree, grid)
            slow = voxelize_bruteforce(tree, grid)
            assert (fast.data == slow.data).all(), f"case {case} diverged"
        elapsed = time.perf_counter() - start
        assert elapsed < 300.0
        _pass(f"rasterization: 200/200 randomized trees bit-exact vs brute force "
              f"in {elapsed:.0f}s (< 5 min)")


class TestScanSynthesis:
    def test_class_ranges_over_ten_seeds(self):
        rng = np.random.default_rng(0)
        label = LabelVolume(GridSpec((24, 24, 24), 22.6),
                            rng.integers(0, 2, (24, 24, 24)).astype(np.uint8))
        for seed in range(10):
            scan = synth_scan(label, rng_seed=seed)
            fg = scan.data[label.data > 0]
            bg = scan.data[label.data == 0]
            assert int((fg < 128).sum()) == 0
            assert int((bg > 127).sum()) == 0
        _pass("scan synthesis: 10 seeds, zero foreground < 128 and zero "
              "background > 127")

    def test_normalization_exact_extremes(self):
        rng = np.random.default_rng(1)
        scan = ScanVolume(GridSpec((12, 12, 12), 1.0),
                          rng.integers(-300, 900, (12, 12, 12)).astype(np.int16))
        normalized = minmax_normalize(scan)
        assert normalized.data.min() == 0.0
        assert normalized.data.max() == 1.0
        _pass("scan synthesis: min-max normalization maps min->0 and max->1 exactly")


class TestMetricsSuite:
    def test_identities(self):
        rng = np.random.default_rng(2)
        grid = GridSpec((10, 10, 10), 1.0)
        mask = np.zeros((10, 10, 10), dtype=np.uint8)
        mask[2:8, 4:6, 4:6] = 1
        a = LabelVolume(grid, mask)
        other = np.zeros_like(mask)
        other[0, 0, 0] = 1
        b = LabelVolume(grid, other)
        assert dice(a, a) == 1.0 and cl_dice(a, a) == 1.0
        assert dice(a, b) == 0.0 and cl_dice(a, b) == 0.0
        _pass("metrics: DICE/clDICE identities (identical -> 1.0, disjoint -> 0.0)")

    def test_skeleton_properties_on_50_random_masks(self):
        for seed in range(50):
            rng = np.random.default_rng(seed)
            mask = (rng.random((18, 18, 18)) < 0.10)
            mask = ndimage.binary_dilation(mask).astype(np.uint8)
            vol = LabelVolume(GridSpec(mask.shape, 1.0), mask)
            skel = skeletonize(vol).data
            assert np.all(mask[skel > 0] == 1)
            s26 = np.ones((3, 3, 3))
            assert ndimage.label(skel, s26)[1] == ndimage.label(mask, s26)[1]
            m = skel.astype(bool)
            block = (m[:-1, :-1, :-1] & m[1:, :-1, :-1] & m[:-1, 1:, :-1]
                     & m[:-1, :-1, 1:] & m[1:, 1:, :-1] & m[1:, :-1, 1:]
                     & m[:-1, 1:, 1:] & m[1:, 1:, 1:])
            assert not block.any()
        _pass("metrics: skeleton subset / component-count / thinness on 50 "
              "random masks")

    def test_hand_computed_cl_dice_fixture(self):
        # 1-voxel lines are their own skeletons: P spans x 1..8, G spans 3..10,
        # 6 of 8 voxels overlap -> Tprec = Tsens = 0.75 -> clDICE = 0.75.
        p = np.zeros((10, 9, 9), dtype=np.uint8)
        g = np.zeros((10, 9, 9), dtype=np.uint8)
        p[1:9, 4, 4] = 1
        g[3:10, 4, 4] = 1
        g[0, 4, 4] = 0
        grid = GridSpec((10, 9, 9), 1.0)
        value = cl_dice(LabelVolume(grid, p), LabelVolume(grid, g))
        # |P| = 8, |G| = 7, overlap x 3..8 = 6: Tprec = 6/8, Tsens = 6/7
        expected = 2 * (6 / 8) * (6 / 7) / ((6 / 8) + (6 / 7))
        assert abs(value - expected) <= 1e-12
        _pass("metrics: hand-computed clDICE fixture matches to 1e-12")

    def test_postprocess_improves_on_tree_with_floating_fps(self):
        # ground truth: a synthesized tree voxelized onto a small grid;
        # prediction: the same mask plus scattered floating voxels
        cfg = GcoConfig(terminal_count=30, rng_seed=17, max_iterations=4)
        res = synthesize_with_trace(demo_prebuilt(), demo_mask(), cfg)
        grid = GridSpec((48, 48, 48), 25.0)
        gt = voxelize(res.tree, grid)
        assert gt.data.sum() > 0
        pred = gt.data.copy()
        rng = np.random.default_rng(0)
        injected = 0
        while injected < 8:
            spot = tuple(rng.integers(0, 48, size=3))
            neighborhood = gt.data[max(spot[0] - 2, 0):spot[0] + 3,
                                   max(spot[1] - 2, 0):spot[1] + 3,
                                   max(spot[2] - 2, 0):spot[2] + 3]
            if not neighborhood.any():
                pred[spot] = 1
                injected += 1
        pred_vol = LabelVolume(grid, pred)
        raw = evaluate_pair(pred_vol, gt)
        post = evaluate_pair(largest_component(pred_vol), gt)
        assert post.dice > raw.dice
        assert post.cl_dice > raw.cl_dice
        _pass("metrics: largest-component post-processing strictly improves DICE "
              "and clDICE on a ground-truth tree with floating false positives")


class TestDeterminismAndIO:
    def test_dataset_byte_identical_across_thread_counts(self, run_config_path,
                                                         tmp_path, capsys):
        outputs = []
        for threads, sub in (("1", "t1"), ("2", "t2")):
            out = tmp_path / sub
            code = cli_main(["gen-dataset", "--config", str(run_config_path),
                            "--trees", "2", "--dims", "32,32,32", "--spacing", "20",
                            "--seed", "5", "--threads", threads, "--out", str(out)])
            capsys.readouterr()
            assert code == 0
            outputs.append(out)
        for name in ("scan_000.nii", "label_000.nii", "scan_001.nii",
                     "label_001.nii", "tree_000.json", "tree_001.json"):
            assert (outputs[0] / name).read_bytes() == (outputs[1] / name).read_bytes()
        _pass("determinism: same seed gives byte-identical datasets for "
              "1 and 2 worker processes")

    def test_nifti_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(3)
        for dtype, maker in (
            (np.uint8, lambda: rng.integers(0, 2, (6, 5, 4)).astype(np.uint8)),
            (np.int16, lambda: rng.integers(-400, 400, (6, 5, 4)).astype(np.int16)),
            (np.float32, lambda: rng.normal(size=(6, 5, 4)).astype(np.float32)),
        ):
            data = maker()
            grid = GridSpec((6, 5, 4), 22.6)
            vol = LabelVolume(grid, data) if dtype == np.uint8 else ScanVolume(grid, data)
            path = tmp_path / f"{np.dtype(dtype).name}.nii"
            write_nifti(vol, path)
            back = read_nifti(path)
            assert back.data.tobytes() == data.tobytes()
            assert back.grid.spacing == (float(np.float32(22.6)),) * 3
        _pass("io: NIfTI round trip bit-exact for uint8/int16/float32, spacing "
              "kept at float32 precision")

    def test_manifest_rejects_labelless_domain_b(self, tmp_path):
        scan = ScanVolume(GridSpec((2, 2, 2), 1.0), np.zeros((2, 2, 2), dtype=np.int16))
        write_nifti(scan, tmp_path / "scan.nii")
        bad = DatasetManifest(samples=[ManifestSample(
            id="b0", scan_path="scan.nii", domain="B", spacing_um=(1.0, 1.0, 1.0))])
        with pytest.raises(Exception, match="label"):
            write_manifest(bad, tmp_path / "manifest.json")
        _pass("io: manifest validation rejects a domain-B sample without a label")
