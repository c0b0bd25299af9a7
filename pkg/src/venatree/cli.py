"""Command-line front end: synthesis, dataset generation, evaluation.

Subcommands: synthesize, voxelize, gen-dataset, evaluate, postprocess,
scan-crop. Logs go to stderr; artifacts go to files; small machine-
readable summaries go to stdout. Exit codes: 0 success, 2 validation,
3 I/O or file format, 4 internal error.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import logging
import sys
import traceback
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io as vio
from .errors import ConfigError, FileFormatError, ValidationError
from .gco import (
    EllipsoidMask,
    GcoSchedule,
    VoxelMask,
    make_prebuilt,
    prebuilt_from_dict,
    synthesize_with_trace,
)
from .graph import GcoConfig, load_tree, save_tree
from .metrics import evaluate_pair, format_table, largest_component
from .rasterize import GridSpec, voxelize
from .scangen import otsu_crop, synth_scan

log = logging.getLogger("venatree")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_INTERNAL = 4


# ---------------------------------------------------------------------------
# run configuration file


@dataclass
class RunSpec:
    """Everything a seeded run needs, loaded from one JSON config file."""

    config: GcoConfig
    schedule: GcoSchedule
    prebuilt: "object"
    mask: "object"
    merge_epsilon: float | None
    dataset: dict
    raw: dict


def load_run_config(path) -> RunSpec:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError:
        raise
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from exc

    config = GcoConfig.from_dict(raw.get("gco", {}))
    config.validate()
    schedule = (GcoSchedule.from_list(raw["schedule"]) if "schedule" in raw
                else GcoSchedule.default())

    if "prebuilt" in raw:
        prebuilt = prebuilt_from_dict(raw["prebuilt"])
    elif "prebuilt_path" in raw:
        loaded = load_tree(_resolve(path, raw["prebuilt_path"]))
        prebuilt = make_prebuilt(loaded.nodes.values(), loaded.edges, loaded.root_id)
    else:
        raise ConfigError(f"{path}: config needs 'prebuilt' or 'prebuilt_path'")

    mask_spec = raw.get("mask")
    if not mask_spec:
        raise ConfigError(f"{path}: config needs a 'mask' section")
    if "ellipsoid" in mask_spec:
        ell = mask_spec["ellipsoid"]
        mask = EllipsoidMask(center=tuple(ell["center"]),
                             semi_axes=tuple(ell["semi_axes"]))
    elif "nifti_path" in mask_spec:
        label = vio.read_nifti(_resolve(path, mask_spec["nifti_path"]), kind="label")
        mask = VoxelMask.from_label(label)
    else:
        raise ConfigError(f"{path}: mask must give 'ellipsoid' or 'nifti_path'")

    return RunSpec(
        config=config,
        schedule=schedule,
        prebuilt=prebuilt,
        mask=mask,
        merge_epsilon=raw.get("merge_epsilon"),
        dataset=raw.get("dataset", {}),
        raw=raw,
    )


def _resolve(config_path: Path, rel: str) -> Path:
    p = Path(rel)
    return p if p.is_absolute() else config_path.parent / p


def _parse_triple(text, cast=float, name="value"):
    parts = str(text).split(",")
    if len(parts) == 1:
        return (cast(parts[0]),) * 3
    if len(parts) != 3:
        raise ConfigError(f"{name} must be one value or three comma-separated, got {text!r}")
    return tuple(cast(p) for p in parts)


def _resolve_seed(cli_seed, config_seed) -> tuple[int, bool]:
    """Returns (seed, was_drawn_from_entropy)."""
    if cli_seed is not None:
        return int(cli_seed), False
    if config_seed is not None:
        return int(config_seed), False
    return int(np.random.SeedSequence().entropy % (2 ** 63)), True


# ---------------------------------------------------------------------------
# subcommands


def cmd_synthesize(args) -> int:
    spec = load_run_config(args.config)
    seed, from_entropy = _resolve_seed(args.seed, spec.config.rng_seed)
    spec.config.rng_seed = seed
    if from_entropy:
        log.info("no seed given; drew %d from entropy", seed)

    result = synthesize_with_trace(spec.prebuilt, spec.mask, spec.config,
                                   spec.schedule, spec.merge_epsilon)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tree_path = out / "tree.json"
    save_tree(result.tree, tree_path)

    summary = {
        "node_count": len(result.tree.nodes),
        "terminal_count": len(result.tree.leaf_ids()),
        "total_length_um": result.tree.total_length(),
        "cost_trace": result.cost_trace,
        "rng_seed": result.rng_seed,
        "accepted_sweeps": result.accepted_sweeps,
        "tree_path": str(tree_path),
    }
    (out / "summary.json").write_text(
        json.dumps(summary | {"config": spec.config.to_dict(),
                              "schedule": spec.schedule.to_list()}, indent=2) + "\n",
        encoding="utf-8")
    print(json.dumps(summary))
    log.info("synthesized %d nodes -> %s", len(result.tree.nodes), tree_path)
    return EXIT_OK


def cmd_voxelize(args) -> int:
    tree = load_tree(args.tree)
    grid = GridSpec(dims=_parse_triple(args.dims, int, "--dims"),
                    spacing=_parse_triple(args.spacing, float, "--spacing"),
                    origin=_parse_triple(args.origin, float, "--origin"))
    label = voxelize(tree, grid)
    vio.write_nifti(label, args.out)
    log.info("voxelized %d edges onto %s -> %s", len(tree.edges), grid.dims, args.out)
    print(json.dumps({"foreground_voxels": int(label.data.sum()),
                      "dims": list(grid.dims), "path": str(args.out)}))
    return EXIT_OK


def _sample_seeds(master_seed: int, index: int) -> dict:
    """Stable per-sample seeds derived from (master seed, sample index)."""
    state = np.random.SeedSequence([master_seed, index]).generate_state(6)

    def combine(a: int, b: int) -> int:
        return int(state[a]) | (int(state[b]) << 32)

    return {
        "jitter": combine(0, 1),
        "synthesis": combine(2, 3),
        "scan": combine(4, 5),
    }


def _generate_sample(config_path: str, out_dir: str, index: int, master_seed: int,
                     dims, spacing, origin) -> dict:
    """Worker for one dataset sample; importable so process pools can run it."""
    spec = load_run_config(config_path)
    seeds = _sample_seeds(master_seed, index)
    rng = np.random.Generator(np.random.PCG64(seeds["jitter"]))

    w_c_choices = spec.dataset.get("w_c_choices", [5e-8, 6e-8, 7e-8])
    config = spec.config
    config.material_weight = float(w_c_choices[int(rng.integers(0, len(w_c_choices)))])
    jitter = float(spec.dataset.get("terminal_count_jitter", 0.2))
    if jitter > 0:
        lo = max(1, int(round(config.terminal_count * (1.0 - jitter))))
        hi = max(lo, int(round(config.terminal_count * (1.0 + jitter))))
        config.terminal_count = int(rng.integers(lo, hi + 1))
    config.rng_seed = seeds["synthesis"]
    if config.inlet_flow is not None:
        # keep Q fixed; the per-terminal flow follows the jittered count
        config.terminal_flow = None

    result = synthesize_with_trace(spec.prebuilt, spec.mask, config,
                                   spec.schedule, spec.merge_epsilon)
    grid = GridSpec(dims=dims, spacing=spacing, origin=origin)
    label = voxelize(result.tree, grid)
    scan = synth_scan(label, rng_seed=seeds["scan"])

    out = Path(out_dir)
    tree_name = f"tree_{index:03d}.json"
    label_name = f"label_{index:03d}.nii"
    scan_name = f"scan_{index:03d}.nii"
    save_tree(result.tree, out / tree_name)
    vio.write_nifti(label, out / label_name)
    vio.write_nifti(scan, out / scan_name)
    return {
        "id": f"b{index:03d}",
        "scan_path": scan_name,
        "label_path": label_name,
        "domain": "B",
        "spacing_um": list(grid.spacing),
        "tree_path": tree_name,
        "seeds": seeds,
        "material_weight": config.material_weight,
        "terminal_count": config.terminal_count,
        "foreground_voxels": int(label.data.sum()),
    }


def cmd_gen_dataset(args) -> int:
    if args.trees < 1:
        raise ConfigError(f"--trees must be >= 1, got {args.trees}")
    spec = load_run_config(args.config)
    seed, from_entropy = _resolve_seed(args.seed, spec.config.rng_seed)
    if from_entropy:
        log.info("no seed given; drew %d from entropy", seed)
    dims = _parse_triple(args.dims, int, "--dims")
    spacing = _parse_triple(args.spacing, float, "--spacing")
    origin = _parse_triple(args.origin, float, "--origin")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    records: dict[int, dict] = {}
    failures: dict[int, str] = {}
    indices = list(range(args.trees))
    if args.threads > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.threads) as pool:
            futures = {
                pool.submit(_generate_sample, str(args.config), str(out), i, seed,
                            dims, spacing, origin): i
                for i in indices
            }
            for fut in concurrent.futures.as_completed(futures):
                i = futures[fut]
                try:
                    records[i] = fut.result()
                except Exception as exc:  # noqa: BLE001 - collected and reported
                    failures[i] = str(exc)
    else:
        for i in indices:
            try:
                records[i] = _generate_sample(str(args.config), str(out), i, seed,
                                              dims, spacing, origin)
            except Exception as exc:  # noqa: BLE001
                failures[i] = str(exc)

    samples = []
    for i in sorted(records):
        rec = records[i]
        known = {"id", "scan_path", "label_path", "domain", "spacing_um"}
        samples.append(vio.ManifestSample(
            id=rec["id"], scan_path=rec["scan_path"], domain=rec["domain"],
            spacing_um=tuple(rec["spacing_um"]), label_path=rec["label_path"],
            extra={k: v for k, v in rec.items() if k not in known}))

    manifest = vio.DatasetManifest(
        samples=samples,
        rng_seed=seed,
        config={
            "run_config": spec.raw,
            "grid": {"dims": list(dims), "spacing": list(spacing),
                     "origin": list(origin)},
            "trees_requested": args.trees,
        },
    )
    # written last: a manifest on disk marks a completed (possibly partial) run
    manifest_path = out / "manifest.json"
    vio.write_manifest(manifest, manifest_path)
    print(json.dumps({"manifest": str(manifest_path), "samples": len(samples),
                      "failed": sorted(failures), "rng_seed": seed}))
    for i, msg in sorted(failures.items()):
        log.error("sample %d failed: %s", i, msg)
    if failures:
        return EXIT_INTERNAL
    log.info("wrote %d samples to %s", len(samples), out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    pred = vio.read_nifti(args.pred, kind="label")
    gt = vio.read_nifti(args.gt, kind="label")
    reports = {"raw": evaluate_pair(pred, gt)}
    if args.postprocess:
        cleaned = largest_component(pred, connectivity=args.connectivity)
        reports["postprocessed"] = evaluate_pair(cleaned, gt)
    print(format_table(reports))
    payload = {name: r.to_dict() for name, r in reports.items()}
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
        log.info("report written to %s", args.out)
    return EXIT_OK


def cmd_postprocess(args) -> int:
    pred = vio.read_nifti(args.input, kind="label")
    cleaned = largest_component(pred, connectivity=args.connectivity)
    vio.write_nifti(cleaned, args.out)
    print(json.dumps({
        "kept_voxels": int(cleaned.data.sum()),
        "removed_voxels": int(pred.data.sum()) - int(cleaned.data.sum()),
        "path": str(args.out),
    }))
    return EXIT_OK


def cmd_scan_crop(args) -> int:
    scan = vio.read_nifti(args.input, kind="scan")
    cropped, box = otsu_crop(scan, margin_voxels=args.margin)
    vio.write_nifti(cropped, args.out)
    print(json.dumps({"start": list(box.start), "stop": list(box.stop),
                      "dims": list(cropped.grid.dims), "path": str(args.out)}))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser / entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="venatree",
        description="Synthesize venous trees, build paired scan/label datasets, "
                    "and evaluate vessel segmentations.")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="override the RNG seed (default: config value or entropy)")
    common.add_argument("--threads", type=int, default=1,
                        help="parallel workers where supported")

    p = sub.add_parser("synthesize", parents=[common],
                       help="grow one venous tree from a config file")
    p.add_argument("--config", required=True, help="run-config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("voxelize", parents=[common],
                       help="rasterize a tree JSON into a binary NIfTI label")
    p.add_argument("--tree", required=True)
    p.add_argument("--dims", required=True, help="nx,ny,nz")
    p.add_argument("--spacing", required=True, help="µm per voxel (one or three values)")
    p.add_argument("--origin", default="0", help="grid origin in µm")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_voxelize)

    p = sub.add_parser("gen-dataset", parents=[common],
                       help="generate N (scan,label) pairs plus a manifest")
    p.add_argument("--config", required=True)
    p.add_argument("--trees", type=int, required=True, help="number of samples")
    p.add_argument("--dims", required=True)
    p.add_argument("--spacing", required=True)
    p.add_argument("--origin", default="0")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("evaluate", parents=[common],
                       help="accuracy / DICE / clDICE for a prediction vs ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--postprocess", action="store_true",
                   help="also score after largest-component cleanup")
    p.add_argument("--connectivity", type=int, default=26, choices=(6, 18, 26))
    p.add_argument("--out", default=None, help="optional JSON report path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("postprocess", parents=[common],
                       help="keep only the largest connected component")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--connectivity", type=int, default=26, choices=(6, 18, 26))
    p.set_defaults(func=cmd_postprocess)

    p = sub.add_parser("scan-crop", parents=[common],
                       help="auto-crop a scan to its Otsu foreground box")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--margin", type=int, default=0)
    p.set_defaults(func=cmd_scan_crop)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION
    except (FileFormatError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_IO
    except Exception:  # noqa: BLE001 - last-resort guard for exit code 4
        log.error("internal error:\n%s", traceback.format_exc())
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
