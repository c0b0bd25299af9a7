"""Training and inference commands.

`cycleseg train` consumes a dataset manifest (domain-B scan/label pairs
plus domain-A scans) or runs the self-contained 2D toy mode;
`cycleseg infer` applies a trained segmenter checkpoint to a NIfTI scan.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import torch

from .data import ManifestDataset, PatchSampler, make_toy_sampler
from .infer import infer
from .train import TrainConfig, load_segmenter, make_trainer, train_loop

log = logging.getLogger("cycleseg")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    defaults = TrainConfig()
    parser.add_argument("--epochs", type=int, default=defaults.epochs)
    parser.add_argument("--steps-per-epoch", type=int, default=50)
    parser.add_argument("--patch", type=int, default=defaults.patch_size)
    parser.add_argument("--lr", type=float, default=defaults.learning_rate)
    parser.add_argument("--lambda-cycle", type=float, default=defaults.lambda_cycle)
    parser.add_argument("--lambda-identity", type=float,
                        default=defaults.lambda_identity)
    parser.add_argument("--lambda-seg", type=float, default=defaults.lambda_seg)
    parser.add_argument("--patience", type=int, default=defaults.early_stop_patience)
    parser.add_argument("--seed", type=int, default=0)


def cmd_train(args) -> int:
    dims = 2 if args.toy2d else 3
    config = TrainConfig(
        lambda_cycle=args.lambda_cycle,
        lambda_identity=args.lambda_identity,
        lambda_seg=args.lambda_seg,
        learning_rate=args.lr,
        epochs=args.epochs,
        patch_size=args.patch,
        early_stop_patience=args.patience,
        dims=dims,
        rng_seed=args.seed,
    )
    config.validate()
    torch.manual_seed(config.rng_seed)

    if args.toy2d:
        sampler, _ = make_toy_sampler(patch=config.patch_size, rng_seed=config.rng_seed)
    else:
        if not args.manifest:
            raise SystemExit("--manifest is required unless --toy2d is given")
        domain_b = ManifestDataset(args.manifest, "B").pairs
        try:
            domain_a = ManifestDataset(args.manifest, "A").pairs
        except ValueError:
            log.warning("manifest has no domain-A scans; using synthetic scans "
                        "as both domains (degenerate adaptation)")
            domain_a = domain_b
        sampler = PatchSampler(domain_a, domain_b, config.patch_size, dims,
                               rng_seed=config.rng_seed)

    trainer = make_trainer(config)
    history = train_loop(trainer, sampler, args.out,
                         steps_per_epoch=args.steps_per_epoch,
                         epochs=config.epochs, log=log.info)
    print(json.dumps({"epochs_run": len(history),
                      "final": history[-1] if history else None,
                      "out": str(args.out)}))
    return 0


def cmd_infer(args) -> int:
    from venatree.io import read_nifti, write_nifti
    from venatree.rasterize import LabelVolume

    segmenter, cfg = load_segmenter(args.checkpoint)
    scan = read_nifti(args.scan, kind="scan")
    patch = args.patch or cfg.patch_size
    mask = infer(scan.data, segmenter, patch_size=patch,
                 stride=args.stride or patch)
    write_nifti(LabelVolume(scan.grid, mask), args.out)
    print(json.dumps({"foreground_voxels": int(mask.sum()), "path": str(args.out)}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cycleseg")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the adaptation + segmentation networks")
    p.add_argument("--manifest", default=None, help="dataset manifest JSON")
    p.add_argument("--toy2d", action="store_true",
                   help="fast 2D smoke mode on a synthetic pair")
    p.add_argument("--out", required=True, help="checkpoints + loss CSV directory")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="segment a scan with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scan", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--patch", type=int, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.set_defaults(func=cmd_infer)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        log.error("%s", exc)
        return 2
    except Exception:  # noqa: BLE001
        import traceback

        log.error("internal error:\n%s", traceback.format_exc())
        return 4


if __name__ == "__main__":
    sys.exit(main())
