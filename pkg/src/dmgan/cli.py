"""Command-line entry point: ``dmgan <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import harness
from .config import TrainConfig
from .data import gen_dataset, load_dataset, save_dataset
from .metrics import fid_from_features, read_features

DEFAULT_EXTRACTOR = os.environ.get("DMGAN_EXTRACTOR", "extractor.dmgk")


def _config(path) -> TrainConfig:
    return TrainConfig.load(path) if path else TrainConfig()


def cmd_gen_data(args):
    ds = gen_dataset(args.seed, args.count, args.res)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds)} samples at {args.res}×{args.res} to {args.out}")


def cmd_train(args):
    cfg = _config(args.config)
    data = load_dataset(args.data) if args.data else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.txt")
    trainer = harness.train(cfg, data, out)
    print(f"trained {trainer.step_count} steps; checkpoint {out / harness.CHECKPOINT_NAME}")


def cmd_train_extractor(args):
    ex = harness.train_extractor(seed=args.seed, steps=args.steps, path=args.out)
    print(f"extractor held-out accuracy {ex.accuracy:.4f}; saved to {args.out}")


def cmd_eval(args):
    extractor = harness.load_extractor(args.extractor)
    models, cfg = harness.load_models(args.ckpt)
    test = harness.test_dataset(cfg, args.n)
    grid = args.grid or str(Path(args.report).with_suffix(".png"))
    report = harness.evaluate(models, test, extractor, args.n, seed=args.seed,
                              report_path=args.report, grid_path=grid)
    print(json.dumps(report, indent=2, sort_keys=True))


def cmd_fid(args):
    print(f"{fid_from_features(read_features(args.real), read_features(args.fake)):.6f}")


def cmd_ablate(args):
    extractor = harness.load_extractor(args.extractor)
    cfg = _config(args.config)
    rows = harness.ablation_run(cfg, extractor, seeds=tuple(range(args.seeds)),
                                n_eval=args.n, out_dir=args.out)
    print(harness.format_ablation(rows), end="")


def cmd_inspect(args):
    models, cfg = harness.load_models(args.ckpt)
    result, images, _ = harness.inspect_memory(models, args.caption, k=args.k, seed=args.seed,
                                                max_len=cfg.max_len)
    if args.grid:
        harness.save_grid(args.grid, [images])
        result["grid"] = args.grid
    print(json.dumps(result, indent=2))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dmgan", description="Dynamic-memory text-to-image GAN at desk scale.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", help="render a captioned-shapes dataset")
    s.add_argument("--seed", type=int, default=1234)
    s.add_argument("--count", type=int, default=4800)
    s.add_argument("--res", type=int, default=64)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train", help="train a model from a key=value config")
    s.add_argument("--config", help="config file (defaults when omitted)")
    s.add_argument("--out", required=True, help="run directory; an existing checkpoint there is resumed")
    s.add_argument("--data", help="dataset directory from gen-data (rendered on the fly when omitted)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("train-extractor", help="fit the metric classifier used by eval and ablate")
    s.add_argument("--out", default=DEFAULT_EXTRACTOR)
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--steps", type=int, default=1200)
    s.set_defaults(func=cmd_train_extractor)

    s = sub.add_parser("eval", help="IS / FID / R-precision report for a checkpoint")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--n", type=int, default=2000)
    s.add_argument("--report", required=True)
    s.add_argument("--grid", help="PNG of samples (default: report path with .png)")
    s.add_argument("--extractor", default=DEFAULT_EXTRACTOR)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("fid", help="FID between two DMF1 feature files")
    s.add_argument("--real", required=True)
    s.add_argument("--fake", required=True)
    s.set_defaults(func=cmd_fid)

    s = sub.add_parser("ablate", help="train and compare the four memory variants")
    s.add_argument("--config")
    s.add_argument("--seeds", type=int, default=3)
    s.add_argument("--n", type=int, default=500, help="evaluation samples per run")
    s.add_argument("--out", help="directory for per-run checkpoints and the table")
    s.add_argument("--extractor", default=DEFAULT_EXTRACTOR)
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("inspect", help="top-k words chosen by the memory for one caption")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--caption", required=True)
    s.add_argument("--k", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--grid", help="PNG of the per-stage images")
    s.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        args.func(args)
    except harness.MissingExtractorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
