"""Command-line entry point: ``hymunet <subcommand> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .config import ConfigError, dump_config, load_config
from .data import (DatasetError, SplitSpec, Sample, generate_synthetic, ingest_isic, load_dataset, read_image,
                   resize_image, save_dataset, split, write_mask)
from .metrics import binarize

log = logging.getLogger("hymunet")


class CliError(Exception):
    pass


def _overrides(pairs: Optional[List[str]]) -> dict:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise CliError(f"--set expects section.key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _run_config(args):
    return load_config(getattr(args, "config", None), _overrides(getattr(args, "set", None)))


def _splits(args, cfg):
    if args.data:
        groups = load_dataset(args.data, cfg.data.size)
        return groups.get("train", []), groups.get("val", []), groups.get("test", [])
    ds = generate_synthetic(cfg.data.seed, cfg.data.count, cfg.data.size, cfg.data.artifacts)
    return split(ds, SplitSpec(tuple(cfg.data.ratios), cfg.data.split_seed))


def cmd_gen_data(args) -> int:
    cfg = _run_config(args)
    seed = cfg.data.seed if args.seed is None else args.seed
    count = cfg.data.count if args.count is None else args.count
    size = cfg.data.size if args.size is None else args.size
    artifacts = cfg.data.artifacts if args.artifacts is None else args.artifacts
    if args.isic_images:
        ds = ingest_isic(args.isic_images, args.isic_masks, size)
    else:
        ds = generate_synthetic(seed, count, size, artifacts)
    tr, va, te = split(ds, SplitSpec(tuple(cfg.data.ratios), cfg.data.split_seed))
    save_dataset(args.out, {"train": tr, "val": va, "test": te})
    print(f"wrote {len(ds)} samples ({len(tr)}/{len(va)}/{len(te)}) to {args.out}")
    return 0


def cmd_train(args) -> int:
    from .model import HyMUNet, load_checkpoint, save_checkpoint
    from .training import evaluate, train

    cfg = _run_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump_config(cfg))
    tr, va, te = _splits(args, cfg)
    if not tr:
        raise CliError("training split is empty")
    model = HyMUNet(cfg.model)
    ckpt = out / "best.hymc"
    _, tlog = train(model, tr, va, cfg.train, ckpt_path=ckpt, log_path=out / "trainlog.txt",
                    on_epoch=lambda r: print(" ".join(f"{k}={v:.5g}" if isinstance(v, float) else f"{k}={v}"
                                                      for k, v in r.items()), flush=True))
    if tlog.notes:
        for n in tlog.notes:
            print(f"warning: {n}", file=sys.stderr)
    if not va:
        # nothing to select on, so the last epoch's weights are the result
        print("warning: validation split is empty; saving final weights", file=sys.stderr)
        save_checkpoint(model, ckpt)
    if ckpt.exists() and te:
        best = load_checkpoint(ckpt)
        report = evaluate(best, te, cfg.train.threshold)
        (out / "test_metrics.tsv").write_text(report.to_table())
        (out / "test_metrics.txt").write_text(report.to_keyvalue())
        print(report.to_keyvalue(), end="")
    return 0


def cmd_eval(args) -> int:
    from .model import load_checkpoint
    from .training import evaluate

    model = load_checkpoint(args.checkpoint)
    groups = load_dataset(args.data)
    samples = groups.get(args.split, [])
    size = model.cfg.input_size
    for s in samples:
        if s.image.shape[:2] != (size, size):
            raise CliError(f"{s.id}: size {s.image.shape[:2]} does not match model input {size}x{size}")
    report = evaluate(model, samples, args.threshold)
    table, kv = report.to_table(), report.to_keyvalue()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.tsv").write_text(table)
        (out / "metrics.txt").write_text(kv)
    print(table, end="")
    return 0


def cmd_predict(args) -> int:
    from .model import load_checkpoint
    from .training import predict_proba

    model = load_checkpoint(args.checkpoint)
    size = model.cfg.input_size
    paths = []
    for p in map(Path, args.inputs):
        paths.extend(sorted(q for q in p.iterdir() if q.suffix.lower() in (".png", ".jpg", ".jpeg", ".ppm"))
                     if p.is_dir() else [p])
    if not paths:
        raise CliError("no input images")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for p in paths:
        img = read_image(p)
        if img.shape[:2] != (size, size):
            img = resize_image(img, size)
        prob = predict_proba(model, img.transpose(2, 0, 1)[None])[0, 0]
        write_mask(out / f"{p.stem}.png", binarize(prob, args.threshold))
    print(f"wrote {len(paths)} mask(s) to {out}")
    return 0


def cmd_gradcheck(args) -> int:
    from .checks import OP_CASES, check_op, model_grad_check

    failed = False
    for kind in sorted(OP_CASES):
        err = check_op(kind, trials=args.trials, seed=args.seed)
        ok = err < args.tol
        failed |= not ok
        print(f"{kind:20s} max_rel_err={err:.3e} {'ok' if ok else 'FAIL'}")
    if not args.ops_only:
        err = model_grad_check(size=args.size, seed=args.seed, param_entries=args.param_entries)
        ok = err < args.model_tol
        failed |= not ok
        print(f"{'full-model':20s} max_rel_err={err:.3e} {'ok' if ok else 'FAIL'}")
    return 1 if failed else 0


def cmd_bench(args) -> int:
    from .bench import BENCH_HEADER, bench_scan

    records, slopes = bench_scan(args.lengths, reps=args.reps, channels=args.channels, state_dim=args.state_dim)
    lines = [BENCH_HEADER] + [r.row() for r in records]
    text = "\n".join(lines) + "\n" + "".join(f"# slope {m} = {s:.4f}\n" for m, s in slopes.items())
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return 0


def cmd_ablate(args) -> int:
    from .bench import ablate, ablation_keyvalue, ablation_table

    cfg = _run_config(args)
    tr, va, te = _splits(args, cfg)
    rows = ablate(args.variants, tr, va, te, args.seeds, cfg.model, cfg.train)
    table = ablation_table(rows)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ablation.tsv").write_text(table)
        (out / "ablation.txt").write_text(ablation_keyvalue(rows))
    print(table, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hymunet", description="Hybrid conv/state-space U-Net segmentation")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="command")

    def with_config(p):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")

    p = sub.add_parser("gen-data", help="write a synthetic (or ingested ISIC) dataset directory")
    with_config(p)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--count", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--artifacts", type=float, help="clutter scale, 0 disables it")
    p.add_argument("--isic-images", help="ingest image files from this directory instead")
    p.add_argument("--isic-masks", help="ground-truth mask directory for --isic-images")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train and keep the best-validation-DSC checkpoint")
    with_config(p)
    p.add_argument("--data", help="dataset directory (default: synthetic data from the config)")
    p.add_argument("--out", required=True, help="run directory for checkpoint and logs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on one split of a dataset directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="write binary mask PNGs for images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("inputs", nargs="+", help="image files or directories")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op and the full model")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--model-tol", type=float, default=1e-4)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--param-entries", type=int, default=3)
    p.add_argument("--ops-only", action="store_true")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="time selective scan against quadratic attention")
    p.add_argument("--lengths", type=int, nargs="+", default=[256, 512, 1024, 2048, 4096])
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--channels", type=int, default=16)
    p.add_argument("--state-dim", type=int, default=8)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("ablate", help="train model variants over several seeds and compare")
    with_config(p)
    p.add_argument("--data")
    p.add_argument("--variants", nargs="+", default=["full", "plain-concat", "pure-cnn"])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (CliError, ConfigError, DatasetError, KeyError, ValueError, OSError, FloatingPointError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"hymunet {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
