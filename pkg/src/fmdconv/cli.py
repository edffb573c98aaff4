"""Command-line surface: train, ablate, flops, params, bench, report.

Exit codes: 0 success, 1 runtime failure (e.g. diverged training), 2 usage
error (bad flags, malformed input files).  All machine-readable outputs are
JSON or CSV that the ``report`` verb can re-ingest.  The default output
directory comes from the FMDCONV_OUT environment variable, falling back to
``./runs``.
"""

from __future__ import annotations

import argparse
import json
import os
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from .catalogs import catalog
from .counting import SpecError, count_flops, count_params
from .data import load_dataset, make_synthetic_dataset
from .harness import (
    ABLATION_KINDS,
    TemperatureSchedule,
    TrainConfig,
    TrainingDiverged,
    evaluate_topk,
    parse_config_file,
    run_ablation,
    train,
    write_ablation_csv,
)
from .layers import VARIANTS, build_layer
from .metrics import (
    FLOP_CONVENTION,
    CsvFormatError,
    MetricError,
    read_epochs_csv,
    tradeoff_report,
    write_epochs_csv,
)
from .model import build_model
from .reference_results import check_reported_runs
from .tensor import Tensor, philox_rng

__all__ = ["main", "build_parser"]

TEST_SEED_OFFSET = 7919  # synthetic test split draws from seed + this offset

_VARIANT_NAMES = tuple(sorted(VARIANTS))


class UsageError(ValueError):
    """Maps to exit code 2."""


def _out_dir(args) -> Path:
    base = args.out or os.environ.get("FMDCONV_OUT") or "runs"
    path = Path(base)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _train_config(args) -> TrainConfig:
    """Merge precedence: built-in defaults < --config file < explicit flags."""
    values = {}
    if args.config:
        values.update(parse_config_file(args.config))
    flag_map = {
        "epochs": args.epochs, "batch_size": args.batch_size, "lr0": args.lr0,
        "lr_decay_factor": args.lr_decay_factor, "lr_decay_every": args.lr_decay_every,
        "weight_decay": args.weight_decay, "reduction": args.reduction,
        "seed": args.seed, "t0": args.t0, "t_decrement": args.t_decrement,
        "t_floor": args.t_floor,
    }
    values.update({k: v for k, v in flag_map.items() if v is not None})
    schedule = TemperatureSchedule(t0=values.pop("t0", 40.0),
                                   decrement=values.pop("t_decrement", 3.0),
                                   floor=values.pop("t_floor", 1.0))
    return TrainConfig(temperature=schedule, **values)


def _load_splits(args, seed: int):
    if args.data == "synthetic":
        train_set = make_synthetic_dataset(seed, classes=args.classes,
                                           per_class=args.per_class,
                                           channels=args.in_channels,
                                           height=args.image_size, width=args.image_size)
        test_set = make_synthetic_dataset(seed + TEST_SEED_OFFSET, classes=args.classes,
                                          per_class=args.test_per_class,
                                          channels=args.in_channels,
                                          height=args.image_size, width=args.image_size,
                                          split="test")
        return train_set, test_set
    data_dir = Path(args.data)
    train_path, test_path = data_dir / "train.dat", data_dir / "test.dat"
    for p in (train_path, test_path):
        if not p.is_file():
            raise UsageError(f"dataset directory {data_dir} must contain train.dat and test.dat")
    return load_dataset(train_path, "train"), load_dataset(test_path, "test")


def cmd_train(args) -> int:
    config = _train_config(args)
    train_set, test_set = _load_splits(args, config.seed)
    out = _out_dir(args)
    model = build_model(args.variant, kernels=args.kernels, reduction=config.reduction,
                        class_count=train_set.class_count,
                        in_channels=train_set.images.shape[1], seed=config.seed)
    records, report = train(model, train_set, test_set, config)
    write_epochs_csv(out / "epochs.csv", records)
    (out / "report.json").write_text(report.to_json() + "\n")
    model.save(out / "model.bin")
    top1_c, total = evaluate_topk(model, test_set, 1)
    k5 = min(5, test_set.class_count)
    top5_c, _ = evaluate_topk(model, test_set, k5)
    print(f"variant={args.variant} top1={top1_c / total:.4f} "
          f"top{k5}={top5_c / total:.4f} ies={report.ies:.2f} rcs={report.rcs:.2f}")
    print(f"wrote epochs.csv, report.json, model.bin to {out}")
    return 0


def cmd_ablate(args) -> int:
    if not args.grid.strip():
        raise UsageError("--grid must list at least one value")
    try:
        grid = [float(v) for v in args.grid.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"bad --grid value: {exc}") from exc
    if not grid:
        raise UsageError("--grid must list at least one value")
    config = _train_config(args)
    train_set, test_set = _load_splits(args, config.seed)
    rows = run_ablation(args.kind, grid, config, train_set, test_set,
                        variant=args.variant, kernels=args.kernels)
    out = _out_dir(args)
    path = out / f"ablate_{args.kind}.csv"
    write_ablation_csv(path, rows)
    for row in rows:
        print(f"{args.kind}={row['setting']}: top1={row['top1']:.4f} "
              f"top5={row['top5']:.4f} time={row['mean_epoch_time_s']:.3f}s "
              f"params={row['params']} [{row['status']}]")
    print(f"wrote {path}")
    return 0


def _parse_hw(text: str) -> tuple[int, int]:
    parts = text.lower().split("x")
    if len(parts) != 2:
        raise UsageError(f"expected HxW, got {text!r}")
    try:
        h, w = int(parts[0]), int(parts[1])
    except ValueError as exc:
        raise UsageError(f"expected integer HxW, got {text!r}") from exc
    return h, w


def cmd_counts(args) -> int:
    spec = catalog(args.arch, variant=args.variant, kernels=args.kernels,
                   reduction=args.reduction, classes=args.classes,
                   input_hw=_parse_hw(args.input))
    payload = {
        "arch": args.arch,
        "variant": args.variant,
        "kernels": args.kernels,
        "reduction": args.reduction,
        "classes": args.classes,
        "input": args.input,
        "params": count_params(spec),
        "flops_per_sample": count_flops(spec),
        "flop_convention": FLOP_CONVENTION,
    }
    print(f"{args.arch}/{args.variant} K={args.kernels} r={args.reduction}: "
          f"params={payload['params']:,} flops/sample={payload['flops_per_sample']:,} "
          f"({FLOP_CONVENTION})")
    print(json.dumps(payload, indent=2))
    return 0


def _parse_shape(text: str) -> tuple[int, int, int, int]:
    try:
        n, c, h, w = (int(v) for v in text.lower().split("x"))
    except ValueError as exc:
        raise UsageError(f"expected NxCxHxW, got {text!r}") from exc
    return n, c, h, w


def cmd_bench(args) -> int:
    if args.repeat < 3:
        raise UsageError(f"--repeat must be at least 3, got {args.repeat}")
    variants = [v.strip() for v in args.variant.split(",") if v.strip()]
    for v in variants:
        if v not in VARIANTS:
            raise UsageError(f"unknown variant {v!r}; expected one of {_VARIANT_NAMES}")
    shapes = [_parse_shape(s) for s in args.shapes.split(",") if s.strip()]
    if not shapes:
        raise UsageError("--shapes must list at least one NxCxHxW shape")
    results = []
    for shape in shapes:
        n, c, h, w = shape
        x = Tensor(philox_rng(args.seed or 0).uniform(-1.0, 1.0, (n, c, h, w)))
        for variant in variants:
            cfg = {"variant": variant, "c_in": c, "c_out": c, "kernel_size": 3,
                   "stride": 1, "padding": 1, "groups": 1, "kernels": args.kernels,
                   "reduction": args.reduction, "bias": True}
            layer = build_layer(cfg, rng=philox_rng(1))
            for _ in range(2):  # warm-up
                layer.forward(x, 1.0)
            times = []
            for _ in range(args.repeat):
                start = time.perf_counter()
                layer.forward(x, 1.0)
                times.append(time.perf_counter() - start)
            results.append({
                "variant": variant,
                "shape": "x".join(map(str, shape)),
                "kernels": args.kernels if variant != "static" else 1,
                "repeats": args.repeat,
                "median_s": statistics.median(times),
                "min_s": min(times),
                "mean_s": statistics.fmean(times),
            })
            print(f"{variant:12s} {results[-1]['shape']:>16s} "
                  f"median={results[-1]['median_s'] * 1e3:8.2f} ms "
                  f"min={results[-1]['min_s'] * 1e3:8.2f} ms")
    print(json.dumps({"results": results}, indent=2))
    return 0


def cmd_report(args) -> int:
    if args.paper_check:
        rows = check_reported_runs()
        worst = max(rows, key=lambda r: max(r["ies_deviation"], r["rcs_deviation"]))
        for row in rows:
            dev = max(row["ies_deviation"], row["rcs_deviation"])
            flag = "  <-- exceeds 0.5%" if dev > 0.005 else ""
            print(f"{row['suite']:24s} {row['model']:14s} "
                  f"ies {row['ies']:8.2f} (reported {row['reported_ies']:8.2f}) "
                  f"rcs {row['rcs']:9.2f} (reported {row['reported_rcs']:9.2f}) "
                  f"max dev {dev * 100:6.3f}%{flag}")
        print(f"max deviation: {max(worst['ies_deviation'], worst['rcs_deviation']) * 100:.3f}% "
              f"({worst['suite']} / {worst['model']})")
        return 0
    if not args.infile:
        raise UsageError("report needs --in epochs.csv (or --paper-check)")
    records = read_epochs_csv(args.infile)
    report = tradeoff_report(records, images_per_epoch=args.images_per_epoch)
    text = report.to_json()
    print(text)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text + "\n")
    return 0


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", default="synthetic",
                   help="'synthetic' or a directory containing train.dat/test.dat")
    p.add_argument("--classes", type=int, default=4, help="synthetic class count")
    p.add_argument("--per-class", type=int, default=150,
                   help="synthetic training samples per class")
    p.add_argument("--test-per-class", type=int, default=40,
                   help="synthetic test samples per class")
    p.add_argument("--image-size", type=int, default=16, help="synthetic image side")
    p.add_argument("--in-channels", type=int, default=1, help="synthetic channel count")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--variant", choices=_VARIANT_NAMES, default="fmdconv")
    p.add_argument("--kernels", type=int, default=4)
    p.add_argument("--reduction", type=float, default=None)
    p.add_argument("--t0", type=float, default=None)
    p.add_argument("--t-decrement", type=float, default=None)
    p.add_argument("--t-floor", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr0", type=float, default=None)
    p.add_argument("--lr-decay-factor", type=float, default=None)
    p.add_argument("--lr-decay-every", type=int, default=None)
    p.add_argument("--weight-decay", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None, help="flat key=value config file")
    p.add_argument("--out", default=None,
                   help="output directory (default: $FMDCONV_OUT or ./runs)")
    _add_data_flags(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fmdconv",
                                     description="dynamic convolution benchmark harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train the tiny CNN and emit run artifacts")
    _add_train_flags(p_train)
    p_train.set_defaults(handler=cmd_train)

    p_ablate = sub.add_parser("ablate", help="sweep one hyper-parameter")
    p_ablate.add_argument("--kind", choices=ABLATION_KINDS, required=True)
    p_ablate.add_argument("--grid", required=True, help="comma-separated settings")
    _add_train_flags(p_ablate)
    p_ablate.set_defaults(handler=cmd_ablate)

    for verb in ("flops", "params"):
        p_cnt = sub.add_parser(verb, help=f"print {verb} for an architecture catalog")
        p_cnt.add_argument("--arch", choices=("tiny", "resnet18", "resnet50"),
                           required=True)
        p_cnt.add_argument("--variant", choices=_VARIANT_NAMES, default="fmdconv")
        p_cnt.add_argument("--kernels", type=int, default=4)
        p_cnt.add_argument("--reduction", type=float, default=0.1)
        p_cnt.add_argument("--classes", type=int, default=1000)
        p_cnt.add_argument("--input", default="32x32", help="input size HxW")
        p_cnt.set_defaults(handler=cmd_counts)

    p_bench = sub.add_parser("bench", help="forward-latency micro-benchmark")
    p_bench.add_argument("--variant", default="static,fmdconv,odconv",
                         help="comma-separated variants")
    p_bench.add_argument("--shapes", default="32x64x32x32",
                         help="comma-separated NxCxHxW shapes")
    p_bench.add_argument("--kernels", type=int, default=4)
    p_bench.add_argument("--reduction", type=float, default=0.0625)
    p_bench.add_argument("--repeat", type=int, default=20)
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.set_defaults(handler=cmd_bench)

    p_report = sub.add_parser("report", help="trade-off report from an epochs CSV")
    p_report.add_argument("--in", dest="infile", default=None)
    p_report.add_argument("--images-per-epoch", type=int, default=None)
    p_report.add_argument("--out", default=None, help="also write the JSON here")
    p_report.add_argument("--paper-check", action="store_true",
                          help="recompute the built-in reported benchmark rows "
                               "and print the deviations")
    p_report.set_defaults(handler=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "report" and not args.paper_check and args.images_per_epoch is None:
        parser.error("report needs --images-per-epoch (or --paper-check)")
    try:
        return args.handler(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CsvFormatError as exc:
        print(f"error: malformed CSV: {exc}", file=sys.stderr)
        return 2
    except (ValueError, SpecError, MetricError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
