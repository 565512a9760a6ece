"""Batch command line: segment, metrics, gradcheck, train-toy, bench.

Reports are JSON (stable key order). Verbs that produce a report print it to
stdout unless a file path is given; exit code 2 flags input or validation
problems, 1 flags a failed gradient check or diverged training.
"""

import argparse
import json
import os
import sys

import numpy as np

from .errors import (
    InvalidConfigError,
    InvalidInputError,
    ParseError,
    ResourceLimitError,
    TrainingDivergedError,
)

# desk-scale training protocol shared by train-toy and the acceptance checks;
# the data seeds stay fixed so every run compares decoders on identical data
TRAIN_DATA_SEED = 20240601
EVAL_DATA_SEED = 20240602
TRAIN_COUNT = 96
EVAL_COUNT = 32
IMAGE_SIZE = 64
DEFAULT_ITERS = 600


def _print_report(report: dict, path: str | None) -> None:
    if path:
        from .fileio import write_report

        write_report(report, path)
        print(f"report written to {path}")
    else:
        print(json.dumps(report, indent=2, sort_keys=True))


def _cmd_segment(args) -> int:
    from .fileio import read_image, write_image, write_labels
    from .superpixels import PipelineConfig, hierarchical_superpixels, overlay_boundaries

    image = read_image(args.input)
    config = PipelineConfig(
        levels=args.levels, tau=args.tau, similarity=args.similarity, pos_weight=args.pos_weight
    )
    results = hierarchical_superpixels(image, config)
    finest = results[-1].labels
    write_labels(finest, args.labels_out)
    write_image(overlay_boundaries(image, finest), args.overlay_out)
    if args.per_level_dir:
        os.makedirs(args.per_level_dir, exist_ok=True)
        for lvl, res in enumerate(results, start=1):
            write_labels(res.labels, os.path.join(args.per_level_dir, f"labels_os{1 << lvl}.csv"))
    n = len(np.unique(finest.labels))
    print(f"segmented {image.height}x{image.width} image into {n} superpixels at level {args.levels}")
    return 0


def _cmd_metrics(args) -> int:
    from .fileio import read_labels
    from .metrics import full_report

    pred = read_labels(args.pred)
    gt = read_labels(args.gt)
    report = full_report(pred, gt, br_tolerance=args.br_tolerance).to_dict()
    _print_report(report, None)
    return 0


def _cmd_gradcheck(args) -> int:
    from .gradcheck import THRESHOLD, run_gradcheck

    report = run_gradcheck(seed=args.seed, eps=args.eps)
    _print_report({"max_rel_err": report, "threshold": THRESHOLD}, None)
    bad = {name: err for name, err in report.items() if not err < THRESHOLD}
    if bad:
        worst = max(bad, key=bad.get)
        print(
            f"gradient check failed: {worst} has max rel err {bad[worst]:.3e} "
            f"(threshold {THRESHOLD})",
            file=sys.stderr,
        )
        return 1
    return 0


def _cmd_train_toy(args) -> int:
    from .toynet import TrainConfig, evaluate, gen_synthetic, train

    config = TrainConfig(iterations=args.iters, decoder=args.decoder, seed=args.seed)
    train_set = gen_synthetic(TRAIN_DATA_SEED, TRAIN_COUNT, IMAGE_SIZE)
    eval_set = gen_synthetic(EVAL_DATA_SEED, EVAL_COUNT, IMAGE_SIZE)
    params, curve = train(config, train_set)
    metrics = {mode: evaluate(params, eval_set, mode) for mode in ("cluster", "bilinear")}
    report = {
        "config": {
            "iterations": config.iterations,
            "batch_size": config.batch_size,
            "base_lr": config.base_lr,
            "momentum": config.momentum,
            "poly_power": config.poly_power,
            "decoder": config.decoder,
            "seed": config.seed,
            "train_samples": len(train_set),
            "eval_samples": len(eval_set),
            "image_size": IMAGE_SIZE,
        },
        "loss_curve": curve,
        "metrics": metrics,
    }
    _print_report(report, args.report)
    for mode in ("cluster", "bilinear"):
        m = metrics[mode]
        print(
            f"decode={mode}: miou={m['miou']:.4f} pixel_acc={m['pixel_acc']:.4f} "
            f"boundary_f1={m['boundary_f1']:.4f}"
        )
    return 0


def _cmd_bench(args) -> int:
    from .bench import run_bench

    report = run_bench(
        args.height,
        args.width,
        levels=args.levels,
        trials=args.trials,
        threads=args.threads,
        seed=args.seed,
    )
    _print_report(report, None)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hierspx",
        description="Hierarchical soft clustering, cluster decoding, and superpixel tools",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("segment", help="hierarchical superpixels for a PPM image")
    p.add_argument("--input", required=True, help="input P6/P5 image")
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--tau", type=float, default=0.07)
    p.add_argument("--pos-weight", type=float, default=0.5)
    p.add_argument("--similarity", choices=("cosine", "nse"), default="nse")
    p.add_argument("--labels-out", required=True, help="finest-level label CSV")
    p.add_argument("--overlay-out", required=True, help="boundary overlay PPM")
    p.add_argument("--per-level-dir", default=None, help="also write per-level label CSVs here")
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=_cmd_segment)

    p = sub.add_parser("metrics", help="superpixel/segmentation metrics for two label CSVs")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--br-tolerance", type=int, default=2)
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("gradcheck", help="finite-difference check of every adjoint")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--eps", type=float, default=1e-6)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("train-toy", help="train the toy net and report both decode modes")
    p.add_argument("--decoder", choices=("cluster", "bilinear"), default="cluster")
    p.add_argument("--iters", type=int, default=DEFAULT_ITERS)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--report", default=None, help="write the JSON report here instead of stdout")
    p.set_defaults(func=_cmd_train_toy)

    p = sub.add_parser("bench", help="time sparse, bilinear, and dense decode kernels")
    p.add_argument("--height", type=int, default=512)
    p.add_argument("--width", type=int, default=512)
    p.add_argument("--levels", type=int, default=2)
    p.add_argument("--trials", type=int, default=30)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=_cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return 2
    except (InvalidInputError, InvalidConfigError, ParseError, ResourceLimitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
