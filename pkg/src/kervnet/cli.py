"""Command-line front end.

Exit codes: 0 success, 1 gradient check above tolerance, 2 configuration
error, 3 training divergence, 4 data error.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .anomaly import AnomalyDetector, detect_samples, detections_table
from .config import load_config
from .data.checkpoint import load_checkpoint
from .data.har import AD_MERGED, NORMAL
from .data.synth import read_split, write_split
from .errors import (CheckpointError, ConfigurationError, ContractError, DataError, KervnetError,
                     TrainingDivergenceError)
from .gradcheck import LAYER_TAGS, TOLERANCE, run_gradcheck
from .metrics import basic_metrics, confusion, har_ad_report

EXIT_OK = 0
EXIT_GRADCHECK = 1
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_DATA = 4

log = logging.getLogger("kervnet")


def _threads(n: int | None):
    return threadpool_limits(limits=n) if n else contextlib.nullcontext()


def cmd_train(args) -> int:
    from .experiments import run

    cfg = load_config(args.config).with_overrides(args.seed, args.out)
    cfg.validate_paths()
    result = run(cfg)
    print(f"wrote {cfg.out}/report.txt and metrics.tsv")
    for name, values in result["models"].items():
        shown = {k: v for k, v in values.items() if isinstance(v, (int, float)) or v is None}
        print(name, " ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}"
                             for k, v in shown.items()))
    return EXIT_OK


def cmd_synth(args) -> int:
    from .data.synth import synth_vibration

    cfg = load_config(args.config).with_overrides(args.seed, args.out)
    if cfg.experiment != "vibration-ad":
        raise ConfigurationError("synth export needs a vibration-ad config")
    d = cfg.data
    train, test, _ = synth_vibration(cfg.synth, d.n_normal, d.n_abnormal, n_train=d.n_train)
    out = Path(cfg.out)
    for split in (train, test):
        print(write_split(split, out / split.split))
    return EXIT_OK


def cmd_detect(args) -> int:
    try:
        model = load_checkpoint(args.checkpoint)
    except OSError as exc:
        raise DataError(f"cannot read checkpoint: {exc}") from exc
    try:
        detector = AnomalyDetector.from_model(model)
    except ContractError as exc:
        raise ConfigurationError(str(exc)) from exc
    data = read_split(args.input)
    results = detect_samples(detector, data.windows)
    out = Path(args.out or (load_config(args.config).out if args.config else "."))
    out.mkdir(parents=True, exist_ok=True)
    (out / "detections.tsv").write_text(detections_table(results))
    windows = sum(len(r.window_flags) for r in results)
    flagged = sum(int(r.window_flags.sum()) for r in results)
    samples = sum(r.sample_flag for r in results)
    print(f"threshold {detector.threshold!r}")
    print(f"windows {windows} flagged {flagged} ({100 * flagged / max(windows, 1):.2f}%)")
    print(f"samples {len(results)} flagged {samples}")
    return EXIT_OK


def _read_ints(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path} not found")
    tokens = path.read_text().split()
    try:
        return np.array([int(t) for t in tokens], dtype=np.int64)
    except ValueError as exc:
        raise DataError(f"{path}: expected one integer per line ({exc})") from exc


def cmd_evaluate(args) -> int:
    pred = _read_ints(args.predictions)
    labels = _read_ints(args.labels)
    if len(pred) != len(labels):
        raise ConfigurationError(f"{len(pred)} predictions but {len(labels)} labels")
    if not len(pred):
        raise DataError("no predictions to evaluate")
    if args.mode == "har-ad":
        labels = np.where(np.isin(labels, AD_MERGED), NORMAL, labels)
        report = har_ad_report(pred != 0, labels)
    else:
        classes = tuple(sorted(set(labels.tolist()) | set(pred.tolist())))
        if args.mode == "binary":
            classes = (0, 1)
        report = basic_metrics(confusion(pred, labels, classes))
    print(report.table())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    tags = LAYER_TAGS if args.layer == "all" else (args.layer,)
    worst = 0.0
    for tag in tags:
        err = run_gradcheck(tag, args.seed, args.instances, corrupt=args.corrupt)
        print(f"{tag}\tmax_relative_error={err:.3e}")
        worst = max(worst, err)
    return EXIT_OK if worst < TOLERANCE else EXIT_GRADCHECK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kervnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="experiment INI file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--threads", type=int, help="cap BLAS worker threads")

    p = sub.add_parser("train", help="run an experiment end to end")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synth", help="export the synthetic vibration splits")
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("detect", help="apply a calibrated detector checkpoint to a split file")
    common(p, config_required=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="split file written by kervnet (.bin with .idx)")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("evaluate", help="metrics from prediction and label files")
    p.add_argument("--predictions", required=True, help="one integer per line")
    p.add_argument("--labels", required=True, help="one integer per line")
    p.add_argument("--mode", choices=("binary", "multiclass", "har-ad"), default="binary")
    p.set_defaults(func=cmd_evaluate, threads=None)

    p = sub.add_parser("gradcheck", help="finite-difference check of a layer's gradients")
    p.add_argument("--layer", required=True, help=f"one of {', '.join(LAYER_TAGS)} or 'all'")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.command == "gradcheck" and args.layer != "all" and args.layer not in LAYER_TAGS:
        print(f"error: unknown layer tag {args.layer!r}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with _threads(args.threads):
            return args.func(args)
    except TrainingDivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (DataError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigurationError, KervnetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
