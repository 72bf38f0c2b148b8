"""End-to-end experiment protocols driven by an :class:`ExperimentConfig`.

Every run writes to ``cfg.out``:

* ``report.txt``     human-readable summary (config, layer tables, training logs, metrics)
* ``metrics.tsv``    one row per trained model
* ``model.ckpt``     checkpoint of the headline model
* ``train_report.json`` per-epoch losses of every training run
* ``timing.json``    wall times; the only file that differs between identical reruns

Detection experiments also write ``detections.tsv`` and export the healthy
calibration split so that ``kervnet detect`` can replay it.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .anomaly import calibrate, detect_samples, detections_table, holdout_split, windows_of
from .config import ExperimentConfig, dump_config
from .data.checkpoint import save_checkpoint
from .data.har import (LabeledWindowSet, apply_standardizer, fit_standardizer, load_har,
                       normal_subset, relabel_for_ad)
from .data.synth import synth_vibration, write_split
from .metrics import basic_metrics, confusion, fmt, har_ad_report
from .models import (BUILDERS, Model, build_har_autoencoder, build_helicopter_autoencoder,
                     enumerate_variants, instantiate)
from .tensor import Rng
from .errors import TrainingDivergenceError
from .training import TrainReport, fit, kfold, one_hot

log = logging.getLogger(__name__)


@dataclass
class RunLog:
    """Accumulates report text, training reports and timings for one experiment."""

    out: Path
    sections: list = field(default_factory=list)
    reports: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def add(self, title: str, body: str) -> None:
        self.sections.append(f"== {title}\n{body.rstrip()}\n")

    def fit(self, name: str, *args, **kwargs) -> TrainReport:
        """:func:`fit` that logs the (possibly partial) report under ``name``."""
        try:
            report = fit(*args, **kwargs)
        except TrainingDivergenceError as exc:
            if exc.report is not None:
                self.record(f"{name} (diverged)", exc.report)
            raise
        self.record(name, report)
        return report

    def record(self, name: str, report: TrainReport) -> None:
        self.reports[name] = {"train_losses": report.train_losses, "val_losses": report.val_losses,
                              "best_epoch": report.best_epoch, "best_val_loss": report.best_val_loss}
        self.timings[name] = report.wall_time
        self.add(f"training {name}", "\n".join(report.lines()))

    def write(self, name: str, text: str) -> Path:
        path = self.out / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        return path

    def finish(self) -> None:
        self.write("report.txt", "\n".join(self.sections))
        self.write("train_report.json", json.dumps(self.reports, indent=1, sort_keys=True) + "\n")
        self.write("timing.json", json.dumps(self.timings, indent=1, sort_keys=True) + "\n")


def slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9.-]+", "_", name).strip("_")


def _tsv(header: list, rows: list) -> str:
    return "\n".join("\t".join(map(str, r)) for r in [header] + rows) + "\n"


def _split_validation(n: int, fraction: float, seed: int, key: str):
    return holdout_split(n, fraction, Rng(seed).spawn(key))


def run(cfg: ExperimentConfig) -> dict:
    """Run the configured experiment; returns its headline results."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    runlog = RunLog(out)
    runlog.add("config", dump_config(cfg))
    runner = {"har-classify": run_har_classify, "har-ad": run_har_ad,
              "vibration-ad": run_vibration_ad}[cfg.experiment]
    try:
        return runner(cfg, runlog)
    finally:
        runlog.finish()


# ---------------------------------------------------------------- HAR classification


def _standardized_har(cfg: ExperimentConfig):
    train, test = load_har(cfg.data.har_root, cfg.data.channels)
    stats = fit_standardizer(train)
    return apply_standardizer(stats, train), apply_standardizer(stats, test), stats


def _class_index(data: LabeledWindowSet) -> np.ndarray:
    return np.searchsorted(np.asarray(data.classes), data.labels)


def _train_classifier(spec, cfg: ExperimentConfig, train: LabeledWindowSet, val: LabeledWindowSet,
                      runlog: RunLog, name: str) -> tuple[Model, TrainReport]:
    k = len(train.classes)
    model = instantiate(spec, cfg.seed)
    report = runlog.fit(name, model, (train.windows, one_hot(_class_index(train), k)),
                        (val.windows, one_hot(_class_index(val), k)), cfg.train, "cross_entropy")
    return model, report


def _classify(model: Model, data: LabeledWindowSet):
    probs = model.predict(data.windows)
    pred = np.asarray(data.classes)[np.argmax(probs, axis=1)]
    c = confusion(pred, data.labels, data.classes)
    return c, basic_metrics(c)


def confusion_grid(c) -> str:
    """Multiclass confusion matrix as a tab-separated grid (row = true class)."""
    header = ["true\\pred"] + [str(k) for k in c.classes]
    rows = [[str(k)] + [str(int(v)) for v in row] for k, row in zip(c.classes, c.matrix)]
    return _tsv(header, rows)


def run_har_classify(cfg: ExperimentConfig, runlog: RunLog) -> dict:
    train, test, stats = _standardized_har(cfg)
    base = BUILDERS[cfg.model.builder]()
    specs = enumerate_variants(base) if cfg.model.grid else [base]
    folds = (kfold(len(train), cfg.model.cv_folds, cfg.seed) if cfg.model.cv_folds
             else [_split_validation(len(train), cfg.data.validation_fraction, cfg.seed, "validation")])
    metric_rows, fold_rows = [], []
    best = None  # (val_loss, name, model, confusion)
    results = {}
    for spec in specs:
        name = spec.metadata.get("variant", spec.name) if cfg.model.grid else spec.name
        runlog.add(f"model {name}", spec.table())
        accs, reports = [], []
        for f, (tr_idx, va_idx) in enumerate(folds):
            run_name = f"{name}/fold{f}" if cfg.model.cv_folds else name
            model, rep = _train_classifier(spec, cfg, train.subset(tr_idx), train.subset(va_idx),
                                           runlog, run_name)
            c, ev = _classify(model, test)
            accs.append(ev.accuracy)
            reports.append(ev)
            fold_rows.append([name, f, rep.best_epoch, repr(rep.best_val_loss), fmt(ev.accuracy)])
            if best is None or rep.best_val_loss < best[0]:
                best = (rep.best_val_loss, run_name, model, c)
        mean = lambda attr: (None if any(getattr(r, attr) is None for r in reports)
                             else float(np.mean([getattr(r, attr) for r in reports])))
        row = [name, fmt(mean("accuracy")), fmt(mean("precision")), fmt(mean("tpr")), fmt(mean("fpr"))]
        metric_rows.append(row)
        results[name] = {"accuracy": mean("accuracy"), "fold_accuracy": accs}
    header = ["model", "accuracy", "precision", "tpr", "fpr"]
    runlog.write("metrics.tsv", _tsv(header, metric_rows))
    runlog.write("folds.tsv", _tsv(["model", "fold", "best_epoch", "best_val_loss", "test_accuracy"],
                                   fold_rows))
    _, best_name, best_model, best_c = best
    runlog.write("confusion.tsv", confusion_grid(best_c))
    save_checkpoint(best_model, runlog.out / "model.ckpt",
                    {"experiment": cfg.experiment, "run": best_name, "standardizer": stats.to_dict()})
    runlog.add("metrics (test split)", _tsv(header, metric_rows))
    runlog.add(f"confusion of {best_name} (row = true class)", confusion_grid(best_c))
    return {"models": results, "best": best_name}


# ---------------------------------------------------------------- anomaly detection shared


def _train_detector(spec, cfg: ExperimentConfig, windows: np.ndarray, calibration: np.ndarray,
                    stats, runlog: RunLog, name: str):
    """Fit an autoencoder on standardized ``windows`` and calibrate on raw ``calibration``."""
    kept, val = _split_validation(len(windows), cfg.data.validation_fraction, cfg.seed, "validation")
    model = instantiate(spec, cfg.seed)
    runlog.fit(name, model, (windows[kept], windows[kept]), (windows[val], windows[val]), cfg.train, "rmse")
    detector = calibrate(model, calibration, cfg.detector.percentile, cfg.detector.window_length, stats)
    cal_results = detect_samples(detector, calibration)
    flagged = np.concatenate([r.window_flags for r in cal_results])
    return detector, float(flagged.mean()), len(flagged)


def _save_detector(detector, path: Path, cfg: ExperimentConfig, variant: str) -> None:
    extra = {"experiment": cfg.experiment, "variant": variant, "detector": detector.metadata()}
    save_checkpoint(detector.model, path, extra)


# ---------------------------------------------------------------- HAR anomaly detection


def run_har_ad(cfg: ExperimentConfig, runlog: RunLog) -> dict:
    train_raw, test_raw = load_har(cfg.data.har_root, cfg.data.channels)
    stats = fit_standardizer(train_raw)
    train = relabel_for_ad(train_raw)
    test = relabel_for_ad(test_raw)
    normal = normal_subset(train)
    kept, cal = holdout_split(len(normal), cfg.detector.calibration_fraction,
                              Rng(cfg.seed).spawn("calibration"))
    calibration = normal.subset(cal, "calibration")
    write_split(calibration, runlog.out / "calibration")
    windows = apply_standardizer(stats, normal.windows[kept])
    header = ["model", "tpr[1]", "tpr[2]", "tpr[3]", "tpr[6]", "fpr", "balanced_accuracy",
              "calibration_flag_rate"]
    rows, results = [], {}
    for i, encoder in enumerate(cfg.model.variants):
        spec = build_har_autoencoder(encoder)
        runlog.add(f"model {encoder}", spec.table())
        detector, cal_rate, n_cal = _train_detector(spec, cfg, windows, calibration.windows, stats,
                                                    runlog, encoder)
        res = detect_samples(detector, test.windows)
        flags = np.array([r.sample_flag for r in res])
        ev = har_ad_report(flags, test.labels)
        rows.append([encoder] + [fmt(ev.per_class_tpr[c]) for c in (1, 2, 3, 6)]
                    + [fmt(ev.fpr), fmt(ev.balanced_accuracy), fmt(100 * cal_rate)])
        results[encoder] = {"per_class_tpr": ev.per_class_tpr, "fpr": ev.fpr,
                            "balanced_accuracy": ev.balanced_accuracy,
                            "calibration_flag_rate": cal_rate, "calibration_windows": n_cal,
                            "threshold": detector.threshold}
        runlog.add(f"detector {encoder}", f"threshold {detector.threshold!r}\n{ev.table()}")
        table = detections_table(res)
        ckpt = runlog.out / "variants" / slug(encoder)
        _save_detector(detector, ckpt / "model.ckpt", cfg, encoder)
        runlog.write(f"variants/{slug(encoder)}/detections.tsv", table)
        if i == 0:
            _save_detector(detector, runlog.out / "model.ckpt", cfg, encoder)
            runlog.write("detections.tsv", table)
    runlog.write("metrics.tsv", _tsv(header, rows))
    runlog.add("metrics (test split)", _tsv(header, rows))
    return {"models": results}


# ---------------------------------------------------------------- vibration anomaly detection


def run_vibration_ad(cfg: ExperimentConfig, runlog: RunLog) -> dict:
    """Synthetic surrogate of the flight-test study: five autoencoder variants, one table."""
    d = cfg.data
    pool, test, labels = synth_vibration(cfg.synth, d.n_normal, d.n_abnormal, n_train=d.n_train)
    kept, cal = holdout_split(len(pool), cfg.detector.calibration_fraction,
                              Rng(cfg.seed).spawn("calibration"))
    train, calibration = pool.subset(kept), pool.subset(cal, "calibration")
    write_split(calibration, runlog.out / "calibration")
    write_split(test, runlog.out / "test")
    stats = fit_standardizer(train)
    windows, _ = windows_of(apply_standardizer(stats, train.windows), cfg.detector.window_length)
    runlog.add("data", f"training windows {len(windows)}, calibration samples {len(calibration)}, "
                       f"test samples {len(test)} ({d.n_normal} normal, {d.n_abnormal} abnormal)")
    header = ["model", "tpr", "precision", "accuracy"]
    rows, results = [], {}
    for i, variant in enumerate(cfg.model.variants):
        spec = build_helicopter_autoencoder(variant, cfg.detector.window_length or cfg.synth.sample_length)
        runlog.add(f"model {variant}", spec.table())
        detector, cal_rate, n_cal = _train_detector(spec, cfg, windows, calibration.windows, stats,
                                                    runlog, variant)
        res = detect_samples(detector, test.windows)
        flags = np.array([r.sample_flag for r in res]).astype(np.int64)
        ev = basic_metrics(confusion(flags, labels, (0, 1)))
        rows.append([variant, fmt(ev.tpr), fmt(ev.precision), fmt(ev.accuracy)])
        results[variant] = {"tpr": ev.tpr, "precision": ev.precision, "accuracy": ev.accuracy,
                            "fpr": ev.fpr, "threshold": detector.threshold,
                            "calibration_flag_rate": cal_rate, "calibration_windows": n_cal}
        runlog.add(f"detector {variant}", f"threshold {detector.threshold!r}\n"
                   f"calibration window flag rate {fmt(100 * cal_rate)}%\n{ev.table()}")
        table = detections_table(res)
        _save_detector(detector, runlog.out / "variants" / slug(variant) / "model.ckpt", cfg, variant)
        runlog.write(f"variants/{slug(variant)}/detections.tsv", table)
        if i == 0:
            _save_detector(detector, runlog.out / "model.ckpt", cfg, variant)
            runlog.write("detections.tsv", table)
    runlog.write("metrics.tsv", _tsv(header, rows))
    runlog.add("metrics (test split)", _tsv(header, rows))
    return {"models": results}
