"""Residual-based anomaly detection with an autoencoder and a percentile threshold.

A window's residual is the mean absolute reconstruction error over time (and
channels). The threshold is a percentile of residuals on healthy data held out
from training. A window is abnormal when its residual strictly exceeds the
threshold, and a sample is abnormal when any of its windows is.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data.har import StandardizerStats, apply_standardizer
from .errors import ContractError, DataError, ShapeError
from .models import Model
from .tensor import as_tensor, percentile

log = logging.getLogger(__name__)

DEFAULT_PERCENTILE = 99.0
CALIBRATION_FRACTION = 0.10


def residual(x, xhat) -> float:
    x = as_tensor(x)
    xhat = as_tensor(xhat)
    if x.shape != xhat.shape:
        raise ShapeError(f"residual: shape mismatch {x.shape} vs {xhat.shape}")
    return float(np.mean(np.abs(x - xhat)))


def split_windows(sample, window_length: int) -> list[np.ndarray]:
    """Contiguous non-overlapping windows along the first axis; the remainder is dropped."""
    if window_length < 1:
        raise DataError(f"window_length must be >= 1, got {window_length}")
    sample = np.asarray(sample, dtype=np.float64)
    total = sample.shape[0]
    if window_length > total:
        log.warning("window length %d exceeds sample length %d; no windows", window_length, total)
        return []
    count, rest = divmod(total, window_length)
    if rest:
        log.warning("dropping %d trailing points (sample %d, window %d)", rest, total, window_length)
    return [sample[i * window_length : (i + 1) * window_length] for i in range(count)]


def windows_of(samples: np.ndarray, window_length: int) -> tuple[np.ndarray, int]:
    """Batch form of :func:`split_windows`: ``(n, T, C)`` -> ``(n * k, W, C)`` and ``k``."""
    samples = np.asarray(samples, dtype=np.float64)
    if window_length == 0:
        return samples, 1
    n, total, channels = samples.shape
    k = total // window_length
    if k == 0:
        log.warning("window length %d exceeds sample length %d; no windows", window_length, total)
        return np.zeros((0, window_length, channels)), 0
    if total % window_length:
        log.warning("dropping %d trailing points per sample", total % window_length)
    trimmed = samples[:, : k * window_length]
    return trimmed.reshape(n * k, window_length, channels), k


def window_residuals(model: Model, windows: np.ndarray, batch_size: int = 256) -> np.ndarray:
    if not len(windows):
        return np.zeros(0)
    recon = model.predict(windows, batch_size)
    return np.abs(windows - recon).mean(axis=tuple(range(1, windows.ndim)))


@dataclass
class AnomalyDetector:
    model: Model
    threshold: float | None = None
    window_length: int = 0
    percentile: float = DEFAULT_PERCENTILE
    calibration_size: int = 0
    standardizer: StandardizerStats | None = None

    def metadata(self) -> dict:
        return {
            "threshold": self.threshold,
            "window_length": self.window_length,
            "percentile": self.percentile,
            "calibration_size": self.calibration_size,
            "standardizer": self.standardizer.to_dict() if self.standardizer else None,
        }

    @classmethod
    def from_model(cls, model: Model) -> "AnomalyDetector":
        meta = model.extra.get("detector")
        if not meta:
            raise ContractError("checkpoint carries no calibrated detector")
        std = meta.get("standardizer")
        return cls(model, meta["threshold"], int(meta["window_length"]), float(meta["percentile"]),
                   int(meta["calibration_size"]), StandardizerStats.from_dict(std) if std else None)

    def prepare(self, samples: np.ndarray) -> np.ndarray:
        samples = np.asarray(samples, dtype=np.float64)
        if samples.ndim == 2:
            samples = samples[..., None]
        if self.standardizer is not None:
            samples = apply_standardizer(self.standardizer, samples)
        return samples


@dataclass
class DetectionResult:
    residuals: np.ndarray
    window_flags: np.ndarray
    sample_flag: bool = field(init=False)

    def __post_init__(self):
        self.sample_flag = bool(np.any(self.window_flags))


def calibrate(model: Model, calibration, percentile_: float = DEFAULT_PERCENTILE,
              window_length: int = 0, standardizer: StandardizerStats | None = None) -> AnomalyDetector:
    """Threshold at the given percentile of residuals over the calibration windows.

    ``calibration`` is ``(n, T, C)`` healthy data never used for training.
    """
    detector = AnomalyDetector(model, None, window_length, percentile_, 0, standardizer)
    samples = detector.prepare(calibration)
    if not len(samples):
        raise DataError("empty calibration set")
    windows, _ = windows_of(samples, window_length)
    res = window_residuals(model, windows)
    if not len(res):
        raise DataError("calibration set yields no windows")
    detector.threshold = percentile(res, percentile_)
    detector.calibration_size = len(res)
    return detector


def _require_calibrated(detector: AnomalyDetector) -> None:
    if detector.threshold is None:
        raise ContractError("detector has not been calibrated")


def flags_for(residuals: np.ndarray, threshold: float) -> np.ndarray:
    return np.asarray(residuals) > threshold


def detect_samples(detector: AnomalyDetector, samples) -> list[DetectionResult]:
    _require_calibrated(detector)
    samples = detector.prepare(samples)
    windows, k = windows_of(samples, detector.window_length)
    res = window_residuals(detector.model, windows).reshape(len(samples), k)
    return [DetectionResult(r, flags_for(r, detector.threshold)) for r in res]


def detect_sample(detector: AnomalyDetector, sample) -> DetectionResult:
    sample = np.asarray(sample, dtype=np.float64)
    if sample.ndim == 1:
        sample = sample[:, None]
    return detect_samples(detector, sample[None])[0]


def detections_table(results: list[DetectionResult], sample_ids=None) -> str:
    """Tab-separated rows: sample_id, window, residual, window_flag, sample_flag."""
    ids = range(len(results)) if sample_ids is None else sample_ids
    lines = ["sample_id\twindow\tresidual\twindow_flag\tsample_flag"]
    for sid, res in zip(ids, results):
        for w, (r, f) in enumerate(zip(res.residuals, res.window_flags)):
            lines.append(f"{sid}\t{w}\t{float(r)!r}\t{int(f)}\t{int(res.sample_flag)}")
    return "\n".join(lines) + "\n"


def holdout_split(n: int, fraction: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """Seeded ``(kept, held_out)`` index split, holding out ``ceil(fraction * n)`` items."""
    order = rng.permutation(n)
    k = max(1, int(np.ceil(fraction * n)))
    return np.sort(order[k:]), np.sort(order[:k])
