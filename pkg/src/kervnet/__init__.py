"""Kervolutional (polynomial-kernel) 1-D networks for time-series classification
and residual-based anomaly detection, in plain numpy."""

from .anomaly import AnomalyDetector, DetectionResult, calibrate, detect_sample, residual, split_windows
from .errors import KervnetError
from .layers import KernelSpec, convolve, kervolve, transposed_convolve
from .metrics import balanced_accuracy, basic_metrics, confusion
from .models import ModelSpec, build_helicopter_autoencoder, build_mixed_classifier, instantiate
from .training import TrainSchedule, fit

__version__ = "0.1.0"

__all__ = [
    "AnomalyDetector", "DetectionResult", "KernelSpec", "KervnetError", "ModelSpec", "TrainSchedule",
    "balanced_accuracy", "basic_metrics", "build_helicopter_autoencoder", "build_mixed_classifier",
    "calibrate", "confusion", "convolve", "detect_sample", "fit", "instantiate", "kervolve",
    "residual", "split_windows", "transposed_convolve",
]
