"""UCI HAR raw inertial signals, standardization and anomaly-detection relabeling."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import ContractError, DataError, ShapeError

HAR_CLASSES = (1, 2, 3, 4, 5, 6)
CLASS_NAMES = {
    1: "Walking", 2: "Walking upstairs", 3: "Walking downstairs",
    4: "Sitting", 5: "Standing", 6: "Laying",
}
# total acceleration x/y/z and angular velocity x/y/z
DEFAULT_CHANNELS = (
    "total_acc_x", "total_acc_y", "total_acc_z", "body_gyro_x", "body_gyro_y", "body_gyro_z",
)
ALL_CHANNELS = DEFAULT_CHANNELS + ("body_acc_x", "body_acc_y", "body_acc_z")
WINDOW = 128

NORMAL = 0
AD_CLASSES = (0, 1, 2, 3, 6)
AD_MERGED = (4, 5)

STD_GUARD = 1e-12


@dataclass
class LabeledWindowSet:
    """Uniform windows ``(n, length, channels)`` with one integer label each."""

    windows: np.ndarray
    labels: np.ndarray
    split: str = "train"
    classes: tuple = HAR_CLASSES

    def __post_init__(self):
        self.windows = np.ascontiguousarray(self.windows, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.windows.ndim != 3:
            raise ShapeError(f"windows must be (n, length, channels), got {self.windows.shape}")
        if len(self.windows) != len(self.labels):
            raise ShapeError(f"{len(self.windows)} windows but {len(self.labels)} labels")
        bad = set(np.unique(self.labels).tolist()) - set(self.classes)
        if bad:
            raise DataError(f"labels {sorted(bad)} outside declared classes {self.classes}")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx, split: str | None = None) -> "LabeledWindowSet":
        return LabeledWindowSet(self.windows[idx], self.labels[idx], split or self.split, self.classes)

    def counts(self) -> dict:
        return {c: int(np.sum(self.labels == c)) for c in self.classes}


def _read_matrix(path: Path, columns: int | None) -> np.ndarray:
    if not path.is_file():
        raise DataError(f"missing HAR file: {path}")
    try:
        arr = np.loadtxt(path, dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise DataError(f"malformed HAR file {path}: {exc}") from exc
    if columns is not None and arr.shape[1] != columns:
        raise DataError(f"{path}: expected {columns} columns per row, found {arr.shape[1]}")
    return arr


def load_split(root, split: str, channels: Sequence[str] = DEFAULT_CHANNELS) -> LabeledWindowSet:
    root = Path(root)
    signals = []
    for ch in channels:
        signals.append(_read_matrix(root / split / "Inertial Signals" / f"{ch}_{split}.txt", WINDOW))
    labels = _read_matrix(root / split / f"y_{split}.txt", 1)[:, 0]
    rows = {len(s) for s in signals} | {len(labels)}
    if len(rows) != 1:
        raise DataError(f"{split}: row counts differ between channels and labels: {sorted(rows)}")
    if not np.all(labels == np.round(labels)):
        raise DataError(f"{split}: non-integer labels")
    return LabeledWindowSet(np.stack(signals, axis=-1), labels.astype(np.int64), split)


def load_har(root, channels: Sequence[str] = DEFAULT_CHANNELS):
    """Load the published train/test split as ``(train, test)`` window sets."""
    return load_split(root, "train", channels), load_split(root, "test", channels)


# ---------------------------------------------------------------- standardization


@dataclass
class StandardizerStats:
    mean: np.ndarray = field(default_factory=lambda: np.zeros(0))
    std: np.ndarray = field(default_factory=lambda: np.zeros(0))
    count: int = 0

    @property
    def fitted(self) -> bool:
        return self.count > 0

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "count": self.count}

    @classmethod
    def from_dict(cls, d: dict) -> "StandardizerStats":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64),
                   int(d["count"]))


def _values(data) -> np.ndarray:
    arr = data.windows if isinstance(data, LabeledWindowSet) else np.asarray(data, dtype=np.float64)
    return arr.reshape(-1, arr.shape[-1])


def fit_standardizer(train, chunk: int = 65536) -> StandardizerStats:
    """Per-channel mean and (population) std in one streaming pass over chunks."""
    values = _values(train)
    if not len(values):
        raise DataError("cannot fit a standardizer on an empty set")
    n = 0
    mean = np.zeros(values.shape[1])
    m2 = np.zeros(values.shape[1])
    for start in range(0, len(values), chunk):
        block = values[start : start + chunk]
        nb = len(block)
        mb = block.mean(axis=0)
        m2b = ((block - mb) ** 2).sum(axis=0)
        delta = mb - mean
        total = n + nb
        mean = mean + delta * (nb / total)
        m2 = m2 + m2b + delta**2 * (n * nb / total)
        n = total
    return StandardizerStats(mean, np.sqrt(m2 / n), n)


def apply_standardizer(stats: StandardizerStats, data):
    """``(x - mean) / std`` per channel; channels with std < 1e-12 are only centered."""
    if not stats.fitted:
        raise ContractError("standardizer applied before being fitted")
    scale = np.where(stats.std < STD_GUARD, 1.0, stats.std)
    if isinstance(data, LabeledWindowSet):
        return LabeledWindowSet((data.windows - stats.mean) / scale, data.labels, data.split, data.classes)
    return (np.asarray(data, dtype=np.float64) - stats.mean) / scale


# ---------------------------------------------------------------- AD relabeling


def relabel_for_ad(data: LabeledWindowSet) -> LabeledWindowSet:
    """Sitting (4) and standing (5) become the normal class 0; other ids are kept."""
    labels = data.labels.copy()
    labels[np.isin(labels, AD_MERGED)] = NORMAL
    return LabeledWindowSet(data.windows, labels, data.split, AD_CLASSES)


def normal_subset(data: LabeledWindowSet) -> LabeledWindowSet:
    return data.subset(np.flatnonzero(data.labels == NORMAL))
