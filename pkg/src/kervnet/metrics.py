"""Confusion counts, percentage metrics and the anomaly-detection balanced accuracy.

All metrics are percentages in [0, 100]. A metric whose denominator is zero
is ``None`` and prints as ``undefined``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError, ShapeError

UNDEFINED = "undefined"


@dataclass(frozen=True)
class ConfusionCounts:
    """``matrix[i, j]`` counts samples of true class ``classes[i]`` predicted as ``classes[j]``.

    For two classes the second one is the positive class.
    """

    classes: tuple
    matrix: np.ndarray

    @classmethod
    def binary(cls, tp: int, fp: int, tn: int, fn: int) -> "ConfusionCounts":
        if min(tp, fp, tn, fn) < 0:
            raise DomainError("confusion counts must be non-negative")
        return cls((0, 1), np.array([[tn, fp], [fn, tp]], dtype=np.int64))

    @property
    def total(self) -> int:
        return int(self.matrix.sum())

    def _binary(self):
        if len(self.classes) != 2:
            raise DomainError("TP/FP/TN/FN are defined for two classes; use one_vs_rest")
        return self.matrix

    @property
    def tp(self) -> int:
        return int(self._binary()[1, 1])

    @property
    def fp(self) -> int:
        return int(self._binary()[0, 1])

    @property
    def tn(self) -> int:
        return int(self._binary()[0, 0])

    @property
    def fn(self) -> int:
        return int(self._binary()[1, 0])

    def support(self) -> dict:
        return {c: int(n) for c, n in zip(self.classes, self.matrix.sum(axis=1))}

    def one_vs_rest(self, positive) -> "ConfusionCounts":
        i = self.classes.index(positive)
        m = self.matrix
        tp = int(m[i, i])
        fn = int(m[i].sum()) - tp
        fp = int(m[:, i].sum()) - tp
        tn = self.total - tp - fn - fp
        return ConfusionCounts.binary(tp, fp, tn, fn)


def confusion(predictions: Sequence, labels: Sequence, classes: Sequence | None = None) -> ConfusionCounts:
    pred = np.asarray(predictions)
    true = np.asarray(labels)
    if pred.shape != true.shape:
        raise ShapeError(f"predictions and labels differ in length: {pred.shape} vs {true.shape}")
    if classes is None:
        classes = sorted(set(true.tolist()) | set(pred.tolist()))
    classes = tuple(classes)
    index = {c: i for i, c in enumerate(classes)}
    m = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(true.tolist(), pred.tolist()):
        if t not in index or p not in index:
            raise DomainError(f"label {t if t not in index else p!r} not in declared classes {classes}")
        m[index[t], index[p]] += 1
    return ConfusionCounts(classes, m)


def _pct(num: float, den: float):
    return 100.0 * num / den if den > 0 else None


@dataclass
class EvalReport:
    accuracy: float | None
    precision: float | None
    tpr: float | None
    fpr: float | None
    per_class_tpr: dict = field(default_factory=dict)
    balanced_accuracy: float | None = None

    def rows(self) -> list[tuple[str, str]]:
        out = [("accuracy", fmt(self.accuracy)), ("precision", fmt(self.precision)),
               ("tpr", fmt(self.tpr)), ("fpr", fmt(self.fpr))]
        out += [(f"tpr[{c}]", fmt(v)) for c, v in self.per_class_tpr.items()]
        if self.balanced_accuracy is not None:
            out.append(("balanced_accuracy", fmt(self.balanced_accuracy)))
        return out

    def to_tsv(self) -> str:
        return "metric\tvalue\n" + "".join(f"{k}\t{v}\n" for k, v in self.rows())

    def table(self) -> str:
        rows = self.rows()
        w = max(len(k) for k, _ in rows)
        return "\n".join(f"{k.ljust(w)}  {v}" for k, v in rows)


def fmt(value, digits: int = 2) -> str:
    return UNDEFINED if value is None else f"{value:.{digits}f}"


def basic_metrics(c: ConfusionCounts) -> EvalReport:
    """Accuracy, precision, TPR and FPR.

    With more than two classes precision, TPR and FPR are macro averages of
    the one-vs-rest values (undefined if any class's value is).
    """
    per_class = {cls: _pct(c.matrix[i, i], c.matrix[i].sum()) for i, cls in enumerate(c.classes)}
    accuracy = _pct(np.trace(c.matrix), c.total)
    if len(c.classes) == 2:
        tp, fp, tn, fn = c.tp, c.fp, c.tn, c.fn
        return EvalReport(accuracy, _pct(tp, tp + fp), _pct(tp, tp + fn), _pct(fp, fp + tn), per_class)
    parts = [basic_metrics(c.one_vs_rest(cls)) for cls in c.classes]

    def macro(name):
        vals = [getattr(p, name) for p in parts]
        return None if any(v is None for v in vals) else float(np.mean(vals))

    return EvalReport(accuracy, macro("precision"), macro("tpr"), macro("fpr"), per_class)


def balanced_accuracy(tprs: Sequence[float], fpr: float) -> float:
    """Mean of the anomaly-class TPRs and the normal-class specificity, weighted equally.

    ``(sum(tprs) + (100 - fpr) * len(tprs)) / (2 * len(tprs))``; the HAR
    protocol passes four TPRs (classes 1, 2, 3, 6).
    """
    tprs = [float(t) for t in tprs]
    if not tprs:
        raise DomainError("balanced_accuracy needs at least one tpr")
    for v in tprs + [float(fpr)]:
        if not 0.0 <= v <= 100.0:
            raise DomainError(f"rates must be percentages in [0, 100], got {v}")
    j = len(tprs)
    return (sum(tprs) + (100.0 - fpr) * j) / (2 * j)


def har_ad_report(flags: Sequence, labels: Sequence, anomaly_classes=(1, 2, 3, 6),
                  normal_class: int = 0) -> EvalReport:
    """Metrics for relabeled HAR detection: ``flags`` are abnormal verdicts, ``labels``
    use 0 for the merged normal class and the original ids for anomaly types."""
    flags = np.asarray(flags).astype(bool)
    labels = np.asarray(labels)
    if flags.shape != labels.shape:
        raise ShapeError(f"flags and labels differ in length: {flags.shape} vs {labels.shape}")
    known = set(anomaly_classes) | {normal_class}
    unknown = set(labels.tolist()) - known
    if unknown:
        raise DomainError(f"unexpected labels {sorted(unknown)}")
    truth = labels != normal_class
    report = basic_metrics(confusion(flags.astype(int), truth.astype(int), (0, 1)))
    per = {}
    for c in anomaly_classes:
        sel = labels == c
        per[c] = _pct(flags[sel].sum(), sel.sum())
    report.per_class_tpr = per
    normal = labels == normal_class
    fpr = _pct(flags[normal].sum(), normal.sum())
    report.fpr = fpr
    if fpr is not None and all(v is not None for v in per.values()):
        report.balanced_accuracy = balanced_accuracy(list(per.values()), fpr)
    return report
