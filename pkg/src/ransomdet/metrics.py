"""Binary classification metrics, PR curves and feature correlation.

The positive class defaults to malware (label 0). Ratios with a zero
denominator evaluate to 0 and carry ``defined=False`` instead of raising.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .dataset import LABEL_NAMES, MALWARE
from .errors import EmptyInput, LengthMismatch, SingleClassTruth


class Ratio(NamedTuple):
    value: float
    defined: bool

    def __float__(self):
        return float(self.value)


def _ratio(num: int, den: int) -> Ratio:
    if den == 0:
        return Ratio(0.0, False)
    return Ratio(num / den, True)


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int
    positive: int = MALWARE

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def swapped(self) -> "ConfusionMatrix":
        """Same counts seen with the other class as positive."""
        return ConfusionMatrix(self.tn, self.fn, self.fp, self.tp, 1 - self.positive)

    def to_csv(self) -> str:
        """Rows are true labels, columns predicted labels (0 then 1)."""
        neg = 1 - self.positive
        cells = {
            (self.positive, self.positive): self.tp,
            (self.positive, neg): self.fn,
            (neg, self.positive): self.fp,
            (neg, neg): self.tn,
        }
        lines = ["true\\pred,0,1"]
        for t in (0, 1):
            lines.append(f"{t},{cells[(t, 0)]},{cells[(t, 1)]}")
        return "\n".join(lines) + "\n"

    def as_matrix(self) -> np.ndarray:
        """2x2 counts indexed [true label, predicted label]."""
        m = np.zeros((2, 2), dtype=np.int64)
        p, n = self.positive, 1 - self.positive
        m[p, p], m[p, n], m[n, p], m[n, n] = self.tp, self.fn, self.fp, self.tn
        return m


def _labels(a, name):
    a = np.asarray(a).reshape(-1)
    if a.size and not np.isin(a, (0, 1)).all():
        raise ValueError(f"{name} must contain only 0/1 labels")
    return a.astype(np.int8)


def confusion(y_true, y_pred, positive: int = MALWARE) -> ConfusionMatrix:
    t = _labels(y_true, "y_true")
    p = _labels(y_pred, "y_pred")
    if len(t) != len(p):
        raise LengthMismatch(f"{len(t)} true labels vs {len(p)} predictions")
    if len(t) == 0:
        raise EmptyInput("no samples to evaluate")
    tpos = t == positive
    ppos = p == positive
    tp = int(np.count_nonzero(tpos & ppos))
    fp = int(np.count_nonzero(~tpos & ppos))
    fn = int(np.count_nonzero(tpos & ~ppos))
    return ConfusionMatrix(tp, fp, fn, len(t) - tp - fp - fn, positive)


def precision(cm: ConfusionMatrix) -> Ratio:
    return _ratio(cm.tp, cm.tp + cm.fp)


def recall(cm: ConfusionMatrix) -> Ratio:
    return _ratio(cm.tp, cm.tp + cm.fn)


def f1(p, r) -> float:
    """Harmonic mean of precision and recall; 0 when both are 0."""
    p, r = float(p), float(r)
    if p + r == 0:
        return 0.0
    return 2 * p * r / (p + r)


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise EmptyInput("accuracy of zero samples")
    return (cm.tp + cm.tn) / cm.total


@dataclass(frozen=True)
class ClassRow:
    label: int
    precision: float
    recall: float
    f1: float
    support: int

    @property
    def name(self) -> str:
        return f"{LABEL_NAMES[self.label]} ({self.label})"


@dataclass
class MetricsReport:
    positive: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    support: dict[int, int]
    confusion: ConfusionMatrix
    per_class: list[ClassRow]
    undefined: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = {
            "positive_class": self.positive,
            "positive_class_name": LABEL_NAMES[self.positive],
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "support_0": self.support[0],
            "support_1": self.support[1],
            "tp": self.confusion.tp,
            "fp": self.confusion.fp,
            "fn": self.confusion.fn,
            "tn": self.confusion.tn,
        }
        for row in self.per_class:
            for key in ("precision", "recall", "f1"):
                d[f"class_{row.label}_{key}"] = getattr(row, key)
        d["undefined"] = ";".join(self.undefined)
        return d

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value"])
        for k, v in self.to_dict().items():
            w.writerow([k, v])
        return buf.getvalue()

    def to_text(self, digits: int = 4) -> str:
        """Aligned classification report (per-class rows, accuracy, averages)."""
        names = [r.name for r in self.per_class] + ["weighted avg"]
        width = max(len(n) for n in names)
        head = " " * width + "  " + "".join(f"{h:>10}" for h in ("precision", "recall", "f1-score", "support"))
        fmt = f"{{:>10.{digits}f}}"
        lines = [f"positive class: {LABEL_NAMES[self.positive]} ({self.positive})", "", head, ""]
        for r in self.per_class:
            lines.append(
                f"{r.name:>{width}}  " + fmt.format(r.precision) + fmt.format(r.recall)
                + fmt.format(r.f1) + f"{r.support:>10d}"
            )
        total = sum(self.support.values())
        lines.append("")
        lines.append(f"{'accuracy':>{width}}  " + " " * 20 + fmt.format(self.accuracy) + f"{total:>10d}")
        macro = [np.mean([getattr(r, k) for r in self.per_class]) for k in ("precision", "recall", "f1")]
        weights = np.array([r.support for r in self.per_class], dtype=float)
        weighted = [
            float(np.dot(weights, [getattr(r, k) for r in self.per_class]) / weights.sum())
            for k in ("precision", "recall", "f1")
        ]
        for label, vals in (("macro avg", macro), ("weighted avg", weighted)):
            lines.append(f"{label:>{width}}  " + "".join(fmt.format(v) for v in vals) + f"{total:>10d}")
        lines.append("")
        lines.append(
            f"confusion (positive={self.positive}): tp={self.confusion.tp} fp={self.confusion.fp} "
            f"fn={self.confusion.fn} tn={self.confusion.tn}"
        )
        if self.undefined:
            lines.append("undefined (reported as 0): " + ", ".join(self.undefined))
        return "\n".join(lines) + "\n"


def evaluate(y_true, y_pred, positive: int = MALWARE) -> MetricsReport:
    cm = confusion(y_true, y_pred, positive)
    p, r = precision(cm), recall(cm)
    undefined = [n for n, v in (("precision", p), ("recall", r)) if not v.defined]
    rows = []
    for label in (0, 1):
        c = cm if label == positive else cm.swapped()
        cp, cr = precision(c), recall(c)
        rows.append(ClassRow(label, cp.value, cr.value, f1(cp, cr), c.tp + c.fn))
        undefined += [f"class_{label}_{n}" for n, v in (("precision", cp), ("recall", cr)) if not v.defined]
    support = {row.label: row.support for row in rows}
    return MetricsReport(positive, accuracy(cm), p.value, r.value, f1(p, r), support, cm, rows,
                         sorted(set(undefined), key=undefined.index))


class PrPoint(NamedTuple):
    threshold: float
    precision: float
    recall: float
    precision_defined: bool


@dataclass
class PrCurve:
    points: list[PrPoint]
    positive: int = MALWARE

    @property
    def interior(self) -> list[PrPoint]:
        """Points at observed score values (sentinels removed)."""
        return self.points[1:-1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["threshold", "precision", "recall", "precision_defined"])
        for pt in self.points:
            w.writerow([repr(pt.threshold), repr(pt.precision), repr(pt.recall), int(pt.precision_defined)])
        return buf.getvalue()


def pr_curve(y_true, scores, positive: int = MALWARE) -> PrCurve:
    """Precision/recall when predicting positive for ``score >= t``.

    Thresholds are -inf, every distinct score ascending, then +inf. ``scores``
    must rank the positive class high.
    """
    t = _labels(y_true, "y_true")
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    if len(t) != len(s):
        raise LengthMismatch(f"{len(t)} labels vs {len(s)} scores")
    is_pos = t == positive
    n_pos = int(is_pos.sum())
    if n_pos == 0 or n_pos == len(t):
        raise SingleClassTruth("PR curve needs both positive and negative samples")
    pos_sorted = np.sort(s[is_pos])
    neg_sorted = np.sort(s[~is_pos])
    thresholds = np.concatenate([[-np.inf], np.unique(s), [np.inf]])
    tp = n_pos - np.searchsorted(pos_sorted, thresholds, side="left")
    fp = len(neg_sorted) - np.searchsorted(neg_sorted, thresholds, side="left")
    points = []
    for th, a, b in zip(thresholds, tp, fp):
        pr = _ratio(int(a), int(a + b))
        points.append(PrPoint(float(th), pr.value, int(a) / n_pos, pr.defined))
    return PrCurve(points, positive)


@dataclass
class CorrelationMatrix:
    names: list[str]
    values: np.ndarray
    constant: list[str]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([""] + self.names)
        for name, row in zip(self.names, self.values):
            w.writerow([name] + [repr(float(v)) for v in row])
        return buf.getvalue()


def pearson_corr_matrix(ds=None, X=None, names=None) -> CorrelationMatrix:
    """Pearson correlation of every feature pair.

    Pairs touching a constant column are undefined; they are emitted as 0 and
    the column is listed in ``constant``.
    """
    if ds is not None:
        X, names = ds.X, ds.schema.feature_names
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    names = list(names) if names is not None else [f"f{i}" for i in range(d)]
    if n < 2:
        raise EmptyInput("correlation needs at least 2 samples")
    centered = X - X.mean(axis=0)
    cov = centered.T @ centered
    std = np.sqrt(np.diag(cov))
    const = X.min(axis=0) == X.max(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = cov / np.outer(std, std)
    corr = (corr + corr.T) / 2
    corr[const, :] = 0.0
    corr[:, const] = 0.0
    corr = np.clip(corr, -1.0, 1.0)
    idx = np.flatnonzero(~const)
    corr[idx, idx] = 1.0
    return CorrelationMatrix(names, corr, [names[i] for i in np.flatnonzero(const)])
