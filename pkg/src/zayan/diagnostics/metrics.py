"""Metrics computed from stored class probabilities and labels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _check(probs, labels):
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise ValueError(f"probs {probs.shape} and labels {labels.shape} do not align")
    return probs, labels


@dataclass(frozen=True)
class ReliabilityBins:
    """Equal-width confidence bins; bin ``b`` covers ``(edges[b], edges[b+1]]``.

    A confidence of exactly 0 falls in the first bin. ``conf_sum`` and
    ``correct_sum`` are kept so runs can be pooled with :func:`merge_bins`.
    """

    edges: np.ndarray
    counts: np.ndarray
    conf_sum: np.ndarray
    correct_sum: np.ndarray

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def mean_confidence(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.counts > 0, self.conf_sum / self.counts, np.nan)

    @property
    def accuracy(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.counts > 0, self.correct_sum / self.counts, np.nan)

    @property
    def ece(self) -> float:
        nz = self.counts > 0
        gap = np.abs(self.correct_sum[nz] - self.conf_sum[nz])  # count * |acc - conf|
        return float(gap.sum() / self.n)

    def to_dict(self) -> dict:
        return {
            "edges": self.edges.tolist(),
            "counts": self.counts.tolist(),
            "mean_confidence": [None if np.isnan(v) else float(v) for v in self.mean_confidence],
            "accuracy": [None if np.isnan(v) else float(v) for v in self.accuracy],
            "ece": self.ece,
        }


def expected_calibration_error(probs, labels, n_bins: int = 10) -> ReliabilityBins:
    probs, labels = _check(probs, labels)
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    conf = probs.max(axis=1)
    correct = (probs.argmax(axis=1) == labels).astype(np.float64)
    idx = np.clip(np.ceil(conf * n_bins).astype(np.int64) - 1, 0, n_bins - 1)
    return ReliabilityBins(
        np.linspace(0.0, 1.0, n_bins + 1),
        np.bincount(idx, minlength=n_bins),
        np.bincount(idx, weights=conf, minlength=n_bins),
        np.bincount(idx, weights=correct, minlength=n_bins),
    )


def merge_bins(a: ReliabilityBins, b: ReliabilityBins) -> ReliabilityBins:
    if not np.array_equal(a.edges, b.edges):
        raise ValueError("bin edges differ")
    return ReliabilityBins(a.edges, a.counts + b.counts, a.conf_sum + b.conf_sum, a.correct_sum + b.correct_sum)


def selective_prediction_curve(probs, labels, thresholds) -> list[tuple[float, float, float | None]]:
    """``(threshold, coverage, accuracy)`` keeping rows with max-prob >= threshold.

    Accuracy is ``None`` when nothing is retained.
    """
    probs, labels = _check(probs, labels)
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if np.any(np.diff(thresholds) < 0):
        raise ValueError("thresholds must be sorted ascending")
    conf = probs.max(axis=1)
    correct = probs.argmax(axis=1) == labels
    out = []
    for t in thresholds:
        keep = conf >= t
        k = int(keep.sum())
        out.append((float(t), k / len(conf), float(correct[keep].mean()) if k else None))
    return out


def top2_margin(probs) -> np.ndarray:
    s = np.sort(np.asarray(probs, dtype=np.float64), axis=1)
    return s[:, -1] - s[:, -2]


def true_class_margin(probs, labels) -> np.ndarray:
    """``p_true - max_{k != true} p_k``; negative exactly when the row is misclassified."""
    probs, labels = _check(probs, labels)
    rows = np.arange(len(labels))
    p_true = probs[rows, labels]
    other = probs.copy()
    other[rows, labels] = -np.inf
    return p_true - other.max(axis=1)


def class_ranks(probs, labels) -> np.ndarray:
    """0-based rank of the true class, ties ordered by lower class index first."""
    probs, labels = _check(probs, labels)
    p_true = probs[np.arange(len(labels)), labels][:, None]
    cls = np.arange(probs.shape[1])[None, :]
    ahead = (probs > p_true) | ((probs == p_true) & (cls < labels[:, None]))
    return ahead.sum(axis=1)


@dataclass(frozen=True)
class MarginTopK:
    margins: np.ndarray
    topk: dict[int, float]
    mean_margin_correct: float | None
    mean_margin_incorrect: float | None

    def to_dict(self) -> dict:
        return {
            "topk": {str(k): v for k, v in self.topk.items()},
            "mean_margin_correct": self.mean_margin_correct,
            "mean_margin_incorrect": self.mean_margin_incorrect,
            "margin_mean": float(self.margins.mean()),
        }


def margin_topk(probs, labels, ks=(1, 2, 3, 5)) -> MarginTopK:
    probs, labels = _check(probs, labels)
    c = probs.shape[1]
    if c < 2:
        raise ValueError("need at least two classes")
    bad = [k for k in ks if k > c or k < 1]
    if bad:
        raise ValueError(f"k values {bad} outside [1, {c}]")
    ranks = class_ranks(probs, labels)
    margins = top2_margin(probs)
    correct = ranks == 0
    return MarginTopK(
        margins,
        {int(k): float((ranks < k).mean()) for k in ks},
        float(margins[correct].mean()) if correct.any() else None,
        float(margins[~correct].mean()) if (~correct).any() else None,
    )


def coverage_margin_curve(probs, labels, thresholds) -> list[tuple[float, float, float | None]]:
    """``(t, coverage, error)`` retaining rows whose top1-top2 margin exceeds ``t``."""
    probs, labels = _check(probs, labels)
    m = top2_margin(probs)
    wrong = probs.argmax(axis=1) != labels
    out = []
    for t in np.asarray(thresholds, dtype=np.float64):
        keep = m > t
        k = int(keep.sum())
        out.append((float(t), k / len(m), float(wrong[keep].mean()) if k else None))
    return out


@dataclass(frozen=True)
class TriageResult:
    auc: float
    threshold: float
    sensitivity: float
    specificity: float
    accuracy: float
    precision: float
    recall: float
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray

    def to_dict(self) -> dict:
        return {k: float(getattr(self, k)) for k in
                ("auc", "threshold", "sensitivity", "specificity", "accuracy", "precision", "recall")}


def roc_curve(scores, positive) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """ROC points for the rule ``score >= t`` at each unique score, plus (0, 0)."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    ts = np.unique(scores)[::-1]
    p, n = positive.sum(), (~positive).sum()
    tp = np.array([(positive & (scores >= t)).sum() for t in ts])
    fp = np.array([(~positive & (scores >= t)).sum() for t in ts])
    tpr = np.concatenate([[0.0], tp / p])
    fpr = np.concatenate([[0.0], fp / n])
    return fpr, tpr, np.concatenate([[np.inf], ts])


def triage_metrics(probs, labels, positive_class: int = 0) -> TriageResult:
    """One-vs-rest ROC analysis with the operating point chosen by Youden's J.

    Among thresholds with equal J the one with higher sensitivity wins.
    """
    probs, labels = _check(probs, labels)
    pos = labels == positive_class
    if pos.all() or not pos.any():
        raise ValueError("triage needs both positive and negative samples")
    scores = probs[:, positive_class]
    fpr, tpr, ts = roc_curve(scores, pos)
    auc = float(np.trapezoid(tpr, fpr)) if hasattr(np, "trapezoid") else float(np.trapz(tpr, fpr))
    j = tpr - fpr
    cand = np.flatnonzero(np.isclose(j, j.max(), rtol=0, atol=1e-12))
    best = cand[np.argmax(tpr[cand])]
    t = ts[best]
    pred = scores >= t
    tp = int((pred & pos).sum())
    fp = int((pred & ~pos).sum())
    tn = int((~pred & ~pos).sum())
    fn = int((~pred & pos).sum())
    sens = tp / (tp + fn)
    return TriageResult(
        auc, float(t), sens, tn / (tn + fp), (tp + tn) / len(labels),
        tp / (tp + fp) if tp + fp else 0.0, sens, fpr, tpr, ts,
    )


@dataclass(frozen=True)
class ConfusionSummary:
    matrix: np.ndarray
    per_class_accuracy: np.ndarray
    support: np.ndarray
    top_confusions: list[tuple[int, int, int]]

    @property
    def normalized(self) -> np.ndarray:
        rows = self.matrix.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(rows > 0, self.matrix / rows, 0.0)

    def to_dict(self) -> dict:
        return {
            "matrix": self.matrix.tolist(),
            "per_class_accuracy": [None if np.isnan(v) else float(v) for v in self.per_class_accuracy],
            "support": self.support.tolist(),
            "top_confusions": [list(t) for t in self.top_confusions],
        }


def confusion_matrix(labels, predicted, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels), np.asarray(predicted)), 1)
    return cm


def confusion_summary(labels, predicted, n_classes: int, top: int = 5) -> ConfusionSummary:
    cm = confusion_matrix(labels, predicted, n_classes)
    support = cm.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        acc = np.where(support > 0, np.diag(cm) / support, np.nan)
    off = [(int(i), int(j), int(cm[i, j])) for i in range(n_classes) for j in range(n_classes)
           if i != j and cm[i, j] > 0]
    off.sort(key=lambda t: (-t[2], -t[0], t[1]))
    return ConfusionSummary(cm, acc, support, off[:top])


def entropy(probs) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        return -np.where(p > 0, p * np.log(p), 0.0).sum(axis=1)
