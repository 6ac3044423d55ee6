"""Evaluation metrics: IoU, localization, confusion ratios, ROC/AUC, count errors, KS."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import EmptySample, LengthMismatch, SingleClass, SizeMismatch
from .imagery import Label


def iou(pred, gt, label: int) -> float:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise SizeMismatch(f"{pred.shape} vs {gt.shape}")
    p, g = pred == label, gt == label
    union = np.count_nonzero(p | g)
    if union == 0:
        return 1.0
    return np.count_nonzero(p & g) / union


def per_class_iou(pairs, labels=(Label.CYTOPLASM, Label.ZONA, Label.POLAR_BODY, Label.CUMULUS)) -> dict:
    """IoU per class pooled over many ``(pred, gt)`` mask pairs."""
    inter = Counter()
    union = Counter()
    for pred, gt in pairs:
        pred, gt = np.asarray(pred), np.asarray(gt)
        if pred.shape != gt.shape:
            raise SizeMismatch(f"{pred.shape} vs {gt.shape}")
        for lab in labels:
            p, g = pred == lab, gt == lab
            inter[lab] += int(np.count_nonzero(p & g))
            union[lab] += int(np.count_nonzero(p | g))
    return {Label(lab).name.lower(): (inter[lab] / union[lab] if union[lab] else 1.0) for lab in labels}


@dataclass
class LocalizationResult:
    count_match: bool
    pairs: list[tuple[int, int, float]]
    unmatched_pred: list[int]
    unmatched_gt: list[int]
    fraction_within: float
    radius: float

    def to_dict(self) -> dict:
        return {
            "count_match": self.count_match,
            "pairs": [{"pred": p, "gt": g, "distance": d} for p, g, d in self.pairs],
            "unmatched_pred": self.unmatched_pred,
            "unmatched_gt": self.unmatched_gt,
            "fraction_within": self.fraction_within,
            "radius": self.radius,
        }


def localization_check(pred, gt, radius: float = 10.0) -> LocalizationResult:
    """Greedy nearest-pair matching of predicted to ground-truth centroids.

    A match counts as localized when its distance is strictly below
    ``radius``; the fraction is taken over ground-truth oocytes.
    """
    pred = [tuple(map(float, p)) for p in pred]
    gt = [tuple(map(float, g)) for g in gt]
    cands = sorted(
        (math.hypot(p[0] - g[0], p[1] - g[1]), i, j)
        for i, p in enumerate(pred) for j, g in enumerate(gt)
    )
    used_p, used_g = set(), set()
    pairs = []
    for d, i, j in cands:
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        pairs.append((i, j, d))
    pairs.sort(key=lambda t: t[1])
    within = sum(1 for _, _, d in pairs if d < radius)
    return LocalizationResult(
        count_match=len(pred) == len(gt),
        pairs=pairs,
        unmatched_pred=[i for i in range(len(pred)) if i not in used_p],
        unmatched_gt=[j for j in range(len(gt)) if j not in used_g],
        fraction_within=within / len(gt) if gt else 1.0,
        radius=radius,
    )


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @classmethod
    def from_labels(cls, y_true, y_pred, positive=1) -> "ConfusionCounts":
        t = np.asarray(y_true) == positive
        p = np.asarray(y_pred) == positive
        return cls(int(np.sum(t & p)), int(np.sum(~t & p)), int(np.sum(~t & ~p)), int(np.sum(t & ~p)))


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


def confusion_metrics(c: ConfusionCounts) -> dict:
    """Accuracy, sensitivity, specificity and precision; ``None`` when undefined."""
    return {
        "accuracy": _ratio(c.tp + c.tn, c.tp + c.tn + c.fp + c.fn),
        "sensitivity": _ratio(c.tp, c.tp + c.fn),
        "specificity": _ratio(c.tn, c.tn + c.fp),
        "precision": _ratio(c.tp, c.tp + c.fp),
    }


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    def to_csv(self) -> str:
        lines = ["threshold,fpr,tpr"]
        lines += [f"{t!r},{f!r},{p!r}" for t, f, p in
                  zip(self.thresholds.tolist(), self.fpr.tolist(), self.tpr.tolist())]
        return "\n".join(lines) + "\n"


def roc_auc(scores, labels, positive=1) -> RocCurve:
    """ROC by sweeping a threshold over the distinct scores; AUC by trapezoids.

    A sample is called positive when its score is ``>=`` the threshold. The
    sweep starts at ``+inf`` (point (0, 0)) and ends at ``-inf`` (1, 1).
    """
    scores = np.asarray(scores, dtype=float)
    is_pos = np.asarray(labels) == positive
    if scores.shape != is_pos.shape:
        raise LengthMismatch("scores and labels differ in length")
    n_pos = int(is_pos.sum())
    n_neg = is_pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("ROC needs both classes")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    tp = np.cumsum(is_pos[order])
    fp = np.cumsum(~is_pos[order])
    # last index of each run of equal scores
    last = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tpr = np.r_[0.0, tp[last] / n_pos, 1.0]
    fpr = np.r_[0.0, fp[last] / n_neg, 1.0]
    thresholds = np.r_[np.inf, s[last], -np.inf]
    auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr, tpr, thresholds, auc)


@dataclass
class CountErrorReport:
    true_counts: list[int]
    predicted_counts: list[int]
    n_oocytes: list[int]
    mae: float
    histogram: dict[int, int]

    @property
    def errors(self) -> list[int]:
        return [p - t for p, t in zip(self.predicted_counts, self.true_counts)]

    def to_dict(self) -> dict:
        return {
            "true_counts": self.true_counts,
            "predicted_counts": self.predicted_counts,
            "n_oocytes": self.n_oocytes,
            "mae": self.mae,
            "histogram": {str(k): v for k, v in self.histogram.items()},
        }


def count_error_report(predicted, true, n_oocytes=None) -> CountErrorReport:
    """Per-image viable-count errors: MAE and histogram of ``predicted - true``."""
    predicted = [int(v) for v in predicted]
    true = [int(v) for v in true]
    if len(predicted) != len(true):
        raise LengthMismatch(f"{len(predicted)} predicted vs {len(true)} true counts")
    if not true:
        raise EmptySample("no images")
    n_oocytes = [int(v) for v in n_oocytes] if n_oocytes is not None else []
    diffs = [p - t for p, t in zip(predicted, true)]
    mae = sum(abs(d) for d in diffs) / len(diffs)
    counts = Counter(diffs)
    histogram = {d: counts.get(d, 0) for d in range(min(diffs), max(diffs) + 1)}
    return CountErrorReport(true, predicted, n_oocytes, mae, histogram)


def ks_statistic(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov statistic ``max |ECDF_a - ECDF_b|``."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise EmptySample("KS statistic needs two non-empty samples")
    grid = np.union1d(a, b)
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))
