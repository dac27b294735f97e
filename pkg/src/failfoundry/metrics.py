"""Confusion-matrix metrics, ROC/AUC and MCC threshold sweeps."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self):
        return self.tp + self.tn + self.fp + self.fn


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    @property
    def points(self):
        return np.column_stack([self.fpr, self.tpr])


@dataclass
class ThresholdSweep:
    thresholds: np.ndarray
    mcc_values: np.ndarray
    best_threshold: float
    best_mcc: float


def _check_pair(labels, probs):
    labels = np.asarray(labels)
    probs = np.asarray(probs, dtype=np.float64)
    if labels.ndim != 1 or probs.ndim != 1:
        raise ValueError("labels and probs must be 1-dimensional")
    if labels.shape != probs.shape:
        raise ValueError(f"length mismatch: {labels.shape[0]} labels vs {probs.shape[0]} probs")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be binary 0/1")
    return labels.astype(np.int64), probs


def confusion(labels, probs, threshold=0.5):
    """Count outcomes predicting 1 iff ``prob > threshold``."""
    labels, probs = _check_pair(labels, probs)
    pred = probs > threshold
    pos = labels == 1
    tp = int(np.count_nonzero(pred & pos))
    fp = int(np.count_nonzero(pred & ~pos))
    fn = int(np.count_nonzero(~pred & pos))
    tn = int(np.count_nonzero(~pred & ~pos))
    return ConfusionMatrix(tp, tn, fp, fn)


def mcc(cm):
    """Matthews correlation coefficient; 0 when any marginal is empty."""
    tp, tn, fp, fn = (float(v) for v in (cm.tp, cm.tn, cm.fp, cm.fn))
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0.0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(denom)


def auc_score(labels, probs):
    """Mann-Whitney AUC, ties counted one half.

    Constant scores give 0.5. Raises when only one class is present.
    """
    labels, probs = _check_pair(labels, probs)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC is undefined when only one class is present")
    ranks = rankdata(probs)
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_auc(labels, probs):
    """ROC curve over all distinct score thresholds plus its AUC."""
    labels, probs = _check_pair(labels, probs)
    auc = auc_score(labels, probs)
    order = np.argsort(-probs, kind="mergesort")
    s = probs[order]
    y = labels[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tps = np.cumsum(y)[last]
    fps = (last + 1) - tps
    tpr = np.r_[0.0, tps / tps[-1]]
    fpr = np.r_[0.0, fps / fps[-1]]
    thresholds = np.r_[np.inf, s[last]]
    return RocCurve(fpr, tpr, thresholds, auc)


def threshold_grid(step=0.01):
    if not 0.0 < step < 1.0:
        raise ValueError("grid_step must lie in (0, 1)")
    n = int(math.floor(1.0 / step + 1e-9))
    grid = np.arange(n + 1) * step
    if grid[-1] < 1.0 - 1e-12:
        grid = np.r_[grid, 1.0]
    else:
        grid[-1] = 1.0
    return grid


def mcc_sweep(labels, probs, grid_step=0.01):
    """Evaluate MCC on the threshold grid ``0, step, ..., 1``.

    The reported best threshold is the smallest grid point attaining the
    maximum MCC.
    """
    labels, probs = _check_pair(labels, probs)
    thresholds = threshold_grid(grid_step)
    values = np.array([mcc(confusion(labels, probs, t)) for t in thresholds])
    best = int(np.argmax(values))
    return ThresholdSweep(thresholds, values, float(thresholds[best]), float(values[best]))


def best_mcc_exhaustive(labels, probs):
    """Maximum MCC over every distinct achievable prediction set.

    Thresholds are placed at each distinct score plus one below the minimum,
    which enumerates every split of the sorted scores.
    """
    labels, probs = _check_pair(labels, probs)
    uniq = np.unique(probs)
    candidates = np.r_[uniq[0] - 1.0, uniq]
    values = [mcc(confusion(labels, probs, t)) for t in candidates]
    best = int(np.argmax(values))
    return float(candidates[best]), float(values[best])
