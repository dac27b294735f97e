"""Grouping parts by measurement-availability pattern, and NA cleanup.

k-means runs on the raw 0/1 missingness mask with squared Euclidean
distance. ``filter_and_impute`` prepares one group for linear modeling.
"""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._rng import derive_seed
from .dataio import CATEGORICAL, Dataset


@dataclass
class KmeansResult:
    centroids: np.ndarray
    assignments: np.ndarray
    wcss: float
    iterations: int
    wcss_history: list = field(default_factory=list)

    @property
    def k(self):
        return self.centroids.shape[0]


@dataclass
class ImputationReport:
    dropped_columns: list
    dropped_rows: list
    imputed_counts: dict
    medians: dict


def _as_points(m):
    if isinstance(m, Dataset):
        return m.mask.astype(np.float64)
    return np.asarray(m, dtype=np.float64)


def _sq_dists(X, C):
    d = (X * X).sum(axis=1)[:, None] - 2.0 * X @ C.T + (C * C).sum(axis=1)[None, :]
    return np.maximum(d, 0.0)


def _exact_sq_dist(X, C, labels):
    diff = X - C[labels]
    return (diff * diff).sum(axis=1)


def _kmeanspp(X, k, rng):
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    closest = ((X - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
            while closest[idx] == 0.0:
                idx -= 1
        else:
            idx = int(rng.integers(n))
        centers[c] = X[idx]
        closest = np.minimum(closest, ((X - centers[c]) ** 2).sum(axis=1))
    return centers


def kmeans(m, k, seed=0, max_iter=300):
    """Lloyd's algorithm with k-means++ seeding.

    Parameters
    ----------
    m : Dataset or array-like
        A Dataset is clustered on its missingness mask; arrays are used as is.
    k : int
    seed : int
    max_iter : int

    Returns
    -------
    KmeansResult
        ``wcss_history`` holds the objective after every assignment step.
    """
    X = _as_points(m)
    n = X.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of rows ({n})")
    rng = np.random.default_rng(seed)
    C = _kmeanspp(X, k, rng)
    labels = None
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        new_labels = np.argmin(_sq_dists(X, C), axis=1)
        history.append(float(_exact_sq_dist(X, C, new_labels).sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(k):
            members = labels == c
            if members.any():
                C[c] = X[members].mean(axis=0)
        empty = [c for c in range(k) if not np.any(labels == c)]
        for c in empty:
            # Re-seed at the point farthest from its assigned centroid.
            far = int(np.argmax(_exact_sq_dist(X, C, labels)))
            C[c] = X[far]
            labels[far] = c
    labels = np.argmin(_sq_dists(X, C), axis=1)
    wcss = float(_exact_sq_dist(X, C, labels).sum())
    return KmeansResult(C, labels, wcss, it, history)


def elbow(m, k_values, seed=0, restarts=5, max_iter=300):
    """Best-of-``restarts`` WCSS for each k, as ``[(k, wcss), ...]``."""
    k_values = list(k_values)
    if any(k < 1 for k in k_values) or k_values != sorted(set(k_values)):
        raise ValueError("k_values must be positive and strictly ascending")
    X = _as_points(m)
    out = []
    for k in k_values:
        best = min(kmeans(X, k, derive_seed(seed, r), max_iter).wcss for r in range(restarts))
        out.append((k, best))
    return out


def knee(curve):
    """k at the largest second difference of a WCSS curve (interior points)."""
    ks = [k for k, _ in curve]
    w = np.array([v for _, v in curve])
    if len(w) < 3:
        raise ValueError("need at least three points to locate a knee")
    second = w[:-2] - 2.0 * w[1:-1] + w[2:]
    return ks[1 + int(np.argmax(second))]


def _median(values):
    s = np.sort(values)
    n = len(s)
    mid = n // 2
    return float(s[mid]) if n % 2 else float(0.5 * (s[mid - 1] + s[mid]))


def filter_and_impute(d, col_na_max=0.1, row_na_max=0.1):
    """Drop NA-heavy columns, then NA-heavy rows, then median-impute.

    A column (row) is dropped when its NA fraction exceeds the threshold.
    Row fractions are computed over the surviving columns.
    """
    if not (0.0 <= col_na_max <= 1.0 and 0.0 <= row_na_max <= 1.0):
        raise ValueError("NA fractions must lie in [0, 1]")
    cats = [c for c, k in zip(d.columns, d.kinds) if k == CATEGORICAL]
    if cats:
        raise ValueError(f"categorical columns must be one-hot encoded first: {cats}")
    na = d.mask == 0
    col_frac = na.mean(axis=0) if d.n_rows else np.zeros(d.n_cols)
    keep_cols = col_frac <= col_na_max
    if not keep_cols.any():
        raise ValueError("every column exceeds the NA threshold")
    dropped_columns = [c for c, k in zip(d.columns, keep_cols) if not k]
    out = d.select([c for c, k in zip(d.columns, keep_cols) if k])
    row_frac = na[:, keep_cols].mean(axis=1)
    keep_rows = row_frac <= row_na_max
    dropped_rows = [int(i) for i in d.ids[~keep_rows]]
    out = out.take(keep_rows)
    medians, counts = {}, {}
    data = []
    for name, col in zip(out.columns, out.data):
        missing = np.isnan(col)
        counts[name] = int(missing.sum())
        if missing.all():
            raise ValueError(f"column {name!r} has no observed values after row filtering")
        med = _median(col[~missing])
        medians[name] = med
        data.append(np.where(missing, med, col))
    out = Dataset(out.ids, out.columns, out.kinds, data, out.labels)
    return out, ImputationReport(dropped_columns, dropped_rows, counts, medians)


def select_cluster(d, r, cluster_id):
    """Rows of ``d`` assigned to ``cluster_id``."""
    if not 0 <= cluster_id < r.k:
        raise ValueError(f"cluster_id must lie in [0, {r.k})")
    members = r.assignments == cluster_id
    if not members.any():
        raise ValueError(f"cluster {cluster_id} is empty")
    return d.take(members)


class MissingPatternKMeans(ClusterMixin, BaseEstimator):
    """k-means on the missingness pattern of the input (``nan`` = NA)."""

    def __init__(self, n_clusters=25, seed=0, restarts=1, max_iter=300):
        self.n_clusters = n_clusters
        self.seed = seed
        self.restarts = restarts
        self.max_iter = max_iter

    @staticmethod
    def _mask(X):
        if isinstance(X, Dataset):
            return X.mask.astype(np.float64)
        return (~np.isnan(np.asarray(X, dtype=np.float64))).astype(np.float64)

    def fit(self, X, y=None):
        M = self._mask(X)
        fits = [kmeans(M, self.n_clusters, derive_seed(self.seed, r), self.max_iter)
                for r in range(self.restarts)]
        self.result_ = min(fits, key=lambda r: r.wcss)
        self.cluster_centers_ = self.result_.centroids
        self.labels_ = self.result_.assignments
        self.inertia_ = self.result_.wcss
        return self

    def predict(self, X):
        check_is_fitted(self, "result_")
        return np.argmin(_sq_dists(self._mask(X), self.cluster_centers_), axis=1)


class MedianImputer(TransformerMixin, BaseEstimator):
    """Column NA filter plus median imputation learned on the training data.

    Row filtering is not applied by ``transform``; use
    :func:`filter_and_impute` to also drop rows.
    """

    def __init__(self, col_na_max=0.1):
        self.col_na_max = col_na_max

    def fit(self, X, y=None):
        X = np.asarray(X.X if isinstance(X, Dataset) else X, dtype=np.float64)
        frac = np.isnan(X).mean(axis=0)
        self.keep_ = frac <= self.col_na_max
        self.medians_ = np.array([_median(c[~np.isnan(c)]) if k and (~np.isnan(c)).any()
                                  else np.nan for c, k in zip(X.T, self.keep_)])
        return self

    def transform(self, X):
        check_is_fitted(self, "keep_")
        X = np.asarray(X.X if isinstance(X, Dataset) else X, dtype=np.float64)[:, self.keep_]
        med = self.medians_[self.keep_]
        return np.where(np.isnan(X), med[None, :], X)
