"""Input validation shared by the estimators."""

import numpy as np
from sklearn.utils.validation import check_array

from .dataio import Dataset


def as_matrix(X, allow_nan=True):
    """Return ``(array, feature_names)`` for a Dataset or array-like."""
    if isinstance(X, Dataset):
        names = list(X.columns)
        X = X.X
    else:
        names = None
    X = check_array(X, dtype=np.float64, ensure_all_finite="allow-nan" if allow_nan else True,
                    ensure_min_samples=0, ensure_min_features=0)
    if names is None:
        names = [f"f{j}" for j in range(X.shape[1])]
    return X, names


def as_labels(y, X=None, n_rows=None):
    """Binary labels from ``y`` or from a Dataset passed as ``X``."""
    if y is None and isinstance(X, Dataset):
        y = X.labels
    if y is None:
        raise ValueError("labels are required")
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError("y must be 1-dimensional")
    if n_rows is not None and len(y) != n_rows:
        raise ValueError(f"y has {len(y)} entries, expected {n_rows}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("y must contain only 0 and 1")
    return y.astype(np.int64)


def require_both_classes(y):
    if len(y) == 0:
        raise ValueError("empty dataset")
    if y.min() == y.max():
        raise ValueError("both classes must be present")


def align_features(X, names, fitted_names):
    """Reorder Dataset-derived columns to the fitted feature order."""
    if list(names) == list(fitted_names):
        return X
    index = {n: j for j, n in enumerate(names)}
    missing = [n for n in fitted_names if n not in index]
    if missing:
        raise KeyError(f"features used by the model are missing: {missing[:10]}")
    return X[:, [index[n] for n in fitted_names]]


def prepare_predict(X, fitted_names, allow_nan=True):
    is_dataset = isinstance(X, Dataset)
    Xa, names = as_matrix(X, allow_nan=allow_nan)
    if is_dataset:
        return align_features(Xa, names, fitted_names)
    if Xa.shape[1] != len(fitted_names):
        raise ValueError(f"X has {Xa.shape[1]} features, model expects {len(fitted_names)}")
    return Xa
