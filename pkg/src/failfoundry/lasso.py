"""L1-penalized logistic regression by cyclical coordinate descent.

Each penalty value is solved by an outer IRLS loop. Within it the penalized
weighted least-squares subproblem is solved by coordinate descent over a
weighted Gram matrix, with the unpenalized intercept profiled out. An outer
step that would increase the penalized objective is halved until it does
not, so the objective is monotone along the outer iterations.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._rng import derive_seed, partial_shuffle
from ._validation import as_labels, as_matrix, prepare_predict, require_both_classes
from .metrics import auc_score

TOL = 1e-7
MAX_OUTER = 100
MAX_INNER = 1000
WEIGHT_FLOOR = 1e-5


class ConvergenceError(RuntimeError):
    pass


@dataclass
class GlmModel:
    """Logistic model on the original feature scale."""

    intercept: float
    coefficients: np.ndarray
    feature_means: np.ndarray
    feature_sds: np.ndarray
    feature_names: list = None
    lam: float = None

    def linear_predictor(self, X):
        return self.intercept + X @ self.coefficients

    @property
    def n_nonzero(self):
        return int(np.count_nonzero(self.coefficients))


@dataclass
class LassoPath:
    lambdas: np.ndarray
    models: list
    nonzero_counts: np.ndarray
    # Diagnostics per lambda, on the standardized scale.
    std_coefficients: np.ndarray = None
    objective_traces: list = None


@dataclass
class CvResult:
    lambdas: np.ndarray
    mean_auc: np.ndarray
    se_auc: np.ndarray
    fold_auc: np.ndarray
    lambda_best: float
    best_index: int


def predict_proba(m, d):
    """Elementwise logistic of the linear predictor; NA is rejected."""
    names = m.feature_names or [f"f{j}" for j in range(len(m.coefficients))]
    X = prepare_predict(d, names, allow_nan=True)
    if np.isnan(X).any():
        raise ValueError("NA values present; impute before predicting")
    return expit(m.linear_predictor(X))


def _soft(x, lam):
    if x > lam:
        return x - lam
    if x < -lam:
        return x + lam
    return 0.0


def _standardize(X):
    means = X.mean(axis=0)
    sds = X.std(axis=0)
    keep = sds > 0
    Z = np.zeros_like(X)
    Z[:, keep] = (X[:, keep] - means[keep]) / sds[keep]
    return Z, means, sds, keep


def _duplicate_columns(Z):
    """Indices of columns that exactly repeat an earlier column."""
    dup = np.zeros(Z.shape[1], dtype=bool)
    seen = {}
    for j in range(Z.shape[1]):
        key = Z[:, j].tobytes()
        if key in seen:
            dup[j] = True
        else:
            seen[key] = j
    return dup


def penalized_objective(Z, y, b0, beta, lam):
    """Mean negative log-likelihood plus ``lam * ||beta||_1`` (standardized scale)."""
    eta = b0 + Z @ beta
    return float(np.mean(np.logaddexp(0.0, eta) - y * eta) + lam * np.abs(beta).sum())


def _cd_wls(A, b, beta, lam, active):
    """Coordinate descent on ``0.5 beta'A beta - b'beta + lam |beta|_1``."""
    beta = beta.copy()
    diag = np.diag(A)
    grad = b - A @ beta
    for _ in range(MAX_INNER):
        max_change = 0.0
        for j in active:
            old = beta[j]
            new = _soft(grad[j] + diag[j] * old, lam) / diag[j]
            if new != old:
                delta = new - old
                beta[j] = new
                grad -= A[:, j] * delta
                max_change = max(max_change, abs(delta))
        if max_change < TOL * 0.1:
            break
    return beta


def _solve_one(Z, y, lam, b0, beta, active, trace=None):
    """IRLS outer loop for a single penalty value (standardized scale)."""
    n = len(y)
    obj = penalized_objective(Z, y, b0, beta, lam)
    if trace is not None:
        trace.append(obj)
    for _ in range(MAX_OUTER):
        eta = b0 + Z @ beta
        p = expit(eta)
        w = np.maximum(p * (1.0 - p), WEIGHT_FLOOR)
        z = eta + (y - p) / w
        sw = w.sum()
        xbar = (w @ Z) / sw
        zbar = (w @ z) / sw
        Zc = Z - xbar
        A = (Zc.T * w) @ Zc / n
        rhs = (Zc.T * w) @ (z - zbar) / n
        new_beta = _cd_wls(A, rhs, beta, lam, active)
        new_b0 = zbar - xbar @ new_beta
        new_obj = penalized_objective(Z, y, new_b0, new_beta, lam)
        if new_obj > obj:
            step = 1.0
            accepted = False
            while step > 1e-10:
                step *= 0.5
                cand_beta = beta + step * (new_beta - beta)
                cand_b0 = b0 + step * (new_b0 - b0)
                cand_obj = penalized_objective(Z, y, cand_b0, cand_beta, lam)
                if cand_obj <= obj:
                    new_beta, new_b0, new_obj = cand_beta, cand_b0, cand_obj
                    accepted = True
                    break
            if not accepted:
                new_beta, new_b0, new_obj = beta, b0, obj
        change = max(np.max(np.abs(new_beta - beta), initial=0.0), abs(new_b0 - b0))
        beta, b0, obj = new_beta, new_b0, new_obj
        if trace is not None:
            trace.append(obj)
        if change < TOL:
            return b0, beta
    raise ConvergenceError(f"IRLS did not converge within {MAX_OUTER} iterations at lambda={lam:g}")


def lambda_max(X, y):
    """Smallest penalty at which every coefficient is zero."""
    Z, _, _, keep = _standardize(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    return float(np.max(np.abs(Z[:, keep].T @ (y - y.mean())) / len(y), initial=0.0))


def lambda_grid(lmax, n_lambdas=100, lambda_min_ratio=1e-3):
    if n_lambdas < 1:
        raise ValueError("n_lambdas must be >= 1")
    if n_lambdas == 1:
        return np.array([lmax])
    return np.exp(np.linspace(np.log(lmax), np.log(lmax * lambda_min_ratio), n_lambdas))


def fit_path(d, n_lambdas=100, lambda_min_ratio=1e-3, y=None, lambdas=None,
             record_objective=False):
    """Fit the regularization path by warm-started coordinate descent.

    Parameters
    ----------
    d : Dataset or array-like
        NA-free features (labels are taken from the Dataset unless ``y`` given).
    n_lambdas, lambda_min_ratio :
        Log-spaced grid from the data's lambda_max down to
        ``lambda_max * lambda_min_ratio``. Ignored when ``lambdas`` is given.

    Returns
    -------
    LassoPath
        Coefficients are reported on the original feature scale.
    """
    X, names = as_matrix(d)
    y = as_labels(y, d, X.shape[0]).astype(np.float64)
    require_both_classes(y.astype(np.int64))
    if np.isnan(X).any():
        raise ValueError("NA values present; impute before fitting")
    Z, means, sds, keep = _standardize(X)
    if not keep.all():
        dropped = [names[j] for j in np.flatnonzero(~keep)]
        warnings.warn(f"dropping constant features: {dropped}", stacklevel=2)
    active = np.flatnonzero(keep & ~_duplicate_columns(Z))
    n, p = X.shape
    lmax = float(np.max(np.abs(Z[:, keep].T @ (y - y.mean())) / n, initial=0.0))
    if lambdas is None:
        lambdas = lambda_grid(lmax, n_lambdas, lambda_min_ratio)
    lambdas = np.asarray(lambdas, dtype=np.float64)
    if np.any(lambdas <= 0) or np.any(np.diff(lambdas) >= 0):
        raise ValueError("lambdas must be positive and strictly decreasing")

    beta = np.zeros(p)
    b0 = float(logit(y.mean()))
    models, counts, std_coefs, traces = [], [], [], []
    for lam in lambdas:
        trace = [] if record_objective else None
        if lam >= lmax:
            beta = np.zeros(p)
            b0 = float(logit(y.mean()))
            if trace is not None:
                trace.append(penalized_objective(Z, y, b0, beta, lam))
        else:
            b0, beta = _solve_one(Z, y, lam, b0, beta, active, trace)
        std_coefs.append(beta.copy())
        traces.append(trace)
        coef = np.zeros(p)
        coef[keep] = beta[keep] / sds[keep]
        intercept = float(b0 - coef @ means)
        models.append(GlmModel(intercept, coef, means, sds, names, float(lam)))
        counts.append(int(np.count_nonzero(coef)))
    return LassoPath(lambdas, models, np.array(counts), np.array(std_coefs),
                     traces if record_objective else None)


def fit_lambda(d, lam, y=None):
    """Fit at a single penalty value by walking the path down to ``lam``."""
    X, _ = as_matrix(d)
    y = as_labels(y, d, X.shape[0])
    lmax = lambda_max(X, y)
    if lam >= lmax:
        grid = np.array([lam])
    else:
        grid = np.r_[np.exp(np.linspace(np.log(lmax), np.log(lam), 30))[:-1], lam]
    return fit_path(d, y=y, lambdas=grid).models[-1]


def kkt_residuals(X, y, model):
    """Per-feature standardized-scale score ``|x_j'(y - p)| / n``."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    Z, _, _, keep = _standardize(X)
    p = expit(model.linear_predictor(X))
    grad = np.abs(Z.T @ (y - p)) / len(y)
    grad[~keep] = 0.0
    return grad


def stratified_folds(y, n_folds, seed=0):
    """Fold index per row, each class dealt round-robin after a seeded shuffle."""
    y = np.asarray(y)
    if n_folds < 2:
        raise ValueError("n_folds must be >= 2")
    folds = np.empty(len(y), dtype=np.int64)
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        order = partial_shuffle(idx.tolist(), len(idx), derive_seed(seed, cls))
        folds[np.array(order, dtype=np.int64)] = np.arange(len(idx)) % n_folds
    for f in range(n_folds):
        in_fold = y[folds == f]
        if len(in_fold) == 0 or in_fold.min() == in_fold.max():
            raise ValueError(
                f"fold {f} does not contain both classes; use fewer folds (have "
                f"{int((y == 1).sum())} positives, {int((y == 0).sum())} negatives)")
    return folds


def cross_validate(d, path, n_folds=10, seed=0, y=None):
    """Stratified K-fold AUC for every lambda of ``path``."""
    X, _ = as_matrix(d)
    y = as_labels(y, d, X.shape[0])
    if n_folds >= len(y):
        raise ValueError("n_folds must be smaller than the number of rows; "
                         "single-sample folds contain one class")
    folds = stratified_folds(y, n_folds, seed)
    lambdas = path.lambdas
    aucs = np.empty((n_folds, len(lambdas)))
    for f in range(n_folds):
        train = folds != f
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fold_path = fit_path(X[train], y=y[train], lambdas=lambdas)
        for k, model in enumerate(fold_path.models):
            aucs[f, k] = auc_score(y[~train], expit(model.linear_predictor(X[~train])))
    mean = aucs.mean(axis=0)
    se = aucs.std(axis=0, ddof=1) / np.sqrt(n_folds)
    best = int(np.flatnonzero(mean == mean.max())[-1])
    return CvResult(lambdas, mean, se, aucs, float(lambdas[best]), best)


def export_coefficients(m, path):
    """CSV with an ``(Intercept)`` row then one row per feature."""
    import csv

    names = m.feature_names or [f"f{j}" for j in range(len(m.coefficients))]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["feature", "coefficient"])
        writer.writerow(["(Intercept)", format(m.intercept, ".17g")])
        for name, c in zip(names, m.coefficients):
            writer.writerow([name, format(float(c), ".17g")])


class LassoLogisticRegression(ClassifierMixin, BaseEstimator):
    """LASSO logistic regression with the penalty chosen by cross-validated AUC.

    Parameters
    ----------
    n_lambdas : int, default=100
    lambda_min_ratio : float, default=1e-3
    n_folds : int, default=10
        Set to None to skip cross-validation; ``lam`` must then be given.
    lam : float, optional
        Fixed penalty. Overrides cross-validation.
    seed : int, default=0
        Seed for fold assignment.
    """

    def __init__(self, n_lambdas=100, lambda_min_ratio=1e-3, n_folds=10, lam=None, seed=0):
        self.n_lambdas = n_lambdas
        self.lambda_min_ratio = lambda_min_ratio
        self.n_folds = n_folds
        self.lam = lam
        self.seed = seed

    def fit(self, X, y=None):
        Xa, names = as_matrix(X)
        y = as_labels(y, X, Xa.shape[0])
        self.classes_ = np.array([0, 1])
        if self.lam is not None:
            self.model_ = fit_lambda(Xa, self.lam, y=y)
            self.model_.feature_names = names
        else:
            self.path_ = fit_path(Xa, self.n_lambdas, self.lambda_min_ratio, y=y)
            self.cv_ = cross_validate(Xa, self.path_, self.n_folds, self.seed, y=y)
            self.model_ = self.path_.models[self.cv_.best_index]
            for m in self.path_.models:
                m.feature_names = names
        self.lambda_ = self.model_.lam
        self.coef_ = self.model_.coefficients
        self.intercept_ = self.model_.intercept
        self.n_features_in_ = Xa.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        Xa = prepare_predict(X, self.model_.feature_names)
        return self.model_.linear_predictor(Xa)

    def predict_proba(self, X):
        p = expit(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X, threshold=0.5):
        return (self.predict_proba(X)[:, 1] > threshold).astype(np.int64)
