"""Two-level stacking: boosted-tree probabilities as level-2 covariates.

Level-1 models are every (parameter set, undersampling seed) pair. Their
level-2 covariates on the training set are out-of-fold: a row's covariate
comes from a model trained without that row's fold. Level-1 models are then
refit on all rows for prediction. The level-2 model is a cross-validated
LASSO GLM or a Bayesian logistic regression (posterior means as point
estimates).
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import gbt, lasso
from ._validation import as_labels, as_matrix, require_both_classes
from .bayes import BayesLogisticSpec, sample, summarize
from .dataio import Dataset, undersample
from .metrics import auc_score


def default_base_configs(**overrides):
    """The three level-1 parameter sets (depth/column-fraction pairs)."""
    return [gbt.GbtParams(**{**cfg, **overrides}) for cfg in gbt.STACK_PARAM_SETS]


@dataclass
class StackSpec:
    base_configs: list = field(default_factory=default_base_configs)
    base_sample_seeds: list = field(default_factory=lambda: [0])
    level2: str = "glm"
    oof_folds: int = 5
    undersample_ratio: float = None
    seed: int = 0
    level2_cv_folds: int = 5
    bayes_spec: BayesLogisticSpec = None

    def __post_init__(self):
        if len(self.base_configs) * len(self.base_sample_seeds) < 1:
            raise ValueError("at least one base model is required")
        if self.oof_folds < 2:
            raise ValueError("oof_folds must be >= 2")
        if self.level2 not in ("glm", "bayes"):
            raise ValueError("level2 must be 'glm' or 'bayes'")


@dataclass
class StackModel:
    base_models: list
    base_names: list
    level2_kind: str
    level2_intercept: float
    level2_coefficients: np.ndarray
    oof: np.ndarray = None
    folds: np.ndarray = None
    oof_auc: np.ndarray = None
    level2_model: object = None


def _fit_base(X, y, names, params, sample_seed, ratio):
    d = Dataset.from_arrays(X, y, columns=names)
    if ratio is not None:
        d = undersample(d, ratio, seed=sample_seed)
    return gbt.fit(d, params)


def base_model_names(spec):
    return [f"m{c + 1}s{s}" for c in range(len(spec.base_configs))
            for s in spec.base_sample_seeds]


def out_of_fold(X, y, names, spec, folds):
    """Out-of-fold level-1 probabilities, shape ``(n_rows, n_base_models)``."""
    configs = [(params, s) for params in spec.base_configs for s in spec.base_sample_seeds]
    oof = np.full((len(y), len(configs)), np.nan)
    for f in np.unique(folds):
        test = folds == f
        train = ~test
        if y[train].min() == y[train].max():
            raise ValueError(f"training complement of fold {f} lacks a class")
        for k, (params, s) in enumerate(configs):
            model = _fit_base(X[train], y[train], names, params, s, spec.undersample_ratio)
            oof[test, k] = gbt.predict_proba(model, X[test])
    return oof


def fit_level2(P, y, spec):
    """Fit the level-2 model on covariate matrix ``P``.

    Returns ``(intercept, coefficients, fitted_object)``.
    """
    if spec.level2 == "glm":
        clf = lasso.LassoLogisticRegression(n_folds=spec.level2_cv_folds, seed=spec.seed)
        clf.fit(P, y)
        return clf.intercept_, np.asarray(clf.coef_), clf
    bspec = spec.bayes_spec or BayesLogisticSpec(seed=spec.seed)
    samples = sample(P, bspec, y=y)
    mean = samples.posterior_mean()
    return float(mean[0]), mean[1:], samples


def fit_stack(d, spec=None, y=None, folds=None):
    """Fit level-1 models out-of-fold, the level-2 model, then refit level 1.

    Parameters
    ----------
    d : Dataset or array-like
    spec : StackSpec
    folds : array-like of int, optional
        Fold index per row. Defaults to stratified folds from ``spec.seed``.
    """
    spec = spec or StackSpec()
    X, names = as_matrix(d)
    y = as_labels(y, d, X.shape[0])
    require_both_classes(y)
    if folds is None:
        folds = lasso.stratified_folds(y, spec.oof_folds, spec.seed)
    folds = np.asarray(folds, dtype=np.int64)
    for f in np.unique(folds):
        in_fold = y[folds == f]
        if in_fold.min() == in_fold.max():
            raise ValueError(f"fold {f} does not contain both classes; use fewer folds")
    oof = out_of_fold(X, y, names, spec, folds)
    oof_auc = np.array([auc_score(y, oof[:, k]) for k in range(oof.shape[1])])
    intercept, coef, level2 = fit_level2(oof, y, spec)
    base = [_fit_base(X, y, names, params, s, spec.undersample_ratio)
            for params in spec.base_configs for s in spec.base_sample_seeds]
    return StackModel(base, base_model_names(spec), spec.level2, float(intercept),
                      np.asarray(coef, dtype=np.float64), oof, folds, oof_auc, level2)


def base_probabilities(m, d):
    return np.column_stack([gbt.predict_proba(b, d) for b in m.base_models])


def predict_level2(m, P):
    return expit(m.level2_intercept + np.asarray(P, dtype=np.float64) @ m.level2_coefficients)


def predict_stack(m, d):
    """Level-2 probability from the level-1 probabilities of every row."""
    return predict_level2(m, base_probabilities(m, d))


def posterior_predictive_stack(m, d):
    """Draw-wise level-2 probabilities for a Bayesian level 2."""
    if m.level2_kind != "bayes":
        raise ValueError("posterior predictive needs a Bayesian level-2 model")
    theta = m.level2_model.pooled()
    P = base_probabilities(m, d)
    return expit(theta[:, :1] + theta[:, 1:] @ P.T)


def level2_summary(m):
    if m.level2_kind != "bayes":
        raise ValueError("summary needs a Bayesian level-2 model")
    return summarize(m.level2_model)


class StackedClassifier(ClassifierMixin, BaseEstimator):
    """Scikit-learn wrapper around :func:`fit_stack`."""

    def __init__(self, base_configs=None, base_sample_seeds=(0,), level2="glm", oof_folds=5,
                 undersample_ratio=None, seed=0, level2_cv_folds=5):
        self.base_configs = base_configs
        self.base_sample_seeds = base_sample_seeds
        self.level2 = level2
        self.oof_folds = oof_folds
        self.undersample_ratio = undersample_ratio
        self.seed = seed
        self.level2_cv_folds = level2_cv_folds

    def fit(self, X, y=None, folds=None):
        spec = StackSpec(
            base_configs=list(self.base_configs) if self.base_configs else default_base_configs(),
            base_sample_seeds=list(self.base_sample_seeds), level2=self.level2,
            oof_folds=self.oof_folds, undersample_ratio=self.undersample_ratio,
            seed=self.seed, level2_cv_folds=self.level2_cv_folds)
        self.classes_ = np.array([0, 1])
        self.model_ = fit_stack(X, spec, y=y, folds=folds)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        p = predict_stack(self.model_, X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X, threshold=0.5):
        return (self.predict_proba(X)[:, 1] > threshold).astype(np.int64)
