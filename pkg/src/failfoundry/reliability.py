"""Weibull lifetimes whose scale is a linear function of line measurements.

Density ``f(t) = (k/a) (t/a)^(k-1) exp(-(t/a)^k)`` with shape ``k`` and scale
``a(x) = b0 + b1 x1 + ... + bm xm``. The scale must stay positive; posterior
proposals that make it non-positive for any row are rejected.
"""

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .bayes import BayesLogisticSpec, normal_logpdf, run_chains, summarize

N_COVARIATES = 3


@dataclass
class WeibullModel:
    shape: float
    scale_coefficients: np.ndarray    # b0, b1, ..., bm

    def __post_init__(self):
        if not self.shape > 0:
            raise ValueError("shape must be positive")
        self.scale_coefficients = np.asarray(self.scale_coefficients, dtype=np.float64)

    def scale(self, covariates):
        X = np.atleast_2d(np.asarray(covariates, dtype=np.float64))
        return self.scale_coefficients[0] + X @ self.scale_coefficients[1:]


@dataclass
class LifetimeData:
    covariates: np.ndarray
    lifetimes: np.ndarray

    def __post_init__(self):
        self.covariates = np.atleast_2d(np.asarray(self.covariates, dtype=np.float64))
        self.lifetimes = np.asarray(self.lifetimes, dtype=np.float64)
        if self.lifetimes.size == 0:
            self.covariates = self.covariates.reshape(0, self.covariates.shape[-1])
        if self.covariates.shape[0] != self.lifetimes.shape[0]:
            raise ValueError("covariates and lifetimes must have equal length")
        if np.any(self.lifetimes <= 0):
            raise ValueError("lifetimes must be positive")


def weibull_cdf(t, scale, shape):
    return 1.0 - np.exp(-(np.asarray(t) / scale) ** shape)


def weibull_quantile(q, scale, shape):
    return scale * (-np.log1p(-q)) ** (1.0 / shape)


def simulate(m, covariates, seed=0):
    """Inverse-CDF draws ``t = a(x) (-ln U)^(1/k)``, one per covariate row."""
    X = np.atleast_2d(np.asarray(covariates, dtype=np.float64))
    alpha = m.scale(X)
    bad = np.flatnonzero(alpha <= 0)
    if len(bad):
        raise ValueError(f"scale parameter is not positive for rows {bad.tolist()[:20]}")
    u = np.random.default_rng(seed).random(len(alpha))
    # 1 - u lies in (0, 1] so the log is finite.
    t = alpha * (-np.log1p(-u)) ** (1.0 / m.shape)
    return LifetimeData(X, t)


def weibull_log_target(data, spec):
    """Log posterior over ``(ln shape, b0, ..., bm)``."""
    X = data.covariates
    t = data.lifetimes
    log_t = np.log(t)
    mean, sd = spec.prior_mean, spec.prior_sd

    def log_target(theta):
        log_k = theta[0]
        b = theta[1:]
        lp = normal_logpdf(log_k, mean, sd) + float(np.sum(normal_logpdf(b, mean, sd)))
        if len(t) == 0:
            return lp
        alpha = b[0] + X @ b[1:]
        if np.any(alpha <= 0):
            return -np.inf
        k = math.exp(log_k)
        log_a = np.log(alpha)
        z = k * (log_t - log_a)
        ll = len(t) * log_k + float(np.sum(-log_a + (k - 1.0) * (log_t - log_a) - np.exp(z)))
        return lp + ll

    return log_target


def fit_bayes(data, spec=None):
    """Posterior draws of ``shape`` and the scale coefficients.

    The shape is sampled as ``ln shape`` with a normal prior (so ``shape``
    is lognormal a priori); coefficients get the normal priors of ``spec``.
    The returned samples hold ``shape`` itself in the first column.
    """
    spec = spec or BayesLogisticSpec()
    m = data.covariates.shape[1]
    log_target = weibull_log_target(data, spec)
    if len(data.lifetimes):
        b0_init = float(np.mean(data.lifetimes))
    else:
        b0_init = spec.prior_mean

    def init(c, rng):
        theta = np.zeros(m + 2)
        theta[0] = spec.prior_mean if not len(data.lifetimes) else 0.0
        theta[1] = b0_init
        return theta + 0.01 * (1 + c) * rng.standard_normal(m + 2) * np.r_[1.0, 0.0, np.ones(m)]

    names = ["log_shape", "b0"] + [f"b{j + 1}" for j in range(m)]
    s = run_chains(log_target, init, names, spec.n_chains, spec.n_burnin, spec.n_samples,
                   spec.thin, spec.seed)
    s.chains = s.chains.copy()
    s.log_shape = s.chains[:, :, 0].copy()
    s.chains[:, :, 0] = np.exp(s.log_shape)
    s.names[0] = "shape"
    return s


def lifetime_predictive(s, x, q):
    """Posterior-mean ``q``-quantile of the lifetime at covariates ``x``.

    Draws whose scale at ``x`` is not positive are excluded; the count is
    returned alongside the value.
    """
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    theta = s.pooled()
    shape = theta[:, 0]
    alpha = theta[:, 1] + theta[:, 2:] @ np.asarray(x, dtype=np.float64)
    ok = alpha > 0
    if not ok.any():
        raise ValueError("no posterior draw gives a positive scale at x")
    quant = weibull_quantile(q, alpha[ok], shape[ok])
    return float(math.fsum(quant) / len(quant)), int((~ok).sum())


class WeibullRegression(RegressorMixin, BaseEstimator):
    """Bayesian Weibull regression with a linear scale.

    ``fit(X, t)`` samples the posterior; ``predict`` returns the posterior-mean
    median lifetime (or the ``quantile`` given at construction).
    """

    def __init__(self, prior_mean=0.0, prior_precision=1e-4, n_chains=4, n_burnin=1000,
                 n_samples=5000, thin=1, seed=0, quantile=0.5):
        self.prior_mean = prior_mean
        self.prior_precision = prior_precision
        self.n_chains = n_chains
        self.n_burnin = n_burnin
        self.n_samples = n_samples
        self.thin = thin
        self.seed = seed
        self.quantile = quantile

    def fit(self, X, t):
        params = self.get_params()
        params.pop("quantile")
        spec = BayesLogisticSpec(**params)
        self.samples_ = fit_bayes(LifetimeData(X, t), spec)
        self.summary_ = summarize(self.samples_)
        mean = self.samples_.posterior_mean()
        self.shape_ = float(mean[0])
        self.coef_ = mean[1:]
        self.n_features_in_ = self.samples_.chains.shape[2] - 2
        return self

    def predict(self, X):
        check_is_fitted(self, "samples_")
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return np.array([lifetime_predictive(self.samples_, x, self.quantile)[0] for x in X])
