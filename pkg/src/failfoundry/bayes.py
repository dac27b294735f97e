"""Bayesian logistic regression by component-wise adaptive random-walk
Metropolis.

Model: ``y_i ~ Bernoulli(p_i)``, ``logit(p_i) = b0 + x_i'b`` with independent
normal priors on ``b0`` and every ``b_j``. Priors are specified the BUGS way,
as (mean, precision); internally only standard deviations are used.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._rng import derive_seed
from ._validation import as_labels, as_matrix, prepare_predict

TARGET_ACCEPT = 0.44
ADAPT_EVERY = 50
QUANTILES = (0.025, 0.25, 0.5, 0.75, 0.975)


@dataclass
class BayesLogisticSpec:
    """Priors and sampler settings.

    ``intercept_prior`` is ``"normal"`` (the default, same prior as the
    coefficients) or ``"logistic"``, the standard logistic density on ``b0``,
    which is a uniform prior on the probability scale.
    """

    prior_mean: float = 0.0
    prior_precision: float = 1e-4
    n_chains: int = 4
    n_burnin: int = 1000
    n_samples: int = 5000
    thin: int = 1
    seed: int = 0
    intercept_prior: str = "normal"

    def __post_init__(self):
        if not self.prior_precision > 0:
            raise ValueError("prior_precision must be positive")
        if self.n_samples < 1 or self.n_chains < 1 or self.thin < 1 or self.n_burnin < 0:
            raise ValueError("n_samples, n_chains, thin must be >= 1 and n_burnin >= 0")
        if self.intercept_prior not in ("normal", "logistic"):
            raise ValueError("intercept_prior must be 'normal' or 'logistic'")

    @property
    def prior_sd(self):
        return 1.0 / math.sqrt(self.prior_precision)


@dataclass
class PosteriorSamples:
    names: list
    chains: np.ndarray            # (n_chains, n_samples, n_params)
    acceptance: np.ndarray        # (n_chains, n_params), post burn-in
    proposal_scales: np.ndarray = None

    @property
    def acceptance_rates(self):
        return self.acceptance.mean(axis=0)

    @property
    def n_chains(self):
        return self.chains.shape[0]

    @property
    def n_samples(self):
        return self.chains.shape[1]

    def index(self, name):
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown parameter {name!r}") from None

    def draws(self, name):
        """Pooled draws of one parameter, chain after chain."""
        return self.chains[:, :, self.index(name)].ravel()

    def pooled(self):
        return self.chains.reshape(-1, self.chains.shape[2])

    def posterior_mean(self):
        return np.array([math.fsum(c) / c.size for c in self.pooled().T])


@dataclass
class ParamSummary:
    mean: float
    sd: float
    quantiles: dict
    rhat: float
    ess: float
    mcse: float


@dataclass
class PosteriorSummary:
    params: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.params[name]


# ---------------------------------------------------------------------------
# Sampler engine
# ---------------------------------------------------------------------------

def _initial_scales(log_target, theta, lp0):
    """Proposal scale per coordinate from the finite-difference curvature."""
    scales = np.ones(len(theta))
    for j in range(len(theta)):
        h = 1e-3 * max(1.0, abs(theta[j]))
        up = theta.copy()
        dn = theta.copy()
        up[j] += h
        dn[j] -= h
        curv = -(log_target(up) - 2.0 * lp0 + log_target(dn)) / (h * h)
        if np.isfinite(curv) and curv > 0:
            scales[j] = 2.4 / math.sqrt(curv)
    return scales


def run_chain(log_target, init, n_burnin, n_samples, thin, rng):
    """One component-wise random-walk Metropolis chain.

    Proposal scales are tuned by Robbins-Monro steps on the log scale every
    ``ADAPT_EVERY`` iterations during burn-in, towards ``TARGET_ACCEPT``, and
    frozen afterwards.

    Returns ``(draws, acceptance_rates, scales)``.
    """
    theta = np.array(init, dtype=np.float64)
    lp = log_target(theta)
    if not np.isfinite(lp):
        raise ValueError("log-density is not finite at the initial point")
    d = len(theta)
    log_scale = np.log(_initial_scales(log_target, theta, lp))
    batch_acc = np.zeros(d)
    kept_acc = np.zeros(d)
    draws = np.empty((n_samples, d))
    n_batch = 0
    total = n_burnin + n_samples * thin
    for it in range(total):
        steps = rng.standard_normal(d) * np.exp(log_scale)
        logu = np.log(rng.random(d))
        for j in range(d):
            old = theta[j]
            theta[j] = old + steps[j]
            lp_new = log_target(theta)
            if logu[j] < lp_new - lp:
                lp = lp_new
                if it < n_burnin:
                    batch_acc[j] += 1
                else:
                    kept_acc[j] += 1
            else:
                theta[j] = old
        if it < n_burnin:
            if (it + 1) % ADAPT_EVERY == 0:
                n_batch += 1
                rate = batch_acc / ADAPT_EVERY
                log_scale += 2.0 * (rate - TARGET_ACCEPT) / math.sqrt(n_batch)
                batch_acc[:] = 0
        else:
            k = it - n_burnin
            if (k + 1) % thin == 0:
                draws[k // thin] = theta
    kept = max(1, total - n_burnin)
    return draws, kept_acc / kept, np.exp(log_scale)


def run_chains(log_target, init_fn, names, n_chains, n_burnin, n_samples, thin, seed):
    chains, acc, scales = [], [], []
    for c in range(n_chains):
        rng = np.random.default_rng(derive_seed(seed, c))
        init = init_fn(c, rng)
        draws, rates, sc = run_chain(log_target, init, n_burnin, n_samples, thin, rng)
        chains.append(draws)
        acc.append(rates)
        scales.append(sc)
    return PosteriorSamples(list(names), np.array(chains), np.array(acc), np.array(scales))


# ---------------------------------------------------------------------------
# Logistic model
# ---------------------------------------------------------------------------

def _log1pexp(eta):
    out = np.where(eta > 35.0, eta, np.log1p(np.exp(np.minimum(eta, 35.0))))
    return np.where(eta < -35.0, np.exp(np.maximum(eta, -745.0)), out)


def normal_logpdf(x, mean, sd):
    z = (x - mean) / sd
    return -0.5 * z * z - math.log(sd) - 0.5 * math.log(2.0 * math.pi)


def logistic_log_target(X, y, spec):
    """Log posterior (up to a constant) for the logistic model."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    mean, sd = spec.prior_mean, spec.prior_sd
    flat_intercept = spec.intercept_prior == "logistic"

    def log_target(theta):
        b0 = theta[0]
        b = theta[1:]
        if flat_intercept:
            lp = -b0 - 2.0 * _log1pexp(-b0)
        else:
            lp = normal_logpdf(b0, mean, sd)
        lp += float(np.sum(normal_logpdf(b, mean, sd)))
        if len(y):
            eta = b0 + X @ b
            lp += float(y @ eta - _log1pexp(eta).sum())
        return lp

    return log_target


def sample(d, spec=None, y=None):
    """Draw posterior samples for the logistic model.

    Parameters
    ----------
    d : Dataset or array-like
        NA-free features; may have zero rows (the posterior is then the prior).
    spec : BayesLogisticSpec
    y : array-like, optional
        Labels when ``d`` is not a labeled Dataset.
    """
    spec = spec or BayesLogisticSpec()
    X, names = as_matrix(d)
    y = as_labels(y, d, X.shape[0]) if X.shape[0] or y is not None else np.zeros(0)
    if np.isnan(X).any():
        raise ValueError("NA values present; impute before sampling")
    log_target = logistic_log_target(X, y, spec)
    p = X.shape[1]

    def init(c, rng):
        return 0.1 * c * np.ones(p + 1) / max(1, spec.n_chains) + 0.01 * rng.standard_normal(p + 1)

    param_names = ["b0"] + [f"b[{j + 1}]" for j in range(p)]
    samples = run_chains(log_target, init, param_names, spec.n_chains, spec.n_burnin,
                         spec.n_samples, spec.thin, spec.seed)
    samples.feature_names = names
    return samples


def posterior_predictive(s, X):
    """Draw-wise probabilities, shape ``(n_draws, n_rows)``."""
    theta = s.pooled()
    X = np.asarray(X, dtype=np.float64)
    return expit(theta[:, :1] + theta[:, 1:] @ X.T)


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------

def _fmean(x):
    return math.fsum(x) / len(x)


def _fvar(x, ddof=1):
    m = _fmean(x)
    return math.fsum((v - m) ** 2 for v in x) / (len(x) - ddof)


def split_rhat(chains):
    """Split-chain potential scale reduction for one parameter.

    ``chains`` has shape ``(n_chains, n_draws)``. Returns 1.0 when the
    within-chain variance is zero.
    """
    chains = np.asarray(chains, dtype=np.float64)
    n = chains.shape[1] // 2
    if n < 2:
        return 1.0
    halves = sorted([c[:n] for c in chains] + [c[-n:] for c in chains], key=lambda h: h.tobytes())
    means = sorted(_fmean(h) for h in halves)
    w = _fmean(sorted(_fvar(h) for h in halves))
    if w == 0.0:
        return 1.0
    b = n * _fvar(means)
    var_plus = (n - 1) / n * w + b / n
    return math.sqrt(var_plus / w)


def effective_sample_size(chains):
    """Multi-chain ESS with Geyer's initial positive sequence."""
    chains = np.asarray(chains, dtype=np.float64)
    m, n = chains.shape
    if n < 4:
        return float(m * n)
    centered = chains - chains.mean(axis=1, keepdims=True)
    var_chain = centered.var(axis=1)
    if np.all(var_chain == 0):
        return float(m * n)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(centered, n=size, axis=1)
    acov = np.fft.irfft(f * np.conj(f), n=size, axis=1)[:, :n] / n
    w = acov[:, 0].mean() * n / (n - 1)
    chain_means = chains.mean(axis=1)
    var_plus = w * (n - 1) / n + (chain_means.var(ddof=1) if m > 1 else 0.0)
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    tau = -1.0
    t = 0
    while t + 1 < n:
        pair = rho[t] + rho[t + 1]
        if pair < 0:
            break
        tau += 2.0 * pair
        t += 2
    tau = max(tau, 1.0 / math.log10(m * n + 10))
    return float(m * n / tau)


def summarize(s):
    """Pooled moments, quantiles and convergence diagnostics per parameter."""
    if s.n_chains * s.n_samples < 2:
        raise ValueError("need at least two draws")
    out = PosteriorSummary()
    for j, name in enumerate(s.names):
        per_chain = s.chains[:, :, j]
        pooled = np.sort(per_chain.ravel())
        mean = _fmean(pooled)
        sd = math.sqrt(max(_fvar(pooled), 0.0))
        qs = {q: float(np.quantile(pooled, q)) for q in QUANTILES}
        ess = effective_sample_size(per_chain[np.argsort([c.tobytes() for c in per_chain])])
        out.params[name] = ParamSummary(mean, sd, qs, split_rhat(per_chain), ess,
                                        sd / math.sqrt(ess))
    return out


def trace_export(s, param):
    """Per-chain ``(iteration, value)`` arrays for one parameter."""
    j = s.index(param)
    it = np.arange(s.n_samples, dtype=np.float64)
    return [np.column_stack([it, s.chains[c, :, j]]) for c in range(s.n_chains)]


def write_draws_csv(s, path):
    """Long-format draws: ``chain,iteration,parameter,value``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["chain", "iteration", "parameter", "value"])
        for c in range(s.n_chains):
            for i in range(s.n_samples):
                for j, name in enumerate(s.names):
                    writer.writerow([c, i, name, format(float(s.chains[c, i, j]), ".17g")])


def read_draws_csv(path):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for r in reader:
            rows.append((int(r["chain"]), int(r["iteration"]), r["parameter"], float(r["value"])))
    names = list(dict.fromkeys(r[2] for r in rows))
    n_chains = max(r[0] for r in rows) + 1
    n_samples = max(r[1] for r in rows) + 1
    chains = np.empty((n_chains, n_samples, len(names)))
    index = {n: j for j, n in enumerate(names)}
    for c, i, name, v in rows:
        chains[c, i, index[name]] = v
    return PosteriorSamples(names, chains, np.full((n_chains, len(names)), np.nan))


def write_summary_csv(summary, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["parameter", "mean", "sd"] + [f"q{q * 100:g}" for q in QUANTILES]
                        + ["rhat", "ess"])
        for name, ps in summary.params.items():
            writer.writerow([name] + [format(v, ".17g") for v in
                                      [ps.mean, ps.sd, *ps.quantiles.values(), ps.rhat, ps.ess]])


class BayesianLogisticRegression(ClassifierMixin, BaseEstimator):
    """Logistic regression with normal priors, fit by MCMC.

    Point predictions use the posterior-mean coefficients.
    """

    def __init__(self, prior_mean=0.0, prior_precision=1e-4, n_chains=4, n_burnin=1000,
                 n_samples=5000, thin=1, seed=0, intercept_prior="normal"):
        self.prior_mean = prior_mean
        self.prior_precision = prior_precision
        self.n_chains = n_chains
        self.n_burnin = n_burnin
        self.n_samples = n_samples
        self.thin = thin
        self.seed = seed
        self.intercept_prior = intercept_prior

    def fit(self, X, y=None):
        spec = BayesLogisticSpec(**self.get_params())
        Xa, names = as_matrix(X)
        y = as_labels(y, X, Xa.shape[0])
        self.classes_ = np.array([0, 1])
        self.samples_ = sample(Xa, spec, y=y)
        self.summary_ = summarize(self.samples_)
        mean = self.samples_.posterior_mean()
        self.intercept_ = float(mean[0])
        self.coef_ = mean[1:]
        self.feature_names_ = names
        self.n_features_in_ = Xa.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "samples_")
        return self.intercept_ + prepare_predict(X, self.feature_names_, allow_nan=False) @ self.coef_

    def predict_proba(self, X):
        p = expit(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X, threshold=0.5):
        return (self.predict_proba(X)[:, 1] > threshold).astype(np.int64)
