"""Marginal likelihoods by bridge sampling, Bayes factors and WAIC."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm

from .mcmc import PosteriorChain, integrated_autocorr_time
from .rng import as_rng

log = logging.getLogger(__name__)

FULL_MASS = 1.0 - 1e-6
# natural-log Bayes factor cut points: weak | positive | strong | very strong
LN_BF_THRESHOLDS = (1.0, 3.0, 5.0)


@dataclass(frozen=True, eq=False)
class ImportanceDensity:
    """Multivariate normal, optionally truncated to ``[lo, hi]`` along one axis.

    ``normalization_correction`` is the log of the probability mass the
    untruncated normal puts inside the box.
    """

    mean: np.ndarray
    covariance: np.ndarray
    truncation: tuple | None = None  # (axis, lo, hi)
    normalization_correction: float = 0.0

    def __post_init__(self):
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        object.__setattr__(self, "mean", np.atleast_1d(np.asarray(self.mean, dtype=float)))
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "_chol", np.linalg.cholesky(cov))
        if self.normalization_correction > 0:
            raise ValueError("normalization correction is a log probability and must be <= 0")

    @property
    def dim(self) -> int:
        return len(self.mean)

    def _inside(self, x: np.ndarray) -> np.ndarray:
        if self.truncation is None:
            return np.ones(len(x), dtype=bool)
        axis, lo, hi = self.truncation
        return (x[:, axis] >= lo) & (x[:, axis] <= hi)

    def logpdf(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        diff = x - self.mean
        sol = np.linalg.solve(self._chol, diff.T)
        logdet = 2.0 * np.log(np.diag(self._chol)).sum()
        out = -0.5 * (sol * sol).sum(axis=0) - 0.5 * logdet - 0.5 * self.dim * math.log(2 * math.pi)
        out = out - self.normalization_correction
        return np.where(self._inside(x), out, -np.inf)

    def sample(self, n: int, rng) -> np.ndarray:
        """Rejection sampling from the truncated normal."""
        rng = as_rng(rng)
        draws = []
        have = 0
        while have < n:
            batch = self.mean + rng.standard_normal((max(n - have, 64) * 2, self.dim)) @ self._chol.T
            batch = batch[self._inside(batch)]
            draws.append(batch)
            have += len(batch)
        return np.concatenate(draws)[:n]


def fit_importance_density(chain, truncation: tuple | None = (-1, 0.0, 1.0)) -> ImportanceDensity:
    """Normal importance density matched to the chain's mean and covariance.

    ``truncation`` is ``(axis, lo, hi)``; by default the last coordinate
    (vacancy-fill probability) is restricted to [0, 1]. The retained mass is
    the exact univariate normal probability of the box along that axis.
    """
    samples = chain.samples if isinstance(chain, PosteriorChain) else np.asarray(chain, dtype=float)
    samples = np.atleast_2d(samples)
    if samples.shape[0] < samples.shape[1]:
        samples = samples.T
    if len(samples) < 1000:
        raise ValueError("need at least 1000 posterior draws to fit the importance density")
    d = samples.shape[1]
    mean = samples.mean(axis=0)
    cov = np.atleast_2d(np.cov(samples, rowvar=False))
    try:
        np.linalg.cholesky(cov)
        if np.linalg.cond(cov) > 1e14:
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        tr = float(np.trace(cov))
        ridge = 1e-8 * tr / d if tr > 0 else 1e-8
        log.warning("singular posterior covariance; adding ridge %.3g", ridge)
        cov = cov + ridge * np.eye(d)

    correction = 0.0
    if truncation is not None:
        axis, lo, hi = truncation
        axis = axis % d
        truncation = (axis, lo, hi)
        sd = math.sqrt(cov[axis, axis])
        mass = norm.cdf(hi, mean[axis], sd) - norm.cdf(lo, mean[axis], sd)
        if mass <= 0:
            raise ValueError("importance density puts no mass inside the truncation box")
        if mass <= FULL_MASS:
            correction = math.log(mass)
    return ImportanceDensity(mean, cov, truncation, correction)


@dataclass(frozen=True)
class MarginalLikelihoodEstimate:
    log_ml: float
    std_error: float
    iterations: int
    converged: bool

    def __post_init__(self):
        if not self.std_error >= 0 and not math.isnan(self.std_error):
            raise ValueError("standard error must be nonnegative")


def _bridge_iterate(l1, l2, s1, s2, tol, max_iter):
    lstar = float(np.median(l1))
    a1 = l1 - lstar
    a2 = l2 - lstar
    log_s1, log_s2 = math.log(s1), math.log(s2)
    log_r = 0.0
    n1, n2 = len(l1), len(l2)
    for it in range(1, max_iter + 1):
        num = a2 - np.logaddexp(log_s1 + a2, log_s2 + log_r)
        den = -np.logaddexp(log_s1 + a1, log_s2 + log_r)
        new = (logsumexp(num) - math.log(n2)) - (logsumexp(den) - math.log(n1))
        change = abs(math.expm1(new - log_r))
        log_r = new
        if change < tol:
            return log_r + lstar, it, True
    return log_r + lstar, max_iter, False


def bridge_sampling_logml(chain, density: ImportanceDensity, logpost_unnormalized, n_samples: int,
                          rng, tol: float = 1e-10, max_iter: int = 1000) -> MarginalLikelihoodEstimate:
    """Optimal-bridge estimate of the log normalizing constant of ``logpost_unnormalized``.

    Uses ``n_samples`` draws spread evenly over the chain and as many fresh
    importance draws. The standard error is the relative-MSE approximation
    with the posterior-draw term inflated by its integrated autocorrelation
    time, reported on the log scale.
    """
    samples = chain.samples if isinstance(chain, PosteriorChain) else np.atleast_2d(np.asarray(chain, dtype=float))
    if n_samples > len(samples):
        raise ValueError("n_samples exceeds the chain length")
    idx = np.unique(np.linspace(0, len(samples) - 1, n_samples).round().astype(int))
    post = samples[idx]
    imp = density.sample(len(post), rng)

    q11 = np.array([logpost_unnormalized(x) for x in post])
    q21 = density.logpdf(post)
    q12 = np.array([logpost_unnormalized(x) for x in imp])
    q22 = density.logpdf(imp)
    l1 = q11 - q21
    l2 = q12 - q22
    n1, n2 = len(l1), len(l2)
    finite = np.isfinite(l1)
    if not finite.all():
        raise ValueError("posterior draws with non-finite log density")
    n_eff = min(n1, n1 / integrated_autocorr_time(l1))
    s1 = n_eff / (n_eff + n2)
    s2 = n2 / (n_eff + n2)
    log_ml, iters, converged = _bridge_iterate(l1, l2, s1, s2, tol, max_iter)
    if not converged:
        log.warning("bridge sampling did not converge in %d iterations", max_iter)

    # relative MSE, evaluated with the normalized posterior q / Z
    lq_g = q12 - log_ml
    lq_p = q11 - log_ml
    f1 = np.exp(lq_g - np.logaddexp(math.log(s1) + lq_g, math.log(s2) + q22))
    f2 = np.exp(q21 - np.logaddexp(math.log(s1) + lq_p, math.log(s2) + q21))
    e1, e2 = f1.mean(), f2.mean()
    term1 = f1.var(ddof=1) / e1**2 / n2 if e1 > 0 else math.inf
    tau2 = integrated_autocorr_time(f2)
    term2 = tau2 * f2.var(ddof=1) / e2**2 / n1 if e2 > 0 else math.inf
    re2 = term1 + term2
    return MarginalLikelihoodEstimate(float(log_ml), float(math.sqrt(re2)), iters, converged)


def evidence_category(log_bf: float, thresholds=LN_BF_THRESHOLDS) -> str:
    weak, positive, strong = thresholds
    mag = abs(log_bf)
    if mag <= weak:
        label = "weak/none"
    elif mag <= positive:
        label = "positive"
    elif mag <= strong:
        label = "strong"
    else:
        label = "very strong"
    if log_bf < 0 and label != "weak/none":
        label += " for model b"
    return label


def log_bayes_factor(ml_a: MarginalLikelihoodEstimate, ml_b: MarginalLikelihoodEstimate,
                     thresholds=LN_BF_THRESHOLDS) -> tuple[float, str]:
    """ln(Z_a / Z_b) and its evidence category on the natural-log scale."""
    value = ml_a.log_ml - ml_b.log_ml
    if not (ml_a.converged and ml_b.converged):
        return value, "indeterminate"
    return value, evidence_category(value, thresholds)


@dataclass(frozen=True, eq=False)
class WaicResult:
    waic: float
    lppd: float
    p_waic: float
    pointwise: dict = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.pointwise["waic"])


def _waic_from_moments(lppd_i: np.ndarray, var_i: np.ndarray) -> WaicResult:
    waic_i = -2.0 * (lppd_i - var_i)
    lppd = float(lppd_i.sum())
    p_waic = float(var_i.sum())
    return WaicResult(-2.0 * (lppd - p_waic), lppd, p_waic,
                      {"lppd": lppd_i, "p_waic": var_i, "waic": waic_i})


def _check_finite(table: np.ndarray, offset: int = 0) -> None:
    bad = np.argwhere(~np.isfinite(table))
    if len(bad):
        s, n = bad[0]
        raise ValueError(f"non-finite pointwise log-likelihood at draw {s + offset}, datum {n}")


def waic(pointwise_loglik) -> WaicResult:
    """WAIC from an (S draws, N data) table of log-likelihood values."""
    table = np.asarray(pointwise_loglik, dtype=float)
    if table.ndim != 2 or table.shape[0] < 2 or table.shape[1] < 1:
        raise ValueError("need an S x N table with S >= 2 and N >= 1")
    _check_finite(table)
    lppd_i = logsumexp(table, axis=0) - math.log(table.shape[0])
    var_i = table.var(axis=0, ddof=1)
    return _waic_from_moments(lppd_i, var_i)


class WaicAccumulator:
    """Streaming WAIC over chunks of draws, for tables too large to hold."""

    def __init__(self):
        self.count = 0
        self._max = None
        self._sumexp = None
        self._mean = None
        self._m2 = None

    def update(self, rows) -> None:
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        _check_finite(rows, self.count)
        c = rows.shape[0]
        cmax = rows.max(axis=0)
        cmean = rows.mean(axis=0)
        cm2 = ((rows - cmean) ** 2).sum(axis=0)
        if self.count == 0:
            self._max = cmax
            self._sumexp = np.exp(rows - cmax).sum(axis=0)
            self._mean, self._m2 = cmean, cm2
        else:
            new_max = np.maximum(self._max, cmax)
            self._sumexp = self._sumexp * np.exp(self._max - new_max) + np.exp(rows - new_max).sum(axis=0)
            self._max = new_max
            total = self.count + c
            delta = cmean - self._mean
            self._mean = self._mean + delta * c / total
            self._m2 = self._m2 + cm2 + delta**2 * self.count * c / total
        self.count += c

    def result(self) -> WaicResult:
        if self.count < 2:
            raise ValueError("need at least two draws")
        lppd_i = self._max + np.log(self._sumexp) - math.log(self.count)
        var_i = self._m2 / (self.count - 1)
        return _waic_from_moments(lppd_i, var_i)


def waic_difference(a: WaicResult, b: WaicResult) -> tuple[float, float]:
    """``(waic_a - waic_b, standard error)`` from matched pointwise terms."""
    wa, wb = a.pointwise["waic"], b.pointwise["waic"]
    if len(wa) != len(wb):
        raise ValueError(f"WAIC results cover different data ({len(wa)} vs {len(wb)} points)")
    diff = wa - wb
    n = len(diff)
    se = math.sqrt(n * diff.var(ddof=1)) if n > 1 else 0.0
    return a.waic - b.waic, se


def waic_for_posterior(lp, chain: PosteriorChain, n_draws: int = 10_000, chunk: int = 500) -> WaicResult:
    """WAIC of a ``LogPosterior`` evaluated on draws spread evenly over ``chain``."""
    idx = chain.thinned(min(n_draws, len(chain)))
    acc = WaicAccumulator()
    for start in range(0, len(idx), chunk):
        rows = np.stack([lp.pointwise(chain.samples[i]).ravel() for i in idx[start:start + chunk]])
        acc.update(rows)
    return acc.result()
