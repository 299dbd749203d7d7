"""Maximum-likelihood initialization, robust adaptive Metropolis warm-up and
fixed-proposal random-walk Metropolis production runs.

The samplers work on plain vectors. For the ABM, the vacancy-fill
probability is sampled on the logit scale (see ``to_unconstrained``) and
back-transformed when the chain is stored, so chains always report natural
parameters and the natural-scale log posterior.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize

from .model import ModelParams, ModelVariant, expit, logit
from .rng import as_rng

log = logging.getLogger(__name__)


class MleError(RuntimeError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    warmup_iters: int = 30_000
    production_iters: int = 150_000
    target_accept: float = 0.234
    adaptation_decay: float = 2.0 / 3.0
    thin: int = 1
    burnin: int = 0
    mle_starts: int = 5
    mle_maxfev: int = 5_000

    def __post_init__(self):
        if self.warmup_iters < 0 or self.production_iters <= 0 or self.thin <= 0:
            raise ValueError("iteration counts must be positive")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if not 0.5 < self.adaptation_decay <= 1.0:
            raise ValueError("adaptation_decay must lie in (1/2, 1]")
        if self.burnin < 0 or self.burnin >= self.production_iters:
            raise ValueError("burnin must be in [0, production_iters)")


@dataclass(frozen=True, eq=False)
class PosteriorChain:
    samples: np.ndarray
    log_post: np.ndarray
    accepted: np.ndarray
    proposal_cov: np.ndarray
    seed: int | None = None
    variant: ModelVariant | None = None
    names: tuple = field(default=())

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if s.shape[0] == 1 and np.ndim(self.samples) == 1:
            s = s.T
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "log_post", np.asarray(self.log_post, dtype=float))
        object.__setattr__(self, "accepted", np.asarray(self.accepted, dtype=bool))
        cov = np.atleast_2d(np.asarray(self.proposal_cov, dtype=float))
        object.__setattr__(self, "proposal_cov", cov)
        if not (len(s) == len(self.log_post) == len(self.accepted)):
            raise ValueError("chain arrays differ in length")
        if not np.allclose(cov, cov.T, atol=1e-10, rtol=0):
            raise ValueError("proposal covariance is not symmetric")
        if not self.names:
            names = self.variant.param_names if self.variant else tuple(f"x{i}" for i in range(s.shape[1]))
            object.__setattr__(self, "names", names)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @property
    def acceptance_rate(self) -> float:
        return float(self.accepted.mean()) if len(self) else float("nan")

    def params(self, i: int) -> ModelParams:
        return ModelParams.from_array(self.samples[i], self.variant)

    def thinned(self, n: int) -> np.ndarray:
        """Indices of ``n`` draws spread evenly over the chain."""
        if n > len(self):
            raise ValueError(f"requested {n} draws from a chain of length {len(self)}")
        return np.unique(np.linspace(0, len(self) - 1, n).round().astype(int)) if n < len(self) else np.arange(len(self))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", *self.names, "log_post", "accepted"])
            for i in range(len(self)):
                w.writerow([i, *(repr(float(v)) for v in self.samples[i]), repr(float(self.log_post[i])),
                            int(self.accepted[i])])

    def sidecar(self, config: SamplerConfig | None = None) -> dict:
        diag = chain_diagnostics(self)
        return {
            "variant": self.variant.value if self.variant else None,
            "seed": self.seed,
            "config": asdict(config) if config else None,
            "acceptance_rate": diag["acceptance_rate"],
            "ess": diag["ess"],
            "proposal_cov": self.proposal_cov.tolist(),
        }

    def write_sidecar(self, path, config: SamplerConfig | None = None) -> None:
        with open(path, "w") as fh:
            json.dump(self.sidecar(config), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def read_csv(cls, path, variant: ModelVariant | None = None, proposal_cov=None) -> "PosteriorChain":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [list(map(float, r)) for r in reader]
        arr = np.array(rows)
        names = tuple(header[1:-2])
        d = len(names)
        cov = np.eye(d) if proposal_cov is None else proposal_cov
        return cls(arr[:, 1:1 + d], arr[:, -2], arr[:, -1].astype(bool), cov, variant=variant, names=names)


def to_unconstrained(x, variant: ModelVariant | None = None) -> np.ndarray:
    """Natural parameters -> sampling space (last coordinate, alpha, to logit)."""
    z = np.array(x, dtype=float)
    z[..., -1] = logit(np.clip(z[..., -1], 1e-300, 1.0 - 1e-16))
    return z


def from_unconstrained(z) -> np.ndarray:
    x = np.array(z, dtype=float)
    x[..., -1] = expit(np.atleast_1d(x[..., -1])).reshape(np.shape(x[..., -1]))
    return x


def log_jacobian(z) -> float:
    """log |d alpha / d logit(alpha)| = log alpha + log(1 - alpha)."""
    zl = float(np.asarray(z)[-1])
    # log sigmoid(z) + log sigmoid(-z), written to avoid overflow
    return -abs(zl) - 2.0 * math.log1p(math.exp(-abs(zl)))


def unconstrained_logpost(logpost):
    """Wrap a natural-scale log density as a density over the sampling space."""

    def target(z):
        x = from_unconstrained(z)
        lp = logpost(x)
        if not math.isfinite(lp):
            return -math.inf
        return lp + log_jacobian(z)

    return target


def find_mle(objective, variant: ModelVariant, starts: int, rng, prior=None,
             maxfev: int = 5_000, start_points=None) -> ModelParams:
    """Multi-start Nelder-Mead maximization of ``objective`` over natural params.

    The search runs on the sampling-space coordinates (alpha on the logit
    scale). Starting points are drawn from ``prior`` (a PriorSpec) unless
    ``start_points`` are given. Returns the best optimum found.
    """
    x, _ = find_mle_with_value(objective, variant, starts, rng, prior, maxfev, start_points)
    return ModelParams.from_array(x, variant)


def find_mle_with_value(objective, variant: ModelVariant, starts: int, rng, prior=None,
                        maxfev: int = 5_000, start_points=None) -> tuple[np.ndarray, float]:
    rng = as_rng(rng)
    if start_points is None:
        if prior is None:
            from .likelihood import PriorSpec

            prior = PriorSpec()
        start_points = prior.sample(variant, starts, rng)
    start_points = np.atleast_2d(np.asarray(start_points, dtype=float))
    start_points[:, -1] = np.clip(start_points[:, -1], 1e-6, 1.0 - 1e-6)

    def neg(z):
        val = objective(from_unconstrained(z))
        return -val if math.isfinite(val) else math.inf

    options = {"maxfev": maxfev, "fatol": 1e-8, "xatol": 1e-8}
    best_z, best_f = None, math.inf
    for x0 in start_points:
        z0 = to_unconstrained(x0)
        if not math.isfinite(neg(z0)):
            continue
        res = minimize(neg, z0, method="Nelder-Mead", options=options)
        # one restart from the optimum guards against a collapsed simplex
        res = minimize(neg, res.x, method="Nelder-Mead", options=options)
        if res.fun < best_f:
            best_z, best_f = res.x, res.fun
    if best_z is None or not math.isfinite(best_f):
        raise MleError("objective is -inf at every start; check the priors and the data")
    return from_unconstrained(best_z), -best_f


def _cholesky(cov: np.ndarray) -> np.ndarray:
    return np.linalg.cholesky(np.atleast_2d(cov))


def adaptive_warmup(logpost, init, cfg: SamplerConfig, rng, init_cov=None, trace: bool = False):
    """Robust adaptive Metropolis warm-up.

    After each step the proposal factor ``S`` is updated so that
    ``S S^T <- S (I + eta_n (a_n - a*) u u^T / |u|^2) S^T`` with
    ``eta_n = min(1, d n^-decay)``, steering acceptance toward ``a*``.
    Returns ``(last_state, S S^T)``; with ``trace=True`` also the per-step
    acceptance flags.
    """
    rng = as_rng(rng)
    x = np.atleast_1d(np.asarray(init, dtype=float)).copy()
    d = len(x)
    cov0 = np.eye(d) if init_cov is None else np.atleast_2d(np.asarray(init_cov, dtype=float))
    S = _cholesky(cov0)
    lpx = logpost(x)
    if not math.isfinite(lpx):
        raise ValueError("log posterior is not finite at the warm-up initial state")
    n_iter = cfg.warmup_iters
    normals = rng.standard_normal((n_iter, d))
    log_u = np.log(rng.random(n_iter))
    flags = np.zeros(n_iter, dtype=bool)
    eye = np.eye(d)
    for n in range(n_iter):
        u = normals[n]
        y = x + S @ u
        lpy = logpost(y)
        diff = lpy - lpx if math.isfinite(lpy) else -math.inf
        acc_prob = 1.0 if diff >= 0 else math.exp(diff)
        if log_u[n] < diff:
            x, lpx = y, lpy
            flags[n] = True
        eta = min(1.0, d * (n + 1) ** (-cfg.adaptation_decay))
        uu = float(u @ u)
        if uu > 0:
            M = S @ (eye + eta * (acc_prob - cfg.target_accept) * np.outer(u, u) / uu) @ S.T
            try:
                S = np.linalg.cholesky(0.5 * (M + M.T))
            except np.linalg.LinAlgError:
                log.warning("adaptive proposal lost positive definiteness at step %d; keeping last factor", n)
    cov = S @ S.T
    cov = 0.5 * (cov + cov.T)
    if trace:
        return x, cov, flags
    return x, cov


def metropolis_run(logpost, init, proposal_cov, cfg: SamplerConfig, rng, seed=None,
                   variant: ModelVariant | None = None) -> PosteriorChain:
    """Random-walk Metropolis with a fixed Gaussian proposal."""
    rng = as_rng(rng)
    x = np.atleast_1d(np.asarray(init, dtype=float)).copy()
    d = len(x)
    cov = np.atleast_2d(np.asarray(proposal_cov, dtype=float))
    L = _cholesky(cov)
    lpx = logpost(x)
    if not math.isfinite(lpx):
        raise ValueError("log posterior is not finite at the production initial state")
    n_iter = cfg.production_iters
    normals = rng.standard_normal((n_iter, d))
    log_u = np.log(rng.random(n_iter))
    keep = range(cfg.burnin, n_iter, cfg.thin)
    n_keep = len(keep)
    samples = np.empty((n_keep, d))
    lps = np.empty(n_keep)
    flags = np.zeros(n_keep, dtype=bool)
    j = 0
    step = normals @ L.T
    for n in range(n_iter):
        y = x + step[n]
        lpy = logpost(y)
        accepted = math.isfinite(lpy) and log_u[n] < lpy - lpx
        if accepted:
            x, lpx = y, lpy
        if n >= cfg.burnin and (n - cfg.burnin) % cfg.thin == 0:
            samples[j] = x
            lps[j] = lpx
            flags[j] = accepted
            j += 1
    return PosteriorChain(samples, lps, flags, cov, seed=seed, variant=variant)


def autocorrelation(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    n = len(x)
    xc = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n] / n
    if acov[0] <= 0:
        return np.r_[1.0, np.zeros(n - 1)]
    return acov / acov[0]


def integrated_autocorr_time(x) -> float:
    """Geyer initial-positive-sequence estimate; 1 for a constant series."""
    x = np.asarray(x, dtype=float)
    if len(x) and np.ptp(x) == 0:
        return float(len(x))
    if len(x) < 3:
        return 1.0
    rho = autocorrelation(x)
    n_pairs = len(rho) // 2
    pairs = rho[: 2 * n_pairs].reshape(n_pairs, 2).sum(axis=1)
    neg = np.flatnonzero(pairs <= 0)
    m = neg[0] if len(neg) else n_pairs
    tau = -1.0 + 2.0 * pairs[:m].sum()
    return max(tau, 1.0 / len(x))


def effective_sample_size(x) -> float:
    x = np.asarray(x, dtype=float)
    if len(x) == 0:
        return 0.0
    if np.ptp(x) == 0:
        return 1.0
    return len(x) / integrated_autocorr_time(x)


def split_rhat(chains) -> np.ndarray:
    """Split-R-hat per parameter across several equal-length chains."""
    arrs = [np.asarray(c.samples if isinstance(c, PosteriorChain) else c, dtype=float) for c in chains]
    n = min(len(a) for a in arrs) // 2
    halves = []
    for a in arrs:
        a = a.reshape(len(a), -1)
        halves += [a[:n], a[n:2 * n]]
    h = np.stack(halves)  # (m, n, d)
    means = h.mean(axis=1)
    B = n * means.var(axis=0, ddof=1)
    W = h.var(axis=1, ddof=1).mean(axis=0)
    var_plus = (n - 1) / n * W + B / n
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.sqrt(var_plus / W)


def chain_diagnostics(chain: PosteriorChain) -> dict:
    if len(chain) == 0:
        raise ValueError("empty chain")
    s = chain.samples
    q = np.percentile(s, [5, 50, 95], axis=0)
    return {
        "names": list(chain.names),
        "mean": s.mean(axis=0).tolist(),
        "sd": s.std(axis=0, ddof=1).tolist() if len(s) > 1 else [0.0] * chain.dim,
        "q05": q[0].tolist(),
        "q50": q[1].tolist(),
        "q95": q[2].tolist(),
        "acceptance_rate": chain.acceptance_rate,
        "ess": [effective_sample_size(s[:, j]) for j in range(chain.dim)],
        "n": len(chain),
    }


def initial_proposal_cov(prior, variant: ModelVariant) -> np.ndarray:
    """Starting warm-up covariance on the sampling scale: a tenth of each prior sd."""
    sds = [s for _, s in prior.normals(variant)] + [1.0]
    return np.diag((0.1 * np.asarray(sds)) ** 2)


@dataclass
class CalibrationResult:
    mle: ModelParams
    mle_loglik: float
    chain: PosteriorChain
    warmup_accept: float


def _prior_center(prior, variant: ModelVariant) -> np.ndarray:
    a, b = prior.alpha
    return np.array([m for m, _ in prior.normals(variant)] + [a / (a + b)])


def posterior_mode(target, starts, maxfev: int = 5_000) -> np.ndarray:
    """Best Nelder-Mead maximum of an unconstrained log density over ``starts``.

    A likelihood-only optimum can sit far outside the prior mass (flat
    directions in the likelihood), which strands a random-walk warm-up; the
    warm-up therefore starts from the posterior mode.
    """
    options = {"maxfev": maxfev, "fatol": 1e-8, "xatol": 1e-8}

    def neg(z):
        val = target(z)
        return -val if math.isfinite(val) else math.inf

    best_z, best_f = None, math.inf
    for z in starts:
        z = np.asarray(z, dtype=float)
        if not math.isfinite(neg(z)):
            continue
        res = minimize(neg, z, method="Nelder-Mead", options=options)
        res = minimize(neg, res.x, method="Nelder-Mead", options=options)
        if res.fun < best_f:
            best_z, best_f = res.x, res.fun
    if best_z is None:
        raise MleError("posterior is -inf at every warm-up start")
    return best_z


def calibrate(lp, cfg: SamplerConfig, rng_mle, rng_warmup, rng_production, seed=None) -> CalibrationResult:
    """MLE -> adaptive warm-up -> production chain for a ``LogPosterior``."""
    variant = lp.variant
    x_mle, ll_mle = find_mle_with_value(lp.loglik, variant, cfg.mle_starts, rng_mle, lp.prior, cfg.mle_maxfev)
    target = unconstrained_logpost(lp)
    z0 = posterior_mode(target, [to_unconstrained(x_mle), to_unconstrained(_prior_center(lp.prior, variant))],
                        cfg.mle_maxfev)
    warm_cfg = cfg
    if cfg.warmup_iters > 0:
        z_start, cov, flags = adaptive_warmup(target, z0, warm_cfg, rng_warmup,
                                              init_cov=initial_proposal_cov(lp.prior, variant), trace=True)
        warm_acc = float(flags[len(flags) // 2:].mean())
    else:
        z_start, cov, warm_acc = z0, initial_proposal_cov(lp.prior, variant), float("nan")
    zchain = metropolis_run(target, z_start, cov, cfg, rng_production, seed=seed, variant=variant)
    x = from_unconstrained(zchain.samples)
    zl = np.abs(zchain.samples[:, -1])
    lp_nat = zchain.log_post - (-zl - 2.0 * np.log1p(np.exp(-zl)))
    chain = PosteriorChain(x, lp_nat, zchain.accepted, zchain.proposal_cov, seed=seed, variant=variant)
    return CalibrationResult(ModelParams.from_array(x_mle, variant), ll_mle, chain, warm_acc)
