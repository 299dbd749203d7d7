"""Priors, marginalized vacancy probabilities and data likelihoods.

Each parcel's occupancy distribution starts at (vacant, occupied) =
(0.01, 0.99) and is pushed forward one year at a time with that year's
transition matrix. How the covariates entering the matrices are obtained
depends on the data record:

individual
    flood rate and neighbor vacancy are read off the observed trajectories
    (same memory rules as the simulator); the recursion itself stays
    unconditional and each parcel-year contributes a Bernoulli term.
aggregate
    states are unobserved, so the flood rate is the exogenous ten-year
    exceedance frequency and neighbor vacancy is the mean vacancy
    probability of the neighbors in the previous year (mean-field closure).
    Each year's vacant count is Poisson with mean equal to the summed
    vacancy probabilities.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import betaln, gammaln, xlog1py, xlogy

from . import kernels
from .flood import FloodSeries, ParcelDomain
from .model import (
    INITIAL_OCCUPANCY,
    ModelParams,
    ModelVariant,
    exogenous_flood_rates,
    expit,
    observed_covariates,
)

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
P_VACANT_0 = 1.0 - INITIAL_OCCUPANCY


class ConfigurationError(ValueError):
    pass


class DataMode(enum.Enum):
    INDIVIDUAL = "individual"
    AGGREGATE = "aggregate"


@dataclass(frozen=True)
class PriorSpec:
    beta0: tuple = (-7.0, 1.0)
    beta1: tuple = (19.0, 2.0)
    beta2: tuple = (5.0, 2.0)
    alpha: tuple = (1.0, 10.0)

    def __post_init__(self):
        for name in ("beta0", "beta1", "beta2"):
            if not getattr(self, name)[1] > 0:
                raise ValueError(f"prior scale for {name} must be positive")
        if not (self.alpha[0] > 0 and self.alpha[1] > 0):
            raise ValueError("Beta prior shapes must be positive")

    def normals(self, variant: ModelVariant) -> list[tuple]:
        out = [self.beta0, self.beta1]
        if variant is ModelVariant.SPATIAL_INTERACTIONS:
            out.append(self.beta2)
        return out

    def sd(self, variant: ModelVariant) -> np.ndarray:
        a, b = self.alpha
        beta_sd = math.sqrt(a * b / ((a + b) ** 2 * (a + b + 1)))
        return np.array([s for _, s in self.normals(variant)] + [beta_sd])

    def sample(self, variant: ModelVariant, n: int, rng) -> np.ndarray:
        cols = [rng.normal(m, s, size=n) for m, s in self.normals(variant)]
        cols.append(rng.beta(*self.alpha, size=n))
        return np.column_stack(cols)

    def ppf(self, q, variant: ModelVariant) -> np.ndarray:
        from scipy import stats

        cols = [stats.norm.ppf(q, m, s) for m, s in self.normals(variant)]
        cols.append(stats.beta.ppf(q, *self.alpha))
        return np.column_stack(cols)


def _as_params(params, variant: ModelVariant) -> ModelParams:
    if isinstance(params, ModelParams):
        params.check_variant(variant)
        return params
    return ModelParams.from_array(params, variant)


def log_prior_array(x, prior: PriorSpec, variant: ModelVariant) -> float:
    x = np.asarray(x, dtype=float)
    alpha = x[-1]
    if not 0.0 <= alpha <= 1.0:
        return -math.inf
    total = 0.0
    for val, (m, s) in zip(x[:-1], prior.normals(variant)):
        z = (val - m) / s
        total += -0.5 * z * z - math.log(s) - HALF_LOG_2PI
    a, b = prior.alpha
    total += float(xlogy(a - 1.0, alpha) + xlog1py(b - 1.0, -alpha) - betaln(a, b))
    return total


def log_prior(params, prior: PriorSpec, variant: ModelVariant) -> float:
    """Joint log prior density; ``params`` is a ModelParams or a raw vector
    (the latter may carry an out-of-support alpha, which scores -inf)."""
    if isinstance(params, ModelParams):
        params.check_variant(variant)
        params = params.as_array()
    return log_prior_array(params, prior, variant)


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Pseudo- or real observations for a set of parcels.

    ``individual`` is (years + 1, n) bool with True = occupied and row 0 the
    initial state, which supplies covariates only and is not scored.
    ``counts`` is (years + 1,) vacant totals of the observed parcels.
    """

    mode: DataMode
    years: int
    parcel_ids: np.ndarray
    individual: np.ndarray | None = None
    counts: np.ndarray | None = None

    def __post_init__(self):
        ids = np.asarray(self.parcel_ids, dtype=np.int64)
        object.__setattr__(self, "parcel_ids", ids)
        if self.mode is DataMode.INDIVIDUAL:
            if self.individual is None:
                raise ValueError("individual observations need the occupancy table")
            ind = np.asarray(self.individual, dtype=bool)
            if ind.shape != (self.years + 1, len(ids)):
                raise ValueError(f"occupancy table shape {ind.shape} != {(self.years + 1, len(ids))}")
            object.__setattr__(self, "individual", ind)
        else:
            if self.counts is None:
                raise ValueError("aggregate observations need vacant counts")
            c = np.asarray(self.counts, dtype=np.int64)
            if c.shape != (self.years + 1,):
                raise ValueError("counts must cover years 0..T")
            if np.any(c < 0) or np.any(c > len(ids)):
                raise ValueError("vacant counts must lie in [0, n_parcels]")
            object.__setattr__(self, "counts", c)

    @property
    def n_parcels(self) -> int:
        return len(self.parcel_ids)

    @classmethod
    def from_states(cls, states, parcel_ids, mode: DataMode) -> "ObservationSet":
        states = np.asarray(states, dtype=bool)
        years = states.shape[0] - 1
        if mode is DataMode.INDIVIDUAL:
            return cls(mode, years, parcel_ids, individual=states)
        return cls(mode, years, parcel_ids, counts=(~states).sum(axis=1))

    def to_aggregate(self) -> "ObservationSet":
        if self.mode is DataMode.AGGREGATE:
            return self
        return ObservationSet.from_states(self.individual, self.parcel_ids, DataMode.AGGREGATE)

    def truncate(self, years: int) -> "ObservationSet":
        if self.mode is DataMode.INDIVIDUAL:
            return ObservationSet(self.mode, years, self.parcel_ids, individual=self.individual[: years + 1])
        return ObservationSet(self.mode, years, self.parcel_ids, counts=self.counts[: years + 1])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if self.mode is DataMode.INDIVIDUAL:
                w.writerow(["year", "parcel_id", "occupied"])
                for t in range(self.years + 1):
                    for j, pid in enumerate(self.parcel_ids):
                        w.writerow([t, int(pid), int(self.individual[t, j])])
            else:
                w.writerow(["year", "vacant_count"])
                for t, k in enumerate(self.counts):
                    w.writerow([t, int(k)])

    @classmethod
    def read_csv(cls, path, parcel_ids=None) -> "ObservationSet":
        with open(Path(path), newline="") as fh:
            reader = csv.DictReader(fh)
            rows = list(reader)
            fields = reader.fieldnames or []
        if "parcel_id" in fields:
            years = max(int(r["year"]) for r in rows)
            ids = sorted({int(r["parcel_id"]) for r in rows})
            col = {pid: j for j, pid in enumerate(ids)}
            table = np.zeros((years + 1, len(ids)), dtype=bool)
            for r in rows:
                table[int(r["year"]), col[int(r["parcel_id"])]] = r["occupied"] in ("1", "True", "true")
            return cls(DataMode.INDIVIDUAL, years, ids, individual=table)
        counts = np.array([int(r["vacant_count"]) for r in sorted(rows, key=lambda r: int(r["year"]))])
        if parcel_ids is None:
            raise ValueError("aggregate CSV carries no parcel ids; pass parcel_ids")
        return cls(DataMode.AGGREGATE, len(counts) - 1, parcel_ids, counts=counts)


class LogPosterior:
    """Log-posterior of one model variant given one data record.

    Covariates that do not depend on the parameters are computed once here,
    so repeated evaluation (MCMC, bridge sampling) only runs the recursion.
    ``conditional=True`` swaps the unconditional marginal likelihood of the
    individual record for the product of one-step transition probabilities
    (sensitivity option, off by default).
    """

    def __init__(self, obs: ObservationSet, floods: FloodSeries, domain: ParcelDomain,
                 prior: PriorSpec | None, variant: ModelVariant, conditional: bool = False):
        self.obs = obs
        self.prior = prior or PriorSpec()
        self.variant = ModelVariant.parse(variant)
        self.conditional = conditional
        self.mode = obs.mode
        self.spatial = self.variant is ModelVariant.SPATIAL_INTERACTIONS
        if floods.n_years < obs.years:
            raise ConfigurationError("flood series shorter than the observation record")
        floods = floods.truncate(obs.years)

        if self.mode is DataMode.INDIVIDUAL:
            if not np.array_equal(domain.parcel_ids, obs.parcel_ids):
                raise ConfigurationError(
                    "individual data must cover exactly the domain's parcels (neighbor states are needed)"
                )
            self.R, self.V = observed_covariates(obs.individual, domain, floods)
            self.vacant = (~obs.individual).astype(np.uint8)
        else:
            pos = {int(p): k for k, p in enumerate(domain.parcel_ids)}
            missing = [int(p) for p in obs.parcel_ids if int(p) not in pos]
            if missing:
                raise ConfigurationError(f"observed parcels {missing[:5]} not in the domain")
            self.observed_index = np.array([pos[int(p)] for p in obs.parcel_ids], dtype=np.int64)
            self.R = exogenous_flood_rates(domain, floods, obs.years)
            self.nbr_ptr, self.nbr_idx = domain.neighbor_csr()
            self.counts = obs.counts
            self.log_k_fact = gammaln(self.counts[1:] + 1.0)

    @property
    def dim(self) -> int:
        return self.variant.n_params

    def _unpack(self, x):
        x = np.asarray(x, dtype=float)
        if self.spatial:
            return x[0], x[1], x[2], x[3]
        return x[0], x[1], 0.0, x[2]

    def marginal_table(self, x) -> np.ndarray:
        """(years + 1, n) vacancy probabilities, row 0 the initial distribution."""
        b0, b1, b2, alpha = self._unpack(x)
        if self.mode is DataMode.INDIVIDUAL:
            return kernels.marginal_fixed(b0, b1, b2, alpha, self.R, self.V, P_VACANT_0)
        return kernels.marginal_meanfield(b0, b1, b2, alpha, self.R, self.nbr_ptr, self.nbr_idx,
                                          self.spatial, P_VACANT_0)

    def expected_counts(self, x) -> np.ndarray:
        pv = self.marginal_table(x)
        if self.mode is DataMode.AGGREGATE:
            pv = pv[:, self.observed_index]
        return pv.sum(axis=1)

    def loglik(self, x) -> float:
        b0, b1, b2, alpha = self._unpack(x)
        if not 0.0 <= alpha <= 1.0:
            return -math.inf
        if self.obs.years == 0:
            return 0.0
        if self.mode is DataMode.INDIVIDUAL:
            if self.conditional:
                return float(self.pointwise(x).sum())
            return kernels.loglik_individual(b0, b1, b2, alpha, self.R, self.V, self.vacant, P_VACANT_0)
        return float(self.pointwise(x).sum())

    def pointwise(self, x) -> np.ndarray:
        """Per-datum log-likelihood: (years, n) parcel-years or (years,) yearly counts."""
        if self.mode is DataMode.INDIVIDUAL:
            obs_vacant = self.vacant[1:].astype(bool)
            if self.conditional:
                b0, b1, b2, alpha = self._unpack(x)
                p10 = expit(b0 + b1 * self.R + b2 * self.V)
                prev_occ = self.vacant[:-1] == 0
                p_vac = np.where(prev_occ, p10, 1.0 - alpha)
            else:
                p_vac = self.marginal_table(x)[1:]
            with np.errstate(divide="ignore"):
                return np.where(obs_vacant, np.log(p_vac), np.log1p(-p_vac))
        lam = self.expected_counts(x)[1:]
        k = self.counts[1:]
        with np.errstate(divide="ignore", invalid="ignore"):
            out = xlogy(k, lam) - lam - self.log_k_fact
        return out

    def log_prior(self, x) -> float:
        return log_prior_array(x, self.prior, self.variant)

    def __call__(self, x) -> float:
        lp = self.log_prior(x)
        if not math.isfinite(lp):
            return -math.inf
        return lp + self.loglik(x)


def marginal_vacancy_probs(params, obs, floods, domain, variant) -> np.ndarray:
    variant = ModelVariant.parse(variant)
    p = _as_params(params, variant)
    return LogPosterior(obs, floods, domain, None, variant).marginal_table(p.as_array())


def log_lik_individual(params, obs, floods, domain, variant, conditional: bool = False) -> float:
    if obs.mode is not DataMode.INDIVIDUAL:
        raise ValueError("log_lik_individual needs individual-mode observations")
    variant = ModelVariant.parse(variant)
    p = _as_params(params, variant)
    return LogPosterior(obs, floods, domain, None, variant, conditional).loglik(p.as_array())


def log_lik_aggregate(params, obs, floods, domain, variant) -> float:
    if obs.mode is not DataMode.AGGREGATE:
        raise ValueError("log_lik_aggregate needs aggregate-mode observations")
    variant = ModelVariant.parse(variant)
    p = _as_params(params, variant)
    return LogPosterior(obs, floods, domain, None, variant).loglik(p.as_array())


def poisson_loglik(counts, lam) -> float:
    """Sum of Poisson log-pmfs; ``lam == 0`` with a positive count gives -inf."""
    k = np.asarray(counts, dtype=float)
    lam = np.asarray(lam, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return float(np.sum(xlogy(k, lam) - lam - gammaln(k + 1.0)))


def log_posterior(params, obs, floods, domain, prior, variant) -> float:
    variant = ModelVariant.parse(variant)
    x = np.asarray(params.as_array() if isinstance(params, ModelParams) else params, dtype=float)
    return LogPosterior(obs, floods, domain, prior, variant)(x)
