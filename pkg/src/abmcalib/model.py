"""Parcel abandonment dynamics: decision rules, transition matrices and simulation.

State encoding is ``1 = occupied``, ``0 = vacant`` throughout. Years are
numbered 1..T for the simulation with year 0 the initial state; flood levels
carry a spin-up window before year 1 so the ten-year flood-rate window is
always defined.

Flood memory rules used by both the simulator and the observed-data
covariates:

* an occupant who has lived on a parcel for ``rho`` years (counting the
  current year) averages flood hits over the last ``w = max(10, rho)`` years;
* residents present at year 0 remember the full spin-up record;
* an occupant moving in during year ``t`` starts with an empty flood memory,
  so only hits from year ``t + 1`` on count, still divided by ``w``;
* vacancy resets the flood rate to zero.

With ``resets=False`` the flood rate is the plain exogenous ten-year
exceedance frequency, which makes the marginal recursion exact for the
no-interactions model.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from ._fallback import expit
from .flood import FloodSeries, ParcelDomain
from .rng import as_rng

log = logging.getLogger(__name__)

NORM_TOL = 1e-12
MIN_WINDOW = 10
INITIAL_OCCUPANCY = 0.99


class ModelVariant(enum.Enum):
    NO_INTERACTIONS = "no_interactions"
    SPATIAL_INTERACTIONS = "spatial_interactions"

    @property
    def n_params(self) -> int:
        return 3 if self is ModelVariant.NO_INTERACTIONS else 4

    @property
    def param_names(self) -> tuple[str, ...]:
        if self is ModelVariant.NO_INTERACTIONS:
            return ("beta0", "beta1", "alpha")
        return ("beta0", "beta1", "beta2", "alpha")

    @property
    def short(self) -> str:
        return "none" if self is ModelVariant.NO_INTERACTIONS else "spatial"

    @classmethod
    def parse(cls, value) -> "ModelVariant":
        if isinstance(value, cls):
            return value
        key = str(value).lower().replace("-", "_")
        aliases = {"none": cls.NO_INTERACTIONS, "no_interactions": cls.NO_INTERACTIONS,
                   "spatial": cls.SPATIAL_INTERACTIONS, "spatial_interactions": cls.SPATIAL_INTERACTIONS}
        if key not in aliases:
            raise ValueError(f"unknown model variant {value!r}")
        return aliases[key]


@dataclass(frozen=True)
class ModelParams:
    beta0: float
    beta1: float
    beta2: float | None = None
    alpha: float = 0.01

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")

    @property
    def variant(self) -> ModelVariant:
        return ModelVariant.NO_INTERACTIONS if self.beta2 is None else ModelVariant.SPATIAL_INTERACTIONS

    def check_variant(self, variant: ModelVariant) -> None:
        if (self.beta2 is not None) != (variant is ModelVariant.SPATIAL_INTERACTIONS):
            raise ValueError(f"parameters {self} do not match variant {variant.value}")

    def as_array(self) -> np.ndarray:
        if self.beta2 is None:
            return np.array([self.beta0, self.beta1, self.alpha])
        return np.array([self.beta0, self.beta1, self.beta2, self.alpha])

    @classmethod
    def from_array(cls, x, variant: ModelVariant) -> "ModelParams":
        x = [float(v) for v in x]
        if len(x) != variant.n_params:
            raise ValueError(f"{variant.value} takes {variant.n_params} parameters, got {len(x)}")
        if variant is ModelVariant.NO_INTERACTIONS:
            return cls(x[0], x[1], None, x[2])
        return cls(x[0], x[1], x[2], x[3])


DATA_GENERATING = ModelParams(-6.0, 20.0, 4.0, 0.01)


@dataclass(frozen=True)
class ParcelState:
    occupied: bool
    flood_rate: float = 0.0
    residency_years: int = 0
    neighbor_vacancy: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.flood_rate <= 1.0 or not 0.0 <= self.neighbor_vacancy <= 1.0:
            raise ValueError("flood_rate and neighbor_vacancy must lie in [0, 1]")
        if self.residency_years < 0:
            raise ValueError("residency_years must be nonnegative")
        if not self.occupied and self.flood_rate != 0.0:
            raise ValueError("a vacant parcel has flood_rate 0")


@dataclass(frozen=True)
class OccupancyDistribution:
    p_vacant: float
    p_occupied: float

    def __post_init__(self):
        for p in (self.p_vacant, self.p_occupied):
            if not -NORM_TOL <= p <= 1.0 + NORM_TOL:
                raise ValueError(f"probability {p} outside [0, 1]")
        if abs(self.p_vacant + self.p_occupied - 1.0) > NORM_TOL:
            raise ValueError("occupancy distribution is not normalized")

    def as_vector(self) -> np.ndarray:
        return np.array([self.p_vacant, self.p_occupied])


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    """Column-stochastic 2x2 matrix; rows/columns ordered (vacant, occupied).

    Column j is the distribution of the next state given previous state j.
    """

    entries: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.entries, dtype=float)
        if m.shape != (2, 2):
            raise ValueError("transition matrix must be 2x2")
        if np.any(m < 0.0) or np.any(m > 1.0):
            raise ValueError("transition probabilities must lie in [0, 1]")
        if np.any(np.abs(m.sum(axis=0) - 1.0) > NORM_TOL):
            raise ValueError("transition matrix columns must sum to 1")
        object.__setattr__(self, "entries", m)

    def __matmul__(self, other):
        if isinstance(other, TransitionMatrix):
            return self.entries @ other.entries
        return self.entries @ np.asarray(other)


def inverse_logit(y):
    """Logistic function, stable for large ``|y|``; scalar in, scalar out."""
    if np.ndim(y) > 0:
        return expit(y)
    y = float(y)
    if y >= 0:
        return 1.0 / (1.0 + math.exp(-y))
    e = math.exp(y)
    return e / (1.0 + e)


def logit(p):
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.log(p) - np.log1p(-p)
    return float(out) if out.ndim == 0 else out


def abandonment_prob(params: ModelParams, r: float, v: float, variant: ModelVariant,
                     strict: bool = False) -> float:
    """Probability that an occupied parcel is abandoned this year."""
    if not (0.0 <= r <= 1.0 and 0.0 <= v <= 1.0):
        raise ValueError("r and v must lie in [0, 1]")
    y = params.beta0 + params.beta1 * r
    if variant is ModelVariant.SPATIAL_INTERACTIONS:
        if params.beta2 is None:
            raise ValueError("spatial-interactions model needs beta2")
        y += params.beta2 * v
    elif strict and v != 0.0:
        raise ValueError("no-interactions model given a nonzero neighbor vacancy")
    return inverse_logit(y)


def transition_matrix(p10: float, p01: float) -> TransitionMatrix:
    """Matrix for one year given P(occupied -> vacant) and P(vacant -> occupied)."""
    if not (0.0 <= p10 <= 1.0 and 0.0 <= p01 <= 1.0):
        raise ValueError(f"transition probabilities out of range: p10={p10}, p01={p01}")
    return TransitionMatrix(np.array([[1.0 - p01, p10], [p01, 1.0 - p10]]))


def step_marginal(dist: OccupancyDistribution, m: TransitionMatrix) -> OccupancyDistribution:
    pv, po = m.entries @ dist.as_vector()
    # renormalize away accumulated rounding
    s = pv + po
    return OccupancyDistribution(pv / s, po / s)


def update_flood_rate(flood_hits, residency_years: int, occupied: bool) -> float:
    """Fraction of flooded years over the last ``max(10, residency_years)`` years.

    ``flood_hits`` is the occupant's personal record, most recent year last;
    years before the occupant moved in should be padded as no-hit.
    """
    if not occupied:
        return 0.0
    w = max(MIN_WINDOW, int(residency_years))
    hits = np.asarray(flood_hits, dtype=bool)
    if len(hits) < w:
        raise ValueError(f"flood history of {len(hits)} years is shorter than the {w}-year window; supply spin-up years")
    return float(hits[len(hits) - w:].sum()) / w


def neighbor_vacancy_fraction(parcel: int, previous_states, domain: ParcelDomain) -> float:
    """Share of ``parcel``'s neighbors that were vacant in the previous year."""
    nbrs = domain.adjacency[parcel]
    if len(nbrs) == 0:
        log.warning("parcel %d has no neighbors; neighbor vacancy set to 0", parcel)
        return 0.0
    prev = np.asarray(previous_states)
    return float(np.sum(prev[nbrs] == 0)) / len(nbrs)


def _params_tuple(params: ModelParams, variant: ModelVariant):
    params.check_variant(variant)
    beta2 = params.beta2 if variant is ModelVariant.SPATIAL_INTERACTIONS else 0.0
    return params.beta0, params.beta1, beta2, params.alpha


def draw_initial_states(n_runs: int, n_parcels: int, rng, p_occupied: float = INITIAL_OCCUPANCY) -> np.ndarray:
    return (as_rng(rng).random((n_runs, n_parcels)) < p_occupied).astype(np.uint8)


def simulate_ensemble(domain: ParcelDomain, params: ModelParams, floods: FloodSeries,
                      variant: ModelVariant, years: int, n_runs: int, rng,
                      initial_states=None, resets: bool = True) -> np.ndarray:
    """Run ``n_runs`` independent realizations; returns uint8 (n_runs, years + 1, n_parcels).

    Random numbers are drawn up front (initial states, then one uniform per
    run, year and parcel) so the result depends only on the generator state,
    never on the kernel backend.
    """
    if floods.n_spin_up < MIN_WINDOW - 1:
        raise ValueError("flood series needs at least 9 spin-up years")
    if years > floods.n_years:
        raise ValueError(f"{years} years requested but the flood series covers {floods.n_years}")
    rng = as_rng(rng)
    n = domain.n_parcels
    if initial_states is None:
        init = draw_initial_states(n_runs, n, rng)
    else:
        init = np.broadcast_to(np.asarray(initial_states, dtype=np.uint8), (n_runs, n)).copy()
    u = rng.random((n_runs, years, n))
    b0, b1, b2, alpha = _params_tuple(params, variant)
    ptr, idx = domain.neighbor_csr()
    hits = domain.exceedances(floods)
    return kernels.simulate_batch(
        hits, floods.n_spin_up, years, init, u, b0, b1, b2, alpha,
        variant is ModelVariant.SPATIAL_INTERACTIONS, ptr, idx, resets,
    )


def simulate_forward(domain: ParcelDomain, params: ModelParams, floods: FloodSeries,
                     variant: ModelVariant, years: int, seed, initial_states=None,
                     resets: bool = True) -> np.ndarray:
    """One realization; bool array (years + 1, n_parcels), row 0 the initial state."""
    traj = simulate_ensemble(domain, params, floods, variant, years, 1, seed,
                             initial_states=initial_states, resets=resets)
    return traj[0].astype(bool)


def exogenous_flood_rates(domain: ParcelDomain, floods: FloodSeries, years: int | None = None) -> np.ndarray:
    """Ten-year exceedance frequency for each year and parcel, shape (years, n)."""
    years = floods.n_years if years is None else years
    hits = domain.exceedances(floods).astype(np.int64)
    cum = np.concatenate([np.zeros((hits.shape[0], 1), np.int64), np.cumsum(hits, axis=1)], axis=1)
    k = floods.n_spin_up + np.arange(years)
    return ((cum[:, k + 1] - cum[:, k + 1 - MIN_WINDOW]) / MIN_WINDOW).T.copy()


def observed_covariates(states, domain: ParcelDomain, floods: FloodSeries) -> tuple[np.ndarray, np.ndarray]:
    """Flood rate and neighbor vacancy implied by an observed trajectory.

    ``states`` is (years + 1, n) with row 0 the initial state. Returns ``(r, v)``
    each of shape (years, n); row ``t - 1`` holds the covariates entering the
    transition into year ``t``. Uses the same memory rules as the simulator.
    """
    states = np.asarray(states).astype(bool)
    years, n = states.shape[0] - 1, states.shape[1]
    if n != domain.n_parcels:
        raise ValueError("observation columns do not match the domain")
    hits = domain.exceedances(floods).astype(np.int64)
    cum = np.concatenate([np.zeros((n, 1), np.int64), np.cumsum(hits, axis=1)], axis=1)
    rows = np.arange(n)
    movein = np.zeros(n, dtype=np.int64)
    hist_start = np.zeros(n, dtype=np.int64)
    r = np.zeros((years, n))
    for t in range(1, years + 1):
        k = floods.n_spin_up + t - 1
        w = np.maximum(MIN_WINDOW, t - movein)
        lo = np.maximum(k - w + 1, hist_start)
        r[t - 1] = np.where(states[t - 1], (cum[rows, k + 1] - cum[rows, lo]) / w, 0.0)
        arrived = ~states[t - 1] & states[t]
        movein[arrived] = t
        hist_start[arrived] = k + 1

    ptr, idx = domain.neighbor_csr()
    deg = np.diff(ptr)
    if np.any(deg == 0):
        log.warning("%d isolated parcels; their neighbor vacancy is 0", int(np.sum(deg == 0)))
    A = np.zeros((n, n))
    A[np.repeat(rows, deg), idx] = 1.0
    v = ((~states[:-1]).astype(float) @ A.T) / np.maximum(deg, 1)
    return r, v
