"""Exogenous flood forcing and the synthetic riparian parcel domain."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import as_rng

log = logging.getLogger(__name__)

GUMBEL_SHAPE_EPS = 1e-9


class DomainConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GevParams:
    location: float = 865.0
    scale: float = 11.0
    shape: float = 0.02

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"GEV scale must be positive, got {self.scale}")


def gev_quantile(p, g: GevParams):
    """Inverse GEV CDF (annual non-exceedance probability ``p`` -> level).

    Uses the climatological sign convention: a positive shape gives a heavy
    upper tail and a finite lower bound ``location - scale / shape``.
    Accepts scalars or arrays.
    """
    p_arr = np.asarray(p, dtype=float)
    if np.any(~((p_arr > 0.0) & (p_arr < 1.0))):
        raise ValueError("gev_quantile requires 0 < p < 1")
    y = -np.log(p_arr)
    if abs(g.shape) < GUMBEL_SHAPE_EPS:
        out = g.location - g.scale * np.log(y)
    else:
        # expm1 keeps precision when shape * ln(y) is small
        out = g.location + g.scale * np.expm1(-g.shape * np.log(y)) / g.shape
    return float(out) if np.ndim(out) == 0 else out


def gev_sample(g: GevParams, rng=None, u=None):
    """Draw one GEV variate by inverse CDF; ``u`` may be injected for testing."""
    if u is None:
        u = as_rng(rng).random()
        # Generator.random() is on [0, 1); 0 has probability 2**-53 but is outside the domain
        while u == 0.0:
            u = as_rng(rng).random()
    return gev_quantile(u, g)


def gev_sample_many(g: GevParams, n: int, rng) -> np.ndarray:
    u = as_rng(rng).random(n)
    u[u == 0.0] = np.nextafter(0.0, 1.0)
    return gev_quantile(u, g)


@dataclass(frozen=True)
class FloodSeries:
    spin_up: np.ndarray
    observed: np.ndarray

    def __post_init__(self):
        for name in ("spin_up", "observed"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite flood levels in {name}")
            object.__setattr__(self, name, arr)

    @property
    def n_spin_up(self) -> int:
        return len(self.spin_up)

    @property
    def n_years(self) -> int:
        return len(self.observed)

    @property
    def levels(self) -> np.ndarray:
        """Spin-up followed by simulation years, oldest first."""
        return np.concatenate([self.spin_up, self.observed])

    def truncate(self, years: int) -> "FloodSeries":
        if years > self.n_years:
            raise ValueError(f"flood series has {self.n_years} years, {years} requested")
        return FloodSeries(self.spin_up, self.observed[:years])


def simulate_flood_series(g: GevParams, spin_up_years: int, years: int, rng) -> FloodSeries:
    if years <= 0:
        raise ValueError("years must be positive")
    draws = gev_sample_many(g, spin_up_years + years, rng)
    return FloodSeries(draws[:spin_up_years], draws[spin_up_years:])


@dataclass(frozen=True)
class DomainConfig:
    rows: int = 10
    cols: int = 10
    t_min: float = 2.0
    t_max: float = 500.0
    subdomain_sizes: tuple = (25, 50, 100)
    neighborhood: str = "vonneumann"
    # rows of mixing allowed when sorting return periods away from the river
    river_jitter: float = 1.5
    seed: int = 20190101


@dataclass(frozen=True, eq=False)
class ParcelDomain:
    """Parcels on a rectangular grid; row 0 borders the river.

    ``parcel_ids`` are global ids (row-major index in the full grid) so that
    restricted subdomains keep the labels of the parent domain.
    """

    grid_dims: tuple
    parcel_ids: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    return_periods: np.ndarray
    elevations: np.ndarray
    subdomain_masks: dict
    adjacency: tuple = field(repr=False)

    @property
    def n_parcels(self) -> int:
        return len(self.parcel_ids)

    def neighbor_csr(self) -> tuple[np.ndarray, np.ndarray]:
        ptr = np.zeros(self.n_parcels + 1, dtype=np.int64)
        ptr[1:] = np.cumsum([len(a) for a in self.adjacency])
        idx = np.concatenate([np.asarray(a, dtype=np.int64) for a in self.adjacency]) if self.n_parcels else np.zeros(0, np.int64)
        return ptr, idx.astype(np.int64)

    def restrict(self, size: int) -> "ParcelDomain":
        """Subdomain of the nested ``size`` block; neighbors outside it are dropped."""
        if size not in self.subdomain_masks:
            raise DomainConfigError(f"no subdomain of size {size}; have {sorted(self.subdomain_masks)}")
        keep = np.flatnonzero(self.subdomain_masks[size])
        remap = -np.ones(self.n_parcels, dtype=np.int64)
        remap[keep] = np.arange(len(keep))
        adjacency = tuple(
            np.array([remap[j] for j in self.adjacency[i] if remap[j] >= 0], dtype=np.int64)
            for i in keep
        )
        masks = {k: m[keep] for k, m in self.subdomain_masks.items() if k <= size}
        return ParcelDomain(
            grid_dims=self.grid_dims,
            parcel_ids=self.parcel_ids[keep],
            rows=self.rows[keep],
            cols=self.cols[keep],
            return_periods=self.return_periods[keep],
            elevations=self.elevations[keep],
            subdomain_masks=masks,
            adjacency=adjacency,
        )

    def exceedances(self, floods: FloodSeries) -> np.ndarray:
        """(n_parcels, n_spin_up + n_years) uint8 table: annual max >= elevation."""
        return (floods.levels[None, :] >= self.elevations[:, None]).astype(np.uint8)


def _block_shapes(sizes, rows: int, cols: int) -> list[tuple[int, int]]:
    shapes = []
    prev_h, prev_w = 0, 0
    for n in sorted(sizes):
        best = None
        for h in range(max(prev_h, 1), rows + 1):
            if n % h:
                continue
            w = n // h
            if w < prev_w or w > cols:
                continue
            key = (abs(h - w), -h)
            if best is None or key < best[0]:
                best = (key, (h, w))
        if best is None:
            raise DomainConfigError(
                f"cannot fit a nested rectangular {n}-parcel block in a {rows}x{cols} grid"
            )
        prev_h, prev_w = best[1]
        shapes.append(best[1])
    return shapes


def grid_adjacency(rows: int, cols: int, neighborhood: str = "vonneumann") -> tuple:
    if neighborhood == "vonneumann":
        offsets = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    elif neighborhood == "moore":
        offsets = [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if (dr, dc) != (0, 0)]
    else:
        raise DomainConfigError(f"unknown neighborhood {neighborhood!r} (use vonneumann or moore)")
    adj = []
    for r in range(rows):
        for c in range(cols):
            nb = [
                (r + dr) * cols + (c + dc)
                for dr, dc in offsets
                if 0 <= r + dr < rows and 0 <= c + dc < cols
            ]
            adj.append(np.array(nb, dtype=np.int64))
    return tuple(adj)


def generate_domain(cfg: DomainConfig, g: GevParams) -> ParcelDomain:
    """Build the synthetic riparian domain.

    Return periods are log-uniform on ``[t_min, t_max]``; the sorted values are
    dealt out to parcels ordered by distance from the river (row index plus a
    uniform jitter), so frequently flooded parcels cluster along the bank.
    Nested subdomains are rectangular blocks anchored at the river corner.
    """
    n = cfg.rows * cfg.cols
    if any(s > n or s <= 0 for s in cfg.subdomain_sizes):
        raise DomainConfigError(f"subdomain sizes {cfg.subdomain_sizes} exceed the {n}-parcel grid")
    if not 1.0 < cfg.t_min < cfg.t_max:
        raise DomainConfigError("return-period range must satisfy 1 < t_min < t_max")
    rng = np.random.default_rng(cfg.seed)
    log_t = rng.uniform(math.log(cfg.t_min), math.log(cfg.t_max), size=n)
    t_sorted = np.sort(np.exp(log_t))

    rows = np.repeat(np.arange(cfg.rows), cfg.cols)
    cols = np.tile(np.arange(cfg.cols), cfg.rows)
    distance = rows + cfg.river_jitter * rng.random(n)
    order = np.argsort(distance, kind="stable")
    return_periods = np.empty(n)
    return_periods[order] = t_sorted
    elevations = gev_quantile(1.0 - 1.0 / return_periods, g)

    masks = {}
    for size, (h, w) in zip(sorted(cfg.subdomain_sizes), _block_shapes(cfg.subdomain_sizes, cfg.rows, cfg.cols)):
        masks[size] = (rows < h) & (cols < w)
    return ParcelDomain(
        grid_dims=(cfg.rows, cfg.cols),
        parcel_ids=np.arange(n),
        rows=rows,
        cols=cols,
        return_periods=return_periods,
        elevations=np.asarray(elevations, dtype=float),
        subdomain_masks=masks,
        adjacency=grid_adjacency(cfg.rows, cfg.cols, cfg.neighborhood),
    )


def write_domain_csv(domain: ParcelDomain, path) -> None:
    sizes = sorted(domain.subdomain_masks)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "row", "col", "return_period", "elevation"] + [f"in_{s}" for s in sizes])
        for k in range(domain.n_parcels):
            w.writerow(
                [int(domain.parcel_ids[k]), int(domain.rows[k]), int(domain.cols[k]),
                 repr(float(domain.return_periods[k])), repr(float(domain.elevations[k]))]
                + [int(domain.subdomain_masks[s][k]) for s in sizes]
            )


def write_floods_csv(floods: FloodSeries, path) -> None:
    """Years run from ``1 - n_spin_up`` (oldest spin-up year) to ``n_years``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["year", "annual_max"])
        for k, level in enumerate(floods.levels):
            w.writerow([k - floods.n_spin_up + 1, repr(float(level))])


def read_floods_csv(path) -> FloodSeries:
    years, levels = [], []
    with open(Path(path), newline="") as fh:
        for row in csv.DictReader(fh):
            years.append(int(row["year"]))
            levels.append(float(row["annual_max"]))
    years = np.array(years)
    levels = np.array(levels)
    return FloodSeries(levels[years <= 0], levels[years > 0])
