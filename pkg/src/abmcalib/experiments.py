"""Perfect-model experiment: pseudo-data, calibration, model selection, hindcasts."""

from __future__ import annotations

import hashlib
import logging
import math
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig, Scenario, filter_scenarios, scenario_grid
from .flood import FloodSeries, ParcelDomain, generate_domain, simulate_flood_series
from .likelihood import DataMode, LogPosterior, ObservationSet
from .mcmc import CalibrationResult, PosteriorChain, calibrate, chain_diagnostics
from .model import ModelParams, ModelVariant, simulate_ensemble, simulate_forward
from .rng import derive_rng, stream_entropy
from .selection import (
    MarginalLikelihoodEstimate,
    WaicResult,
    bridge_sampling_logml,
    fit_importance_density,
    log_bayes_factor,
    waic_difference,
    waic_for_posterior,
)

log = logging.getLogger(__name__)

STAGES = ("data", "calibrate", "select", "hindcast")


@dataclass(frozen=True, eq=False)
class Environment:
    domain: ParcelDomain
    floods: FloodSeries


def build_environment(cfg: ExperimentConfig) -> Environment:
    """Full parcel domain and one flood record shared by every scenario."""
    domain = generate_domain(cfg.domain, cfg.gev)
    floods = simulate_flood_series(cfg.gev, cfg.spin_up_years, cfg.max_years, derive_rng(cfg.seed, "floods"))
    return Environment(domain, floods)


def generate_pseudo_observations(cfg: ExperimentConfig, scenario: Scenario | None = None,
                                 env: Environment | None = None) -> tuple[ObservationSet, ObservationSet]:
    """One spatial-interactions realization on the scenario's subdomain.

    The realization depends on (seed, parcels, replicate) only: it is run for
    the longest configured record and truncated, so the individual and
    aggregate scenarios, and shorter records, all see the same data.
    """
    env = env or build_environment(cfg)
    if scenario is None:
        scenario = Scenario(cfg.max_years, max(cfg.grid.parcels), "individual")
    sub = env.domain.restrict(scenario.parcels)
    states = simulate_forward(
        sub, cfg.data_generating, env.floods, ModelVariant.SPATIAL_INTERACTIONS, cfg.max_years,
        derive_rng(cfg.seed, "data", scenario.parcels, scenario.replicate),
    )[: scenario.years + 1]
    ind = ObservationSet.from_states(states, sub.parcel_ids, DataMode.INDIVIDUAL)
    return ind, ind.to_aggregate()


def data_digest(obs: ObservationSet) -> str:
    h = hashlib.sha256()
    h.update(np.asarray(obs.parcel_ids, dtype=np.int64).tobytes())
    if obs.individual is not None:
        h.update(np.ascontiguousarray(obs.individual, dtype=np.uint8).tobytes())
    else:
        h.update(np.asarray(obs.counts, dtype=np.int64).tobytes())
    return h.hexdigest()[:16]


def _vacant_quantiles(counts: np.ndarray, quantiles) -> dict:
    q = np.percentile(counts, quantiles, axis=0)
    return {f"q{g:g}": q[k] for k, g in enumerate(quantiles)}


def hindcast_from_draws(draws: np.ndarray, variant: ModelVariant, cfg: ExperimentConfig,
                        scenario: Scenario, env: Environment, rng) -> dict:
    """Simulate one realization per parameter draw; per-year vacant-count quantiles."""
    sub = env.domain.restrict(scenario.parcels)
    floods = env.floods.truncate(scenario.years)
    counts = np.empty((len(draws), scenario.years + 1))
    for k, x in enumerate(draws):
        traj = simulate_ensemble(sub, ModelParams.from_array(x, variant), floods, variant,
                                 scenario.years, 1, rng)
        counts[k] = (1 - traj[0]).sum(axis=1)
    out = {"year": np.arange(scenario.years + 1)}
    out.update(_vacant_quantiles(counts, cfg.hindcast.quantiles))
    return out


def posterior_predictive_hindcast(chain: PosteriorChain, cfg: ExperimentConfig, scenario: Scenario,
                                  env: Environment | None = None, rng=None) -> dict:
    env = env or build_environment(cfg)
    rng = rng if rng is not None else derive_rng(cfg.seed, scenario.id, chain.variant.value, "hindcast")
    idx = chain.thinned(min(cfg.hindcast.draws, len(chain)))
    return hindcast_from_draws(chain.samples[idx], chain.variant, cfg, scenario, env, rng)


def prior_predictive_hindcast(variant: ModelVariant, cfg: ExperimentConfig, scenario: Scenario,
                              env: Environment | None = None, rng=None) -> dict:
    env = env or build_environment(cfg)
    rng = rng if rng is not None else derive_rng(cfg.seed, scenario.id, variant.value, "prior-hindcast")
    draws = cfg.prior.sample(variant, cfg.hindcast.prior_draws, rng)
    return hindcast_from_draws(draws, variant, cfg, scenario, env, rng)


@dataclass
class VariantResult:
    variant: ModelVariant
    calibration: CalibrationResult | None = None
    log_ml: MarginalLikelihoodEstimate | None = None
    waic: WaicResult | None = None
    hindcast: dict | None = None
    prior_hindcast: dict | None = None

    @property
    def chain(self) -> PosteriorChain | None:
        return self.calibration.chain if self.calibration else None


@dataclass
class ScenarioResult:
    scenario: Scenario
    digest: str
    observations: ObservationSet
    variants: dict = field(default_factory=dict)
    comparison: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    errors: list = field(default_factory=list)

    @property
    def id(self) -> str:
        return self.scenario.id

    @property
    def status(self) -> str:
        return "ok" if not self.errors else "partial"


def _step(result: ScenarioResult, label: str, fn):
    t0 = time.perf_counter()
    try:
        return fn()
    except Exception as exc:  # one failing step must not abort the grid
        log.error("scenario %s: %s failed: %s", result.id, label, exc)
        log.debug("%s", traceback.format_exc())
        result.errors.append({"step": label, "error": f"{type(exc).__name__}: {exc}"})
        return None
    finally:
        result.timings[label] = time.perf_counter() - t0


def run_scenario(cfg: ExperimentConfig, scenario: Scenario, stages=STAGES,
                 env: Environment | None = None) -> ScenarioResult:
    env = env or build_environment(cfg)
    ind, agg = generate_pseudo_observations(cfg, scenario, env)
    obs = ind if scenario.data_mode is DataMode.INDIVIDUAL else agg
    result = ScenarioResult(scenario, data_digest(ind), obs)
    if "calibrate" not in stages and "select" not in stages and "hindcast" not in stages:
        return result

    sub = env.domain.restrict(scenario.parcels)
    floods = env.floods.truncate(scenario.years)
    sid = scenario.id
    for variant in cfg.variant_list:
        tag = variant.short
        vr = VariantResult(variant)
        result.variants[tag] = vr
        lp = LogPosterior(obs, floods, sub, cfg.prior, variant)
        seed = stream_entropy(cfg.seed, sid, variant.value, "production")
        vr.calibration = _step(result, f"calibrate[{tag}]", lambda: calibrate(
            lp, cfg.sampler,
            derive_rng(cfg.seed, sid, variant.value, "mle"),
            derive_rng(cfg.seed, sid, variant.value, "warmup"),
            derive_rng(cfg.seed, sid, variant.value, "production"),
            seed=seed,
        ))
        if vr.calibration is None:
            continue
        chain = vr.chain
        if "select" in stages:
            def _bridge():
                density = fit_importance_density(chain)
                n = min(cfg.selection.bridge_samples, len(chain))
                return bridge_sampling_logml(chain, density, lp, n,
                                             derive_rng(cfg.seed, sid, variant.value, "importance"))
            vr.log_ml = _step(result, f"bridge[{tag}]", _bridge)
            vr.waic = _step(result, f"waic[{tag}]",
                            lambda: waic_for_posterior(lp, chain, cfg.selection.waic_draws))
        if "hindcast" in stages:
            vr.hindcast = _step(result, f"hindcast[{tag}]",
                                lambda: posterior_predictive_hindcast(chain, cfg, scenario, env))
            vr.prior_hindcast = _step(result, f"prior_hindcast[{tag}]",
                                      lambda: prior_predictive_hindcast(variant, cfg, scenario, env))

    none, spatial = result.variants.get("none"), result.variants.get("spatial")
    if none and spatial:
        if none.log_ml and spatial.log_ml:
            value, cat = log_bayes_factor(spatial.log_ml, none.log_ml, cfg.selection.ln_bf_thresholds)
            result.comparison["log_bf"] = value
            result.comparison["category"] = cat
        if none.waic and spatial.waic:
            dw, se = waic_difference(spatial.waic, none.waic)
            result.comparison["delta_waic"] = dw
            result.comparison["delta_waic_se"] = se
    log.info("scenario %s done (%s)", sid, result.status)
    return result


def _run_one(args):
    cfg, scenario, stages = args
    return run_scenario(cfg, scenario, stages)


def select_scenarios(cfg: ExperimentConfig, only=None) -> list[Scenario]:
    return filter_scenarios(scenario_grid(cfg), only)


def run_grid(cfg: ExperimentConfig, only=None, stages=STAGES, workers: int | None = None) -> list[ScenarioResult]:
    """Run every selected scenario; output order follows the grid, not completion."""
    scenarios = select_scenarios(cfg, only)
    if not scenarios:
        return []
    workers = workers if workers is not None else cfg.workers
    if workers <= 0:
        workers = os.cpu_count() or 1
    workers = min(workers, len(scenarios))
    if workers == 1:
        env = build_environment(cfg)
        return [run_scenario(cfg, s, stages, env) for s in scenarios]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, [(cfg, s, stages) for s in scenarios]))


def _finite(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


def result_record(result: ScenarioResult) -> dict:
    """JSON-ready summary of a scenario (no timings, so it is reproducible)."""
    sc = result.scenario
    variants = {}
    for tag, vr in result.variants.items():
        rec: dict = {"variant": vr.variant.value}
        if vr.calibration is not None:
            names = vr.variant.param_names
            diag = chain_diagnostics(vr.chain)
            rec["mle"] = {n: float(v) for n, v in zip(names, vr.calibration.mle.as_array())}
            rec["mle_loglik"] = _finite(vr.calibration.mle_loglik)
            rec["chain"] = {
                "file": f"chain_{tag}.csv",
                "length": len(vr.chain),
                "acceptance_rate": _finite(diag["acceptance_rate"]),
                "warmup_acceptance_rate": _finite(vr.calibration.warmup_accept),
                "mean": dict(zip(names, map(float, diag["mean"]))),
                "sd": dict(zip(names, map(float, diag["sd"]))),
                "q05": dict(zip(names, map(float, diag["q05"]))),
                "q50": dict(zip(names, map(float, diag["q50"]))),
                "q95": dict(zip(names, map(float, diag["q95"]))),
                "ess": dict(zip(names, map(float, diag["ess"]))),
            }
        if vr.log_ml is not None:
            rec["log_ml"] = _finite(vr.log_ml.log_ml)
            rec["log_ml_se"] = _finite(vr.log_ml.std_error)
            rec["bridge_iterations"] = vr.log_ml.iterations
            rec["bridge_converged"] = bool(vr.log_ml.converged)
        if vr.waic is not None:
            rec["waic"] = {"waic": _finite(vr.waic.waic), "lppd": _finite(vr.waic.lppd),
                           "p_waic": _finite(vr.waic.p_waic), "n_points": vr.waic.n}
        variants[tag] = rec
    comp = {k: (_finite(v) if not isinstance(v, str) else v) for k, v in result.comparison.items()}
    return {
        "scenario": {"id": sc.id, "years": sc.years, "parcels": sc.parcels, "mode": sc.mode,
                     "replicate": sc.replicate, "flagged": sc.flagged},
        "data_digest": result.digest,
        "status": result.status,
        "errors": result.errors,
        "variants": variants,
        "comparison": comp,
    }
