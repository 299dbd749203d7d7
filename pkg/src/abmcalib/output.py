"""Persistence of scenario results: CSV, JSON and SVG artifacts."""

from __future__ import annotations

import csv
import json
import logging
import os
import tempfile
from pathlib import Path

import numpy as np
from scipy import stats

from .config import ExperimentConfig, config_to_dict
from .experiments import Environment, ScenarioResult, build_environment, result_record
from .flood import write_domain_csv, write_floods_csv
from .mcmc import PosteriorChain
from .svg import PALETTE, Chart

log = logging.getLogger(__name__)

SUMMARY_FIELDS = (
    "scenario", "years", "parcels", "mode", "replicate", "flagged", "status", "data_digest",
    "log_ml_none", "log_ml_se_none", "log_ml_spatial", "log_ml_se_spatial",
    "log_bf", "category", "waic_none", "waic_spatial", "delta_waic", "delta_waic_se",
)


class OutputError(OSError):
    pass


def ensure_writable(out_dir) -> Path:
    """Create ``out_dir`` and prove it accepts files; raise ``OutputError`` otherwise."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        fd, probe = tempfile.mkstemp(dir=out, prefix=".probe")
        os.close(fd)
        os.unlink(probe)
    except OSError as exc:
        raise OutputError(f"output directory {out} is not writable: {exc}") from None
    return out


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "" if not np.isfinite(v) else repr(v)
    return str(v)


def summary_rows(results) -> list[dict]:
    rows = []
    for r in results:
        rec = result_record(r)
        sc, comp, var = rec["scenario"], rec["comparison"], rec["variants"]
        row = {
            "scenario": sc["id"], "years": sc["years"], "parcels": sc["parcels"], "mode": sc["mode"],
            "replicate": sc["replicate"], "flagged": sc["flagged"], "status": rec["status"],
            "data_digest": rec["data_digest"],
            "log_bf": comp.get("log_bf"), "category": comp.get("category"),
            "delta_waic": comp.get("delta_waic"), "delta_waic_se": comp.get("delta_waic_se"),
        }
        for tag in ("none", "spatial"):
            v = var.get(tag, {})
            row[f"log_ml_{tag}"] = v.get("log_ml")
            row[f"log_ml_se_{tag}"] = v.get("log_ml_se")
            row[f"waic_{tag}"] = (v.get("waic") or {}).get("waic")
        rows.append(row)
    return rows


def write_summary(results, path) -> None:
    """Cross-scenario table; contains no timings so re-runs are byte-identical."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        for row in summary_rows(results):
            w.writerow([_fmt(row[k]) for k in SUMMARY_FIELDS])


def write_hindcast_csv(posterior: dict | None, prior: dict | None, path) -> None:
    keys = [k for k in (posterior or prior) if k != "year"]
    years = (posterior or prior)["year"]
    header = ["year"]
    cols = []
    for label, band in (("posterior", posterior), ("prior", prior)):
        if band is None:
            continue
        for k in keys:
            header.append(f"{label}_{k}")
            cols.append(band[k])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, y in enumerate(years):
            w.writerow([int(y)] + [repr(float(c[i])) for c in cols])


def density_curves(chain: PosteriorChain, cfg: ExperimentConfig, n_grid: int = 200) -> dict:
    """Per-parameter prior pdf and posterior KDE on a grid spanning both 0.1-99.9% ranges."""
    variant = chain.variant
    lo_p = cfg.prior.ppf(0.001, variant).ravel()
    hi_p = cfg.prior.ppf(0.999, variant).ravel()
    out = {}
    normals = cfg.prior.normals(variant)
    for j, name in enumerate(chain.names):
        x = chain.samples[:, j]
        lo = min(lo_p[j], np.quantile(x, 0.001))
        hi = max(hi_p[j], np.quantile(x, 0.999))
        grid = np.linspace(lo, hi, n_grid)
        if j < len(normals):
            prior_pdf = stats.norm.pdf(grid, *normals[j])
        else:
            prior_pdf = stats.beta.pdf(grid, *cfg.prior.alpha)
        if np.ptp(x) > 0:
            sub = x[chain.thinned(min(len(x), 5000))]
            post_pdf = stats.gaussian_kde(sub)(grid)
        else:
            post_pdf = np.zeros_like(grid)
        out[name] = (grid, prior_pdf, post_pdf)
    return out


def _true_values(cfg: ExperimentConfig, variant) -> dict:
    dg = cfg.data_generating
    vals = {"beta0": dg.beta0, "beta1": dg.beta1, "alpha": dg.alpha}
    if dg.beta2 is not None:
        vals["beta2"] = dg.beta2
    return vals


def plot_posteriors(chain: PosteriorChain, cfg: ExperimentConfig, plot_dir: Path, tag: str) -> list[Path]:
    curves = density_curves(chain, cfg)
    truth = _true_values(cfg, chain.variant)
    paths = []
    with open(plot_dir / f"posterior_{tag}.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parameter", "x", "prior_pdf", "posterior_pdf"])
        for name, (grid, pr, po) in curves.items():
            for a, b, c in zip(grid, pr, po):
                w.writerow([name, repr(float(a)), repr(float(b)), repr(float(c))])
    paths.append(plot_dir / f"posterior_{tag}.csv")
    for name, (grid, pr, po) in curves.items():
        ch = Chart(title=f"{name} ({tag})", xlabel=name, ylabel="density",
                   xlim=(float(grid[0]), float(grid[-1])))
        ch.line(grid, pr, color=PALETTE[5], label="prior")
        ch.line(grid, po, color=PALETTE[0], label="posterior")
        if name in truth:
            ch.vline(truth[name], label="true value")
        p = plot_dir / f"posterior_{tag}_{name}.svg"
        ch.save(p)
        paths.append(p)
    return paths


def plot_hindcast(posterior: dict | None, prior: dict | None, observed: np.ndarray,
                  plot_dir: Path, tag: str) -> Path:
    ch = Chart(title=f"hindcast ({tag})", xlabel="year", ylabel="vacant parcels")
    for band, color, label in ((prior, PALETTE[5], "prior 5-95%"), (posterior, PALETTE[0], "posterior 5-95%")):
        if band is None:
            continue
        ch.band(band["year"], band["q5"], band["q95"], color=color, opacity=0.2, label=label)
        ch.band(band["year"], band["q25"], band["q75"], color=color, opacity=0.35)
        ch.line(band["year"], band["q50"], color=color, width=1.2)
    ch.line(np.arange(len(observed)), observed, color="#000000", width=2, label="observed")
    p = plot_dir / f"hindcast_{tag}.svg"
    ch.save(p)
    return p


def plot_log_bayes_factors(results, cfg: ExperimentConfig, path: Path) -> Path:
    labels, values = [], []
    for r in results:
        labels.append(r.id.replace("_individual", " ind").replace("_aggregate", " agg"))
        values.append(r.comparison.get("log_bf", np.nan))
    ch = Chart(title="ln Bayes factor, spatial vs none", ylabel="ln BF",
               width=max(480, 40 * len(labels) + 80))
    ch.bars(labels, values)
    for t, name in zip(cfg.selection.ln_bf_thresholds, ("positive", "strong", "very strong")):
        ch.hline(t, label=name)
    ch.hline(0.0, color="#000000", dash="1,0")
    ch.save(path)
    with open(path.with_suffix(".csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "log_bf"])
        for r, v in zip(results, values):
            w.writerow([r.id, _fmt(float(v))])
    return path


def _observed_vacant(result: ScenarioResult) -> np.ndarray:
    obs = result.observations
    if obs.individual is not None:
        return (1 - np.asarray(obs.individual)).sum(axis=1)
    return np.asarray(obs.counts, dtype=float)


def write_scenario(result: ScenarioResult, cfg: ExperimentConfig, out_dir: Path) -> list[Path]:
    sdir = out_dir / result.id
    plots = sdir / "plots"
    plots.mkdir(parents=True, exist_ok=True)
    written = []
    result.observations.write_csv(sdir / "data.csv")
    written.append(sdir / "data.csv")
    for tag, vr in result.variants.items():
        if vr.chain is not None:
            vr.chain.write_csv(sdir / f"chain_{tag}.csv")
            vr.chain.write_sidecar(sdir / f"chain_{tag}.json", cfg.sampler)
            written += [sdir / f"chain_{tag}.csv", sdir / f"chain_{tag}.json"]
            written += plot_posteriors(vr.chain, cfg, plots, tag)
        if vr.hindcast is not None or vr.prior_hindcast is not None:
            write_hindcast_csv(vr.hindcast, vr.prior_hindcast, sdir / f"hindcast_{tag}.csv")
            written.append(sdir / f"hindcast_{tag}.csv")
            written.append(plot_hindcast(vr.hindcast, vr.prior_hindcast, _observed_vacant(result), plots, tag))
    with open(sdir / "result.json", "w") as fh:
        json.dump(result_record(result), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    written.append(sdir / "result.json")
    return written


def emit_outputs(results, out_dir, cfg: ExperimentConfig, env: Environment | None = None) -> list[Path]:
    """Write every artifact for ``results`` under ``out_dir``; returns the written paths."""
    results = list(results)
    if not results:
        log.warning("no scenarios selected; nothing written")
        return []
    out = ensure_writable(out_dir)
    env = env or build_environment(cfg)
    written = []
    for r in results:
        written += write_scenario(r, cfg, out)
    write_domain_csv(env.domain, out / "domain.csv")
    write_floods_csv(env.floods, out / "floods.csv")
    with open(out / "config.json", "w") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_summary(results, out / "summary.csv")
    written += [out / "domain.csv", out / "floods.csv", out / "config.json", out / "summary.csv"]
    if any("log_bf" in r.comparison for r in results):
        (out / "plots").mkdir(exist_ok=True)
        written.append(plot_log_bayes_factors(results, cfg, out / "plots" / "log_bayes_factors.svg"))
    return written
