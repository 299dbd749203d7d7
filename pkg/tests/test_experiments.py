import json
import os
import xml.etree.ElementTree as ET
from dataclasses import replace
from importlib import resources

import jsonschema
import numpy as np
import pytest

from abmcalib import cli, experiments
from abmcalib.config import (
    ConfigError,
    ExperimentConfig,
    GridConfig,
    HindcastConfig,
    Scenario,
    SelectionConfig,
    config_from_dict,
    load_config,
    override,
    parse_only,
    scenario_grid,
)
from abmcalib.experiments import (
    build_environment,
    generate_pseudo_observations,
    posterior_predictive_hindcast,
    prior_predictive_hindcast,
    run_grid,
    run_scenario,
    select_scenarios,
)
from abmcalib.mcmc import PosteriorChain, SamplerConfig
from abmcalib.model import DATA_GENERATING, ModelVariant, simulate_ensemble
from abmcalib.output import OutputError, density_curves, emit_outputs, ensure_writable
from abmcalib.rng import derive_rng, stream_entropy

SMOKE = ExperimentConfig(
    seed=7,
    sampler=SamplerConfig(warmup_iters=2000, production_iters=10_000, mle_starts=2),
    selection=SelectionConfig(bridge_samples=2000, waic_draws=1000),
    hindcast=HindcastConfig(draws=50, prior_draws=50),
    workers=1,
)


def schema():
    text = resources.files("abmcalib").joinpath("schema/result.schema.json").read_text()
    return json.loads(text)


@pytest.fixture(scope="module")
def env():
    return build_environment(SMOKE)


@pytest.fixture(scope="module")
def smoke_result(env):
    return run_scenario(SMOKE, Scenario(10, 25, "individual"), env=env)


def test_rng_streams_distinct_and_stable():
    a = derive_rng(1, "x", 2).random(5)
    np.testing.assert_array_equal(a, derive_rng(1, "x", 2).random(5))
    assert not np.array_equal(a, derive_rng(1, "x", 3).random(5))
    assert stream_entropy(1, "a") != stream_entropy(2, "a")
    assert stream_entropy(1, "ab", "c") != stream_entropy(1, "a", "bc")


def test_config_requires_seed():
    with pytest.raises(ConfigError):
        ExperimentConfig().validate()


def test_config_grid_guard():
    cfg = ExperimentConfig(seed=1, grid=GridConfig(years=(20,)))
    with pytest.raises(ConfigError):
        cfg.validate()
    replace(cfg, custom=True).validate()


def test_config_unknown_keys(tmp_path):
    with pytest.raises(ConfigError):
        config_from_dict({"seed": 1, "bogus": 2})
    with pytest.raises(ConfigError):
        config_from_dict({"seed": 1, "sampler": {"warmup": 3}})
    bad = tmp_path / "bad.yaml"
    bad.write_text("seed: [1,\n")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


def test_config_file_and_override(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("seed: 3\nsampler:\n  warmup_iters: 100\n  production_iters: 200\n"
                 "prior:\n  beta1: [18.0, 3.0]\ndata_generating: {beta0: -6, beta1: 20, beta2: 4, alpha: 0.01}\n")
    cfg = load_config(p).validate()
    assert cfg.sampler.warmup_iters == 100 and cfg.prior.beta1 == (18.0, 3.0)
    assert cfg.data_generating == DATA_GENERATING
    cfg2 = override(cfg, seed=9, burnin=50, out=None)
    assert cfg2.seed == 9 and cfg2.sampler.burnin == 50 and cfg2.out == cfg.out


def test_default_grid_has_18_scenarios():
    cfg = ExperimentConfig(seed=1)
    assert len(scenario_grid(cfg)) == 18
    assert len(set(s.id for s in scenario_grid(cfg))) == 18
    assert len(select_scenarios(cfg, parse_only("50x100:individual"))) == 1
    assert len(select_scenarios(cfg, parse_only("50x100"))) == 2
    assert select_scenarios(cfg, parse_only("20x100")) == []
    assert len(scenario_grid(replace(cfg, replicates=3))) == 54
    with pytest.raises(ConfigError):
        parse_only("fifty")


def test_scenario_ids_and_flags():
    assert Scenario(50, 100, "individual").id == "50x100_individual"
    assert Scenario(50, 100, "aggregate", 2).id == "50x100_aggregate_r2"
    assert Scenario(10, 25, "aggregate").flagged and not Scenario(10, 50, "aggregate").flagged


def test_pseudo_observations_consistent(env):
    ind, agg = generate_pseudo_observations(SMOKE, Scenario(50, 100, "individual"), env)
    np.testing.assert_array_equal(agg.counts, (1 - ind.individual.astype(int)).sum(axis=1))
    ind2, _ = generate_pseudo_observations(SMOKE, Scenario(50, 100, "aggregate"), env)
    assert experiments.data_digest(ind) == experiments.data_digest(ind2)
    short, _ = generate_pseudo_observations(SMOKE, Scenario(10, 100, "individual"), env)
    np.testing.assert_array_equal(short.individual, ind.individual[:11])
    other = replace(SMOKE, seed=8)
    ind3, _ = generate_pseudo_observations(other, Scenario(50, 100, "individual"))
    assert experiments.data_digest(ind3) != experiments.data_digest(ind)


def test_pseudo_data_within_ensemble_band(env):
    ind, agg = generate_pseudo_observations(SMOKE, Scenario(50, 100, "individual"), env)
    runs = simulate_ensemble(env.domain, DATA_GENERATING, env.floods, ModelVariant.SPATIAL_INTERACTIONS,
                             50, 1000, np.random.default_rng(0))
    final = (1 - runs[:, -1]).sum(axis=1)
    lo, hi = np.percentile(final, [1, 99])
    assert lo <= agg.counts[-1] <= hi


def test_smoke_scenario_end_to_end(smoke_result):
    r = smoke_result
    assert r.status == "ok", r.errors
    assert set(r.variants) == {"none", "spatial"}
    assert {"log_bf", "category", "delta_waic", "delta_waic_se"} <= set(r.comparison)
    rec = experiments.result_record(r)
    jsonschema.validate(rec, schema())
    json.dumps(rec, allow_nan=False)
    assert "timings" not in rec


def test_scenario_rerun_identical(env, smoke_result):
    again = run_scenario(SMOKE, Scenario(10, 25, "individual"), env=env)
    assert again.digest == smoke_result.digest
    np.testing.assert_array_equal(again.variants["spatial"].chain.samples,
                                  smoke_result.variants["spatial"].chain.samples)
    assert experiments.result_record(again) == experiments.result_record(smoke_result)


def test_step_failure_recorded(env, monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("synthetic failure")

    monkeypatch.setattr(experiments, "bridge_sampling_logml", boom)
    r = run_scenario(SMOKE, Scenario(10, 25, "aggregate"), env=env)
    assert r.status == "partial"
    assert {e["step"] for e in r.errors} == {"bridge[none]", "bridge[spatial]"}
    assert "log_bf" not in r.comparison and "delta_waic" in r.comparison
    jsonschema.validate(experiments.result_record(r), schema())


def test_hindcast_degenerate_chain(env):
    sc = Scenario(25, 50, "individual")
    x = DATA_GENERATING.as_array()
    n = 40
    chain = PosteriorChain(np.tile(x, (n, 1)), np.zeros(n), np.zeros(n, bool), np.eye(4),
                           variant=ModelVariant.SPATIAL_INTERACTIONS)
    cfg = replace(SMOKE, hindcast=HindcastConfig(draws=n))
    hc = posterior_predictive_hindcast(chain, cfg, sc, env, np.random.default_rng(3))
    # one draw per simulation, so the result equals the fixed-parameter ensemble with the same stream
    rng = np.random.default_rng(3)
    sub = env.domain.restrict(50)
    floods = env.floods.truncate(25)
    counts = np.stack([(1 - simulate_ensemble(sub, DATA_GENERATING, floods, ModelVariant.SPATIAL_INTERACTIONS,
                                              25, 1, rng)[0]).sum(axis=1) for _ in range(n)])
    for q in (5, 25, 50, 75, 95):
        np.testing.assert_allclose(hc[f"q{q}"], np.percentile(counts, q, axis=0))


@pytest.fixture(scope="module")
def calibrated_50x100(env):
    cfg = replace(SMOKE, sampler=SamplerConfig(warmup_iters=5000, production_iters=20_000, mle_starts=3),
                  hindcast=HindcastConfig(draws=300, prior_draws=300), variants=("spatial",))
    return cfg, run_scenario(cfg, Scenario(50, 100, "individual"), stages=("data", "calibrate", "hindcast"), env=env)


def test_prior_band_wider_than_posterior(calibrated_50x100):
    _, r = calibrated_50x100
    vr = r.variants["spatial"]
    post = np.sum(vr.hindcast["q95"] - vr.hindcast["q5"])
    prior = np.sum(vr.prior_hindcast["q95"] - vr.prior_hindcast["q5"])
    assert prior >= post


def test_posterior_band_covers_observations(calibrated_50x100):
    _, r = calibrated_50x100
    hc = r.variants["spatial"].hindcast
    obs = (~r.observations.individual).sum(axis=1)
    inside = (obs[1:] >= hc["q5"][1:]) & (obs[1:] <= hc["q95"][1:])
    assert inside.mean() >= 0.8


def test_density_curves_cover_quantiles(calibrated_50x100):
    cfg, r = calibrated_50x100
    chain = r.variants["spatial"].chain
    curves = density_curves(chain, cfg)
    prior_lo = cfg.prior.ppf(0.001, chain.variant).ravel()
    prior_hi = cfg.prior.ppf(0.999, chain.variant).ravel()
    for j, name in enumerate(chain.names):
        grid = curves[name][0]
        x = chain.samples[:, j]
        assert grid[0] <= min(prior_lo[j], np.quantile(x, 0.001))
        assert grid[-1] >= max(prior_hi[j], np.quantile(x, 0.999))


def test_emit_outputs_layout(tmp_path, smoke_result, env):
    paths = emit_outputs([smoke_result], tmp_path, SMOKE, env)
    sdir = tmp_path / smoke_result.id
    for name in ("data.csv", "chain_none.csv", "chain_spatial.csv", "chain_none.json", "result.json",
                 "hindcast_none.csv", "hindcast_spatial.csv"):
        assert (sdir / name).is_file(), name
    assert (tmp_path / "summary.csv").is_file()
    svgs = list(tmp_path.rglob("*.svg"))
    assert len(svgs) >= 9
    for f in svgs:
        ET.parse(f)
    jsonschema.validate(json.loads((sdir / "result.json").read_text()), schema())
    assert all(p.exists() for p in paths)
    head = (sdir / "hindcast_spatial.csv").read_text().splitlines()[0]
    assert head.startswith("year,posterior_q5,posterior_q25")


def test_emit_outputs_empty(tmp_path, caplog):
    out = tmp_path / "none"
    assert emit_outputs([], out, SMOKE) == []
    assert not out.exists()
    assert "no scenarios" in caplog.text


@pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory permissions")
def test_unwritable_directory(tmp_path):
    d = tmp_path / "ro"
    d.mkdir()
    d.chmod(0o500)
    with pytest.raises(OutputError):
        ensure_writable(d)


def test_unwritable_path_is_error(tmp_path, smoke_result, env):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OutputError):
        emit_outputs([smoke_result], blocker / "sub", SMOKE, env)
    # the results are untouched and can be written elsewhere
    assert emit_outputs([smoke_result], tmp_path / "ok", SMOKE, env)


def test_grid_summary_deterministic(tmp_path):
    cfg = replace(SMOKE, sampler=SamplerConfig(warmup_iters=500, production_iters=2000, mle_starts=1),
                  selection=SelectionConfig(bridge_samples=1000, waic_draws=200),
                  hindcast=HindcastConfig(draws=10, prior_draws=10))
    rules = parse_only("10x25,10x50:aggregate")
    a = run_grid(cfg, rules, workers=1)
    b = run_grid(cfg, rules, workers=2)
    assert [r.id for r in a] == ["10x25_individual", "10x25_aggregate", "10x50_aggregate"]
    emit_outputs(a, tmp_path / "a", cfg)
    emit_outputs(b, tmp_path / "b", cfg)
    assert (tmp_path / "a/summary.csv").read_bytes() == (tmp_path / "b/summary.csv").read_bytes()
    assert (tmp_path / "a/10x25_individual/result.json").read_bytes() == \
        (tmp_path / "b/10x25_individual/result.json").read_bytes()


def write_cfg(tmp_path, text):
    p = tmp_path / "cfg.yaml"
    p.write_text(text)
    return str(p)


SMOKE_YAML = """seed: 5
sampler: {warmup_iters: 500, production_iters: 2000, mle_starts: 1}
selection: {bridge_samples: 1000, waic_draws: 200}
hindcast: {draws: 10, prior_draws: 10}
workers: 1
"""


def test_cli_generate(tmp_path, capsys):
    code = cli.main(["generate", "--config", write_cfg(tmp_path, SMOKE_YAML), "--out", str(tmp_path / "o"),
                     "--only", "10x25:individual"])
    assert code == 0
    assert (tmp_path / "o/10x25_individual/data.csv").is_file()
    assert not (tmp_path / "o/10x25_individual/chain_none.csv").exists()


def test_cli_grid_success(tmp_path, capsys):
    code = cli.main(["grid", "--config", write_cfg(tmp_path, SMOKE_YAML), "--out", str(tmp_path / "o"),
                     "--only", "10x25:aggregate", "--seed", "11"])
    assert code == 0
    out = capsys.readouterr().out
    assert "10x25_aggregate: ok" in out and "lnBF=" in out
    assert json.loads((tmp_path / "o/config.json").read_text())["seed"] == 11


def test_cli_config_errors(tmp_path, capsys):
    assert cli.main(["grid", "--config", write_cfg(tmp_path, "out: x\n")]) == 1
    assert "seed" in capsys.readouterr().err
    assert cli.main(["grid", "--config", str(tmp_path / "missing.yaml"), "--seed", "1"]) == 1
    assert cli.main(["grid", "--config", write_cfg(tmp_path, SMOKE_YAML), "--only", "junk"]) == 1
    bad_grid = SMOKE_YAML + "grid: {years: [20]}\n"
    assert cli.main(["grid", "--config", write_cfg(tmp_path, bad_grid)]) == 1


def test_cli_empty_filter(tmp_path, capsys):
    code = cli.main(["grid", "--config", write_cfg(tmp_path, SMOKE_YAML), "--out", str(tmp_path / "o"),
                     "--only", "20x100"])
    assert code == 0
    assert "no scenarios" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_cli_partial_failure(tmp_path, monkeypatch, capsys):
    def boom(*a, **k):
        raise RuntimeError("synthetic failure")

    monkeypatch.setattr(experiments, "waic_for_posterior", boom)
    code = cli.main(["select", "--config", write_cfg(tmp_path, SMOKE_YAML), "--out", str(tmp_path / "o"),
                     "--only", "10x25:aggregate"])
    assert code == 2
    assert "partial" in (tmp_path / "o/summary.csv").read_text()
