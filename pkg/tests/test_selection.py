import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from abmcalib.likelihood import LogPosterior, PriorSpec
from abmcalib.mcmc import PosteriorChain, SamplerConfig, calibrate
from abmcalib.model import ModelVariant
from abmcalib.selection import (
    ImportanceDensity,
    MarginalLikelihoodEstimate,
    WaicAccumulator,
    bridge_sampling_logml,
    evidence_category,
    fit_importance_density,
    log_bayes_factor,
    waic,
    waic_difference,
    waic_for_posterior,
)

Y = 0.5
ANALYTIC_LOGML = -0.5 * math.log(4 * math.pi) - 0.0625


def toy_logpost(x):
    t = float(np.asarray(x).ravel()[0])
    return stats.norm.logpdf(t, 0, 1) + stats.norm.logpdf(Y, t, 1)


def toy_chain(n, seed):
    draws = np.random.default_rng(seed).normal(0.25, math.sqrt(0.5), size=(n, 1))
    return PosteriorChain(draws, np.zeros(n), np.ones(n, bool), np.eye(1))


def test_importance_density_logpdf_matches_scipy():
    mean, cov = np.array([0.1, -0.3]), np.array([[1.0, 0.3], [0.3, 2.0]])
    dens = ImportanceDensity(mean, cov)
    x = np.random.default_rng(0).standard_normal((5, 2))
    np.testing.assert_allclose(dens.logpdf(x), stats.multivariate_normal.logpdf(x, mean, cov), rtol=1e-12)


def test_fit_degenerate_chain():
    s = np.tile([-6.0, 20.0, 4.0, 0.01], (2000, 1))
    dens = fit_importance_density(s)
    assert dens.normalization_correction == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.diag(dens.covariance) < 1e-6)


def test_fit_iid_normal_inside_box():
    rng = np.random.default_rng(1)
    mean = np.array([-6.0, 20.0, 0.3])
    cov = np.diag([0.04, 1.0, 0.0025])
    s = rng.multivariate_normal(mean, cov, size=20_000)
    dens = fit_importance_density(s)
    assert np.all(np.abs(dens.mean - mean) < 4 * np.sqrt(np.diag(cov) / 20_000))
    np.testing.assert_allclose(np.diag(dens.covariance), np.diag(cov), rtol=0.05)
    assert dens.normalization_correction == 0.0


def test_truncation_correction_half_mass():
    rng = np.random.default_rng(2)
    s = np.column_stack([rng.normal(0, 1, 50_000), rng.normal(0.0, 0.5, 50_000)])
    dens = fit_importance_density(s)
    sd = math.sqrt(dens.covariance[1, 1])
    expected = math.log(stats.norm.cdf(1, dens.mean[1], sd) - stats.norm.cdf(0, dens.mean[1], sd))
    assert dens.normalization_correction == pytest.approx(expected, rel=1e-12)
    # half the mass below 0, and a sliver above 1 at two sd
    assert dens.normalization_correction == pytest.approx(math.log(stats.norm.cdf(2) - 0.5), abs=0.01)
    draws = dens.sample(1000, rng)
    assert np.all((draws[:, 1] >= 0) & (draws[:, 1] <= 1))


def test_truncated_density_integrates_to_one():
    dens = ImportanceDensity(np.array([0.2]), np.array([[0.09]]), (0, 0.0, 1.0),
                             math.log(stats.norm.cdf(1, 0.2, 0.3) - stats.norm.cdf(0, 0.2, 0.3)))
    grid = np.linspace(-0.5, 1.5, 200_001)
    mass = np.trapezoid(np.exp(dens.logpdf(grid[:, None])), grid)
    assert mass == pytest.approx(1.0, abs=1e-4)


def test_fit_needs_enough_draws():
    with pytest.raises(ValueError):
        fit_importance_density(np.zeros((10, 2)))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_bridge_conjugate_toy(seed):
    chain = toy_chain(20_000, seed)
    dens = fit_importance_density(chain, truncation=None)
    est = bridge_sampling_logml(chain, dens, toy_logpost, 5000, np.random.default_rng(100 + seed))
    assert est.converged
    assert abs(est.log_ml - ANALYTIC_LOGML) < 3 * est.std_error
    assert est.std_error < 1e-3


def test_bridge_exact_posterior_converges_fast():
    chain = toy_chain(10_000, 3)
    exact = ImportanceDensity(np.array([0.25]), np.array([[0.5]]))
    est = bridge_sampling_logml(chain, exact, toy_logpost, 5000, np.random.default_rng(4))
    assert est.iterations <= 5
    assert est.log_ml == pytest.approx(ANALYTIC_LOGML, abs=1e-10)


def test_bridge_rejects_oversized_request():
    chain = toy_chain(1000, 0)
    with pytest.raises(ValueError):
        bridge_sampling_logml(chain, fit_importance_density(chain, None), toy_logpost, 2000, 0)


def test_evidence_categories():
    a = MarginalLikelihoodEstimate(-100.0, 1e-4, 3, True)
    assert log_bayes_factor(a, a) == (0.0, "weak/none")
    assert evidence_category(3.5) == "strong"
    assert evidence_category(2.0) == "positive"
    assert evidence_category(7.0) == "very strong"
    assert evidence_category(-6.0) == "very strong for model b"
    b = MarginalLikelihoodEstimate(-90.0, 1e-4, 1000, False)
    assert log_bayes_factor(b, a)[1] == "indeterminate"


@settings(max_examples=100, deadline=None)
@given(x=st.floats(-50, 50))
def test_evidence_category_symmetric(x):
    pos, neg = evidence_category(abs(x)), evidence_category(-abs(x))
    assert neg.replace(" for model b", "") == pos


def test_waic_identical_rows():
    row = np.array([-0.3, -1.2, -2.0])
    res = waic(np.vstack([row, row]))
    assert res.p_waic == 0.0
    assert res.waic == pytest.approx(-2 * row.sum())


def test_waic_single_datum():
    res = waic(np.log([[0.5], [0.5]]))
    assert res.waic == pytest.approx(-2 * math.log(0.5))


def test_waic_rejects_nonfinite():
    with pytest.raises(ValueError):
        waic(np.array([[0.0, -np.inf], [0.0, -1.0]]))


def test_waic_streaming_matches_batch():
    table = np.random.default_rng(5).normal(-3, 0.7, size=(3000, 40))
    acc = WaicAccumulator()
    for k in range(0, 3000, 257):
        acc.update(table[k:k + 257])
    a, b = acc.result(), waic(table)
    assert a.waic == pytest.approx(b.waic, rel=1e-12)
    np.testing.assert_allclose(a.pointwise["p_waic"], b.pointwise["p_waic"], rtol=1e-10)


def test_waic_normal_toy_analytic():
    # y_i ~ N(theta, 1) with a flat-ish prior; the posterior is normal so WAIC has a closed form
    rng = np.random.default_rng(6)
    y = rng.normal(0.3, 1.0, 20)
    tau2 = 100.0
    vn = 1 / (1 / tau2 + len(y))
    mn = vn * y.sum()
    d = y - mn
    lppd = stats.norm.logpdf(y, mn, math.sqrt(1 + vn)).sum()
    p = (d**2 * vn + vn**2 / 2).sum()
    expected = -2 * (lppd - p)
    reps = []
    for k in range(20):
        th = np.random.default_rng(100 + k).normal(mn, math.sqrt(vn), 20_000)
        reps.append(waic(stats.norm.logpdf(y[None, :], th[:, None], 1.0)).waic)
    se = np.std(reps, ddof=1)
    assert abs(reps[0] - expected) < 3 * se + 1e-9
    assert abs(np.mean(reps) - expected) < 3 * se / math.sqrt(20) + 1e-3


def test_waic_difference_examples():
    t = np.random.default_rng(7).normal(-1, 0.3, size=(200, 10))
    a = waic(t)
    assert waic_difference(a, a) == (0.0, 0.0)
    t2 = t.copy()
    t2[:, 3] -= 0.5
    b = waic(t2)
    delta, se = waic_difference(b, a)
    diff = b.pointwise["waic"] - a.pointwise["waic"]
    d = diff[3]
    # one nonzero entry among N: sample variance is d^2 / N
    assert se == pytest.approx(math.sqrt(10 * d**2 / 10), rel=1e-10)
    assert se == pytest.approx(math.sqrt(10 * np.var(diff, ddof=1)), rel=1e-12)
    assert delta == pytest.approx(diff.sum())
    with pytest.raises(ValueError):
        waic_difference(a, waic(t[:, :5]))


def test_bridge_and_waic_on_model(domain, floods, aggregate_obs):
    obs = aggregate_obs.truncate(10)
    lp = LogPosterior(obs, floods, domain, PriorSpec(), ModelVariant.NO_INTERACTIONS)
    cfg = SamplerConfig(warmup_iters=2000, production_iters=6000, mle_starts=2)
    res = calibrate(lp, cfg, *(np.random.default_rng(k) for k in range(3)))
    est = bridge_sampling_logml(res.chain, fit_importance_density(res.chain), lp, 3000, np.random.default_rng(9))
    assert est.converged and math.isfinite(est.log_ml) and est.std_error < 0.05
    w = waic_for_posterior(lp, res.chain, 1000, chunk=300)
    assert w.n == 10 and math.isfinite(w.waic)
    idx = res.chain.thinned(1000)
    table = np.stack([lp.pointwise(res.chain.samples[i]) for i in idx])
    assert w.waic == pytest.approx(waic(table).waic, rel=1e-10)
