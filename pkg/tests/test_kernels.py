import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from abmcalib import _fallback, kernels
from abmcalib.model import exogenous_flood_rates

backends = kernels.available_backends()
needs_ext = pytest.mark.skipif("cython" not in backends, reason="compiled kernels not built")

theta = st.tuples(st.floats(-10, 0), st.floats(0, 30), st.floats(0, 8), st.floats(0, 1))


@needs_ext
@settings(max_examples=25, deadline=None)
@given(th=theta, use_v=st.booleans(), resets=st.booleans(), seed=st.integers(0, 2**16))
def test_simulate_batch_backends_identical(domain, floods, th, use_v, resets, seed):
    rng = np.random.default_rng(seed)
    sub = domain.restrict(50)
    ptr, idx = sub.neighbor_csr()
    hits = sub.exceedances(floods)
    init = (rng.random((4, 50)) < 0.9).astype(np.uint8)
    u = rng.random((4, 30, 50))
    args = (hits, floods.n_spin_up, 30, init, u, *th, use_v, ptr, idx, resets)
    a = backends["cython"].simulate_batch(*args)
    b = _fallback.simulate_batch(*args)
    np.testing.assert_array_equal(a, b)


@needs_ext
@settings(max_examples=25, deadline=None)
@given(th=theta, use_v=st.booleans())
def test_marginal_kernels_backends_agree(domain, floods, individual_obs, th, use_v):
    from abmcalib.model import observed_covariates

    R, V = observed_covariates(individual_obs.individual, domain, floods)
    vacant = (~individual_obs.individual).astype(np.uint8)
    cy, py = backends["cython"], _fallback
    np.testing.assert_allclose(cy.marginal_fixed(*th, R, V, 0.01), py.marginal_fixed(*th, R, V, 0.01),
                               rtol=1e-12, atol=1e-300)
    la, lb = cy.loglik_individual(*th, R, V, vacant, 0.01), py.loglik_individual(*th, R, V, vacant, 0.01)
    if np.isfinite(lb):
        assert la == pytest.approx(lb, rel=1e-10)
    else:
        assert la == lb
    Rx = exogenous_flood_rates(domain, floods, 50)
    ptr, idx = domain.neighbor_csr()
    np.testing.assert_allclose(cy.marginal_meanfield(*th, Rx, ptr, idx, use_v, 0.01),
                               py.marginal_meanfield(*th, Rx, ptr, idx, use_v, 0.01), rtol=1e-12, atol=1e-300)


def test_expit_stable():
    y = np.array([-1000.0, -50.0, 0.0, 50.0, 1000.0])
    out = _fallback.expit(y)
    assert np.all(np.isfinite(out))
    assert out[2] == 0.5 and out[0] == 0.0 and out[-1] == 1.0


def test_isolated_parcel_has_zero_vacancy():
    ptr = np.array([0, 0, 1, 2], dtype=np.int64)
    idx = np.array([2, 1], dtype=np.int64)
    A, deg = _fallback._adjacency(ptr, idx)
    assert deg[0] == 1 and A[0].sum() == 0


def test_backend_env_switch():
    code = "from abmcalib import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, ABMCALIB_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
