"""Compare the compiled and numpy kernel backends on representative workloads.

Run with ``python benchmarks/bench_kernels.py [--repeat N]``.
"""

from __future__ import annotations

import argparse
import importlib
import timeit

import numpy as np

from abmcalib import _fallback
from abmcalib.flood import DomainConfig, GevParams, generate_domain, simulate_flood_series
from abmcalib.likelihood import DataMode, LogPosterior, ObservationSet, PriorSpec
from abmcalib.model import DATA_GENERATING, ModelVariant, simulate_forward


def _backends():
    out = {"python": _fallback}
    try:
        out["cython"] = importlib.import_module("abmcalib._kernels")
    except ImportError:
        pass
    return out


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    domain = generate_domain(DomainConfig(), GevParams())
    floods = simulate_flood_series(GevParams(), 50, 50, np.random.default_rng(0))
    ptr, idx = domain.neighbor_csr()
    hits = domain.exceedances(floods)
    n, T, B = domain.n_parcels, 50, 200
    rng = np.random.default_rng(1)
    init = np.ones((B, n), dtype=np.uint8)
    u = rng.random((B, T, n))
    th = DATA_GENERATING

    states = simulate_forward(domain, th, floods, ModelVariant.SPATIAL_INTERACTIONS, T, np.random.default_rng(2))
    obs = ObservationSet.from_states(states, domain.parcel_ids, DataMode.INDIVIDUAL)
    lp_ind = LogPosterior(obs, floods, domain, PriorSpec(), ModelVariant.SPATIAL_INTERACTIONS)
    lp_agg = LogPosterior(obs.to_aggregate(), floods, domain, PriorSpec(), ModelVariant.SPATIAL_INTERACTIONS)
    R, V, vacant = lp_ind.R, lp_ind.V, lp_ind.vacant
    Rexo = lp_agg.R
    x = th.as_array()

    work = {
        f"simulate_batch ({B} runs x {T} y x {n} p)": lambda k: k.simulate_batch(
            hits, floods.n_spin_up, T, init, u, th.beta0, th.beta1, th.beta2, th.alpha, True, ptr, idx, True),
        "loglik_individual (50 y x 100 p)": lambda k: k.loglik_individual(
            x[0], x[1], x[2], x[3], R, V, vacant, 0.01),
        "marginal_meanfield (50 y x 100 p)": lambda k: k.marginal_meanfield(
            x[0], x[1], x[2], x[3], Rexo, ptr, idx, True, 0.01),
    }
    backends = _backends()
    print(f"{'workload':44s}" + "".join(f"{b:>14s}" for b in backends) + "     speedup")
    for name, fn in work.items():
        times = {}
        for b, mod in backends.items():
            number = 3 if b == "python" and name.startswith("simulate") else 50
            times[b] = min(timeit.repeat(lambda: fn(mod), number=number, repeat=args.repeat)) / number
        row = f"{name:44s}" + "".join(f"{times[b] * 1e3:12.3f}ms" for b in backends)
        if "cython" in times:
            row += f"  {times['python'] / times['cython']:9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
