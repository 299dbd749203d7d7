"""Pure numpy implementations of the hot kernels.

Same signatures and semantics as the compiled ``_kernels`` module; used when
the extension is not built or ``ABMCALIB_BACKEND=python`` is set.
"""

from __future__ import annotations

import numpy as np

MIN_WINDOW = 10


def expit(y):
    y = np.asarray(y, dtype=float)
    out = np.empty_like(y)
    pos = y >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-y[pos]))
    e = np.exp(y[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _adjacency(nbr_ptr, nbr_idx):
    """Dense 0/1 adjacency (n, n) and degrees clipped to >= 1 (isolated parcels get v = 0)."""
    n = len(nbr_ptr) - 1
    deg = np.diff(nbr_ptr)
    A = np.zeros((n, n))
    A[np.repeat(np.arange(n), deg), nbr_idx] = 1.0
    return A, np.maximum(deg, 1).astype(float)


def simulate_batch(hits, n_spin_up, years, init, u, beta0, beta1, beta2, alpha,
                   use_v, nbr_ptr, nbr_idx, resets):
    hits = np.ascontiguousarray(hits, dtype=np.uint8)
    n = hits.shape[0]
    b = init.shape[0]
    cum = np.zeros((n, hits.shape[1] + 1), dtype=np.int64)
    np.cumsum(hits, axis=1, out=cum[:, 1:])
    rows = np.arange(n)[None, :]
    A, deg = _adjacency(nbr_ptr, nbr_idx)

    states = np.zeros((b, years + 1, n), dtype=np.uint8)
    states[:, 0, :] = init
    movein = np.zeros((b, n), dtype=np.int64)
    hist_start = np.zeros((b, n), dtype=np.int64)
    for t in range(1, years + 1):
        k = n_spin_up + t - 1
        prev = states[:, t - 1, :]
        if resets:
            w = np.maximum(MIN_WINDOW, t - movein)
            lo = np.maximum(k - w + 1, hist_start)
            r = (cum[rows, k + 1] - cum[rows, lo]) / w
        else:
            r = np.broadcast_to((cum[:, k + 1] - cum[:, k + 1 - MIN_WINDOW]) / MIN_WINDOW, (b, n))
        y = beta0 + beta1 * r
        if use_v:
            y = y + beta2 * (((1.0 - prev) @ A.T) / deg)
        p_leave = expit(y)
        ut = u[:, t - 1, :]
        occupied = prev == 1
        stay = ut >= p_leave
        arrive = ut < alpha
        new = np.where(occupied, stay, arrive).astype(np.uint8)
        moved_in = (~occupied) & arrive
        movein[moved_in] = t
        hist_start[moved_in] = k + 1
        states[:, t, :] = new
    return states


def marginal_fixed(beta0, beta1, beta2, alpha, R, V, p0):
    T, n = R.shape
    y = beta0 + beta1 * R + beta2 * V
    p10 = expit(y)
    pv = np.empty((T + 1, n))
    pv[0] = p0
    for t in range(1, T + 1):
        pv[t] = pv[t - 1] * (1.0 - alpha) + (1.0 - pv[t - 1]) * p10[t - 1]
    return pv


def loglik_individual(beta0, beta1, beta2, alpha, R, V, vacant, p0):
    pv = marginal_fixed(beta0, beta1, beta2, alpha, R, V, p0)[1:]
    obs = vacant[1:].astype(bool)
    with np.errstate(divide="ignore"):
        return float(np.where(obs, np.log(pv), np.log1p(-pv)).sum())


def marginal_meanfield(beta0, beta1, beta2, alpha, R, nbr_ptr, nbr_idx, use_v, p0):
    T, n = R.shape
    pv = np.empty((T + 1, n))
    pv[0] = p0
    base = beta0 + beta1 * R
    A, deg = _adjacency(nbr_ptr, nbr_idx)
    for t in range(1, T + 1):
        y = base[t - 1]
        if use_v:
            y = y + beta2 * ((A @ pv[t - 1]) / deg)
        p10 = expit(y)
        pv[t] = pv[t - 1] * (1.0 - alpha) + (1.0 - pv[t - 1]) * p10
    return pv
