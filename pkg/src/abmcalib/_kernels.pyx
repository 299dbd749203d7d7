# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Mirrors ``_fallback`` exactly in semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p

cnp.import_array()

DEF MIN_WINDOW = 10


cdef inline double _expit(double y) nogil:
    cdef double e
    if y >= 0:
        return 1.0 / (1.0 + exp(-y))
    e = exp(y)
    return e / (1.0 + e)


def simulate_batch(hits, Py_ssize_t n_spin_up, Py_ssize_t years, init, u,
                   double beta0, double beta1, double beta2, double alpha,
                   bint use_v, nbr_ptr, nbr_idx, bint resets):
    cdef const unsigned char[:, ::1] H = np.ascontiguousarray(hits, dtype=np.uint8)
    cdef const unsigned char[:, ::1] S0 = np.ascontiguousarray(init, dtype=np.uint8)
    cdef const double[:, :, ::1] U = np.ascontiguousarray(u, dtype=np.float64)
    cdef const long long[::1] ptr = np.ascontiguousarray(nbr_ptr, dtype=np.int64)
    cdef const long long[::1] idx = np.ascontiguousarray(nbr_idx, dtype=np.int64)
    cdef Py_ssize_t n = H.shape[0]
    cdef Py_ssize_t K = H.shape[1]
    cdef Py_ssize_t nb = S0.shape[0]

    cum_arr = np.zeros((n, K + 1), dtype=np.int64)
    cdef long long[:, ::1] cum = cum_arr
    states_arr = np.zeros((nb, years + 1, n), dtype=np.uint8)
    cdef unsigned char[:, :, ::1] st = states_arr
    movein_arr = np.zeros(n, dtype=np.int64)
    hist_arr = np.zeros(n, dtype=np.int64)
    cdef long long[::1] movein = movein_arr
    cdef long long[::1] hist = hist_arr

    cdef Py_ssize_t i, j, k, t, b, q
    cdef long long w, lo, deg, nvac
    cdef double r, v, y, p

    with nogil:
        for i in range(n):
            for k in range(K):
                cum[i, k + 1] = cum[i, k] + H[i, k]
        for b in range(nb):
            for i in range(n):
                st[b, 0, i] = S0[b, i]
                movein[i] = 0
                hist[i] = 0
            for t in range(1, years + 1):
                k = n_spin_up + t - 1
                for i in range(n):
                    if st[b, t - 1, i]:
                        if resets:
                            w = t - movein[i]
                            if w < MIN_WINDOW:
                                w = MIN_WINDOW
                            lo = k - w + 1
                            if hist[i] > lo:
                                lo = hist[i]
                            r = (cum[i, k + 1] - cum[i, lo]) / <double>w
                        else:
                            r = (cum[i, k + 1] - cum[i, k + 1 - MIN_WINDOW]) / <double>MIN_WINDOW
                        y = beta0 + beta1 * r
                        if use_v:
                            deg = ptr[i + 1] - ptr[i]
                            nvac = 0
                            for q in range(ptr[i], ptr[i + 1]):
                                j = idx[q]
                                if st[b, t - 1, j] == 0:
                                    nvac += 1
                            if deg < 1:
                                deg = 1
                            v = nvac / <double>deg
                            y = y + beta2 * v
                        p = _expit(y)
                        st[b, t, i] = 0 if U[b, t - 1, i] < p else 1
                    else:
                        if U[b, t - 1, i] < alpha:
                            st[b, t, i] = 1
                            movein[i] = t
                            hist[i] = k + 1
                        else:
                            st[b, t, i] = 0
    return states_arr


def marginal_fixed(double beta0, double beta1, double beta2, double alpha, R, V, double p0):
    cdef const double[:, ::1] Rv = np.ascontiguousarray(R, dtype=np.float64)
    cdef const double[:, ::1] Vv = np.ascontiguousarray(V, dtype=np.float64)
    cdef Py_ssize_t T = Rv.shape[0], n = Rv.shape[1], t, i
    out = np.empty((T + 1, n), dtype=np.float64)
    cdef double[:, ::1] pv = out
    cdef double p10
    with nogil:
        for i in range(n):
            pv[0, i] = p0
        for t in range(1, T + 1):
            for i in range(n):
                p10 = _expit(beta0 + beta1 * Rv[t - 1, i] + beta2 * Vv[t - 1, i])
                pv[t, i] = pv[t - 1, i] * (1.0 - alpha) + (1.0 - pv[t - 1, i]) * p10
    return out


def loglik_individual(double beta0, double beta1, double beta2, double alpha, R, V, vacant, double p0):
    cdef const double[:, ::1] Rv = np.ascontiguousarray(R, dtype=np.float64)
    cdef const double[:, ::1] Vv = np.ascontiguousarray(V, dtype=np.float64)
    cdef const unsigned char[:, ::1] obs = np.ascontiguousarray(vacant, dtype=np.uint8)
    cdef Py_ssize_t T = Rv.shape[0], n = Rv.shape[1], t, i
    cdef double total = 0.0, p10, prev, cur
    for i in range(n):
        prev = p0
        for t in range(1, T + 1):
            p10 = _expit(beta0 + beta1 * Rv[t - 1, i] + beta2 * Vv[t - 1, i])
            cur = prev * (1.0 - alpha) + (1.0 - prev) * p10
            if obs[t, i]:
                if cur <= 0.0:
                    return float("-inf")
                total += log(cur)
            else:
                if cur >= 1.0:
                    return float("-inf")
                total += log1p(-cur)
            prev = cur
    return total


def marginal_meanfield(double beta0, double beta1, double beta2, double alpha, R,
                       nbr_ptr, nbr_idx, bint use_v, double p0):
    cdef const double[:, ::1] Rv = np.ascontiguousarray(R, dtype=np.float64)
    cdef const long long[::1] ptr = np.ascontiguousarray(nbr_ptr, dtype=np.int64)
    cdef const long long[::1] idx = np.ascontiguousarray(nbr_idx, dtype=np.int64)
    cdef Py_ssize_t T = Rv.shape[0], n = Rv.shape[1], t, i, q
    out = np.empty((T + 1, n), dtype=np.float64)
    cdef double[:, ::1] pv = out
    cdef double y, s, p10
    cdef long long deg
    with nogil:
        for i in range(n):
            pv[0, i] = p0
        for t in range(1, T + 1):
            for i in range(n):
                y = beta0 + beta1 * Rv[t - 1, i]
                if use_v:
                    s = 0.0
                    for q in range(ptr[i], ptr[i + 1]):
                        s = s + pv[t - 1, idx[q]]
                    deg = ptr[i + 1] - ptr[i]
                    if deg < 1:
                        deg = 1
                    y = y + beta2 * (s / <double>deg)
                p10 = _expit(y)
                pv[t, i] = pv[t - 1, i] * (1.0 - alpha) + (1.0 - pv[t - 1, i]) * p10
    return out
