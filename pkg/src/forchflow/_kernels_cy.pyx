# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Cython implementation of the hot numerical kernels.

Scalar twin of ``_kernels_numpy``: identical algorithm, identical iteration
schedule, arithmetic written in the same association order.  See that module
for the bracketing argument and the reproducibility contract (each backend
deterministic; cross-backend divergence <= 1e-12 relative, pinned by a unit
test).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport pow, sqrt

cnp.import_array()

N_BISECT = 14
N_NEWTON = 10

DEF _N_BISECT = 14
DEF _N_NEWTON = 10


cdef inline double _pow_spec(double s, double d) nogil:
    if d == 0.0:
        return 1.0
    if d == 1.0:
        return s
    return pow(s, d)


cdef inline double _g(const double* c, const double* d, Py_ssize_t K, double s) nogil:
    cdef double acc = 0.0
    cdef Py_ssize_t k
    for k in range(K):
        acc = acc + c[k] * _pow_spec(s, d[k])
    return acc


cdef inline double _gp(const double* c, const double* d, Py_ssize_t K, double s) nogil:
    cdef double acc = 0.0
    cdef Py_ssize_t k
    for k in range(K):
        if d[k] > 0.0:
            acc = acc + c[k] * d[k] * _pow_spec(s, d[k] - 1.0)
    return acc


def eval_power_law(coeffs, degrees, s):
    """Evaluate g(s) = sum_k coeffs[:, k] * s**degrees[k] per sample."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] c = np.ascontiguousarray(coeffs, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1, mode="c"] d = np.ascontiguousarray(degrees, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1, mode="c"] sv = np.ascontiguousarray(s, dtype=np.float64)
    cdef Py_ssize_t M = sv.shape[0]
    cdef Py_ssize_t K = d.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1, mode="c"] out = np.empty(M, dtype=np.float64)
    cdef Py_ssize_t i
    with nogil:
        for i in range(M):
            out[i] = _g(&c[i, 0], &d[0], K, sv[i])
    return out


def profile_root(coeffs, degrees, z, ymag):
    """Solve s * sqrt(g(s)^2 + z^2) = ymag for s >= 0, elementwise."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] c = np.ascontiguousarray(coeffs, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1, mode="c"] d = np.ascontiguousarray(degrees, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1, mode="c"] zv = np.ascontiguousarray(z, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1, mode="c"] yv = np.ascontiguousarray(ymag, dtype=np.float64)
    cdef Py_ssize_t M = yv.shape[0]
    cdef Py_ssize_t K = d.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1, mode="c"] out = np.empty(M, dtype=np.float64)
    cdef Py_ssize_t i, k, it
    cdef double y, zi, lo, hi, cand, g, q, mid, prof, s, f, gp, den, t
    with nogil:
        for i in range(M):
            y = yv[i]
            if not y > 0.0:
                out[i] = 0.0
                continue
            zi = zv[i]

            hi = y / c[i, 0]
            for k in range(1, K):
                if c[i, k] > 0.0:
                    cand = pow(y / c[i, k], 1.0 / (1.0 + d[k]))
                    if cand < hi:
                        hi = cand
            if zi > 0.0:
                cand = y / zi
                if cand < hi:
                    hi = cand

            g = _g(&c[i, 0], &d[0], K, hi)
            lo = y / sqrt(g * g + zi * zi)
            if not lo < hi:
                lo = hi

            for it in range(_N_BISECT):
                mid = 0.5 * (lo + hi)
                g = _g(&c[i, 0], &d[0], K, mid)
                prof = mid * sqrt(g * g + zi * zi)
                if prof < y:
                    lo = mid
                else:
                    hi = mid

            s = 0.5 * (lo + hi)
            for it in range(_N_NEWTON):
                g = _g(&c[i, 0], &d[0], K, s)
                q = sqrt(g * g + zi * zi)
                f = s * q - y
                if f < 0.0:
                    lo = s
                else:
                    hi = s
                gp = _gp(&c[i, 0], &d[0], K, s)
                den = q + s * g * gp / q
                t = s - f / den
                if t >= lo and t <= hi:
                    s = t
                else:
                    s = 0.5 * (lo + hi)
            out[i] = s
    return out
