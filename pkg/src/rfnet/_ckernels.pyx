# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled E-step kernels. See ``_pykernels`` for the reference semantics."""

import numpy as np

from libc.math cimport sqrt
from scipy.linalg.cython_blas cimport dgemm

from .numerics import NotPositiveDefinite


def rectify_normalize(mu_p_in):
    cdef const double[:, ::1] mu_p = np.ascontiguousarray(mu_p_in, dtype=np.float64)
    cdef Py_ssize_t n = mu_p.shape[0], l = mu_p.shape[1], i, j, best
    out_arr = np.empty((n, l))
    cdef double[:, ::1] out = out_arr
    ss_arr = np.zeros(l)
    cdef double[::1] ss = ss_arr
    cmax_arr = np.zeros(l)
    cdef double[::1] cmax = cmax_arr
    cdef double v, bestval
    if l == 0:
        return out_arr
    with nogil:
        for i in range(n):
            # branch-free rectification; random signs defeat branch prediction
            bestval = mu_p[i, 0]
            for j in range(l):
                v = mu_p[i, j]
                out[i, j] = v if v > 0.0 else 0.0
                bestval = v if v > bestval else bestval
            if bestval <= 0.0:
                best = 0
                while mu_p[i, best] != bestval:
                    best = best + 1
                out[i, best] = 1.0
            for j in range(l):
                v = out[i, j]
                cmax[j] = v if v > cmax[j] else cmax[j]
        # squares of max-scaled entries neither underflow nor overflow
        for j in range(l):
            if cmax[j] > 0.0:
                cmax[j] = 1.0 / cmax[j]
        for i in range(n):
            for j in range(l):
                v = out[i, j] * cmax[j]
                ss[j] += v * v
        for j in range(l):
            if ss[j] > 0.0:
                ss[j] = cmax[j] / sqrt(ss[j] / n)
        for i in range(n):
            for j in range(l):
                out[i, j] *= ss[j]
    return out_arr


cdef void _times_sym(const double[:, ::1] A, double[:, ::1] X, double[:, ::1] Y) noexcept nogil:
    """Y = X A for row-major X (n, l) and symmetric A (l, l), via BLAS dgemm.

    Row-major X is column-major X^T, and (X A)^T = A X^T since A = A^T.
    """
    cdef int l = <int>A.shape[0], n = <int>X.shape[0]
    cdef double one = 1.0, zero = 0.0
    if n == 0 or l == 0:
        return
    dgemm(b"N", b"N", &l, &n, &l, &one, <double*>&A[0, 0], &l, &X[0, 0], &l, &zero, &Y[0, 0], &l)


def estep_objective(mu_in, mu_p_in, prec_in):
    cdef const double[:, ::1] mu = np.ascontiguousarray(mu_in, dtype=np.float64)
    cdef const double[:, ::1] mu_p = np.ascontiguousarray(mu_p_in, dtype=np.float64)
    cdef const double[:, ::1] A = np.ascontiguousarray(prec_in, dtype=np.float64)
    cdef Py_ssize_t n = mu.shape[0], l = mu.shape[1], i, j
    cdef double[:, ::1] D = np.empty((n, l))
    cdef double[:, ::1] P = np.empty((n, l))
    cdef double total = 0.0
    with nogil:
        for i in range(n):
            for j in range(l):
                D[i, j] = mu[i, j] - mu_p[i, j]
        _times_sym(A, D, P)
        for i in range(n):
            for j in range(l):
                total += D[i, j] * P[i, j]
    return total / n


cdef int _chol_solve(double[:, ::1] L, Py_ssize_t[::1] idx, Py_ssize_t k,
                     const double[:, ::1] A, double[::1] b) noexcept nogil:
    """Factor A[idx, idx] into L (lower) and solve in place for b[:k]. 1 on failure."""
    cdef Py_ssize_t r, c, t
    cdef double s
    for r in range(k):
        for c in range(r + 1):
            s = A[idx[r], idx[c]]
            for t in range(c):
                s = s - L[r, t] * L[c, t]
            if r == c:
                if s <= 0.0:
                    return 1
                L[r, r] = sqrt(s)
            else:
                L[r, c] = s / L[c, c]
    for r in range(k):
        s = b[r]
        for t in range(r):
            s = s - L[r, t] * b[t]
        b[r] = s / L[r, r]
    for r in range(k - 1, -1, -1):
        s = b[r]
        for t in range(r + 1, k):
            s = s - L[t, r] * b[t]
        b[r] = s / L[r, r]
    return 0


def reduced_direction(mu_old_in, mu_p_in, prec_in, double eps):
    cdef const double[:, ::1] mu_old = np.ascontiguousarray(mu_old_in, dtype=np.float64)
    cdef const double[:, ::1] mu_p = np.ascontiguousarray(mu_p_in, dtype=np.float64)
    cdef const double[:, ::1] A = np.ascontiguousarray(prec_in, dtype=np.float64)
    cdef Py_ssize_t n = mu_old.shape[0], l = mu_old.shape[1], i, j, k, q
    out_arr = np.empty((n, l))
    cdef double[:, ::1] out = out_arr
    cdef double[::1] b = np.empty(l)
    cdef double[:, ::1] L = np.empty((l, l))
    cdef Py_ssize_t[::1] idx = np.empty(l, dtype=np.intp)
    cdef double[:, ::1] R = np.empty((n, l))
    cdef int bad_row = -1
    with nogil:
        for i in range(n):
            for j in range(l):
                R[i, j] = mu_p[i, j] - mu_old[i, j]
        _times_sym(A, R, out)
        for i in range(n):
            k = 0
            for j in range(l):
                if mu_old[i, j] > eps:
                    idx[k] = j
                    b[k] = out[i, j]
                    k = k + 1
            if k == 0:
                continue
            if _chol_solve(L, idx, k, A, b):
                bad_row = <int>i
                break
            for q in range(k):
                out[i, idx[q]] = b[q]
    if bad_row >= 0:
        raise NotPositiveDefinite(f"row {bad_row}: reduced matrix is not positive definite")
    return out_arr
