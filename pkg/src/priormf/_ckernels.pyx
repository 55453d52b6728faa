# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-block kernels; same contract as ``_pykernels``."""

import numpy as np

from libc.math cimport fabs, log, isfinite

cdef enum:
    SL = 0
    AL = 1
    GKL = 2


cdef inline double _sign(double x) nogil:
    if x > 0.0:
        return 1.0
    if x < 0.0:
        return -1.0
    return 0.0


cdef double _block(
    int kind, const double[:] row, const long[:] idx, const double[:] vals,
    const double[:, :] other, const double[:, :] S, bint use_gram, const double[:] s,
    double alpha, double lam, double r0, double n_other, double eps,
    long[:] counters, double[:] grad, bint want_grad,
) noexcept nogil:
    cdef Py_ssize_t k = row.shape[0]
    cdef Py_ssize_t d = idx.shape[0]
    cdef Py_ssize_t t, a, b, j
    cdef double value = 0.0, p, r, e, e0, coef, pc, acc, ws

    if want_grad:
        for a in range(k):
            grad[a] = 0.0

    for t in range(d):
        j = idx[t]
        r = vals[t]
        p = 0.0
        for a in range(k):
            p += row[a] * other[j, a]
        if kind == SL:
            e = r - p
            e0 = r0 - p
            value += e * e - alpha * e0 * e0
            coef = -2.0 * (r - (1.0 - alpha) * p - alpha * r0)
        elif kind == AL:
            value += fabs(r - p) - alpha * p
            coef = _sign(p - r) - alpha
        else:
            pc = p
            if p < eps:
                pc = eps
                counters[0] += 1
            value += r * log(r / pc) - r + (1.0 - alpha) * p
            coef = -r / pc + (1.0 - alpha)
        if want_grad:
            for a in range(k):
                grad[a] += coef * other[j, a]

    ws = 0.0
    for a in range(k):
        ws += row[a] * s[a]

    if kind == SL:
        # quadratic form w S w^T and its gradient 2 S w
        acc = 0.0
        if use_gram:
            for a in range(k):
                p = 0.0
                for b in range(k):
                    p += S[a, b] * row[b]
                acc += row[a] * p
                if want_grad:
                    grad[a] += 2.0 * alpha * (p - r0 * s[a])
        value += alpha * (n_other * r0 * r0 - 2.0 * r0 * ws + acc)
        for a in range(k):
            value += lam * fabs(row[a])
            if want_grad:
                grad[a] += lam * _sign(row[a])
    else:
        value += alpha * ws
        for a in range(k):
            value += lam * fabs(row[a])
            if want_grad:
                grad[a] += alpha * s[a] + lam
    return value


def block_value(int kind, const double[:] row, const long[:] idx, const double[:] vals,
                const double[:, :] other, const double[:, :] S, const double[:] s,
                double alpha, double lam, double r0, double n_other, double eps,
                long[:] counters):
    cdef bint use_gram = S is not None
    cdef double[:] dummy = np.empty(0)
    return _block(kind, row, idx, vals, other, S, use_gram, s, alpha, lam, r0,
                  n_other, eps, counters, dummy, False)


def block_eval(int kind, const double[:] row, const long[:] idx, const double[:] vals,
               const double[:, :] other, const double[:, :] S, const double[:] s,
               double alpha, double lam, double r0, double n_other, double eps,
               long[:] counters):
    cdef bint use_gram = S is not None
    grad = np.empty(row.shape[0])
    cdef double[:] g = grad
    cdef double value = _block(kind, row, idx, vals, other, S, use_gram, s, alpha,
                               lam, r0, n_other, eps, counters, g, True)
    return value, grad


def line_search(int kind, const double[:] row, const long[:] idx, const double[:] vals,
                const double[:, :] other, const double[:, :] S, const double[:] s,
                double alpha, double lam, double r0, double n_other,
                bint nonneg, double t0, double shrink, double c, int max_halvings,
                double eps, long[:] counters):
    cdef Py_ssize_t k = row.shape[0]
    cdef Py_ssize_t a
    cdef int it
    cdef bint use_gram = S is not None
    grad_arr = np.empty(k)
    cand_arr = np.empty(k)
    cdef double[:] g = grad_arr
    cdef double[:] cand = cand_arr
    cdef double[:] dummy = np.empty(0)
    cdef double f0, f1, t, dec, x

    f0 = _block(kind, row, idx, vals, other, S, use_gram, s, alpha, lam, r0,
                n_other, eps, counters, g, True)
    for a in range(k):
        if not isfinite(g[a]):
            raise FloatingPointError("non-finite block gradient")

    t = t0
    for it in range(max_halvings + 1):
        dec = 0.0
        for a in range(k):
            x = row[a] - t * g[a]
            if nonneg and x < 0.0:
                x = 0.0
            cand[a] = x
            dec += g[a] * (row[a] - x)
        if dec <= 0.0:
            break
        f1 = _block(kind, cand, idx, vals, other, S, use_gram, s, alpha, lam, r0,
                    n_other, eps, counters, dummy, False)
        if f1 <= f0 - c * dec:
            return cand_arr, f0, f1, t
        t *= shrink
    return np.array(row, copy=True), f0, f0, 0.0


def rank1_update(double[:, :] S, double[:] s, const double[:] old, const double[:] new):
    cdef Py_ssize_t k = s.shape[0]
    cdef Py_ssize_t a, b
    if S is not None:
        for a in range(k):
            for b in range(k):
                S[a, b] += new[a] * new[b] - old[a] * old[b]
    for a in range(k):
        s[a] += new[a] - old[a]
