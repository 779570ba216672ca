# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_pykernels``.

Signatures and results match the numpy versions; arguments are coerced to
contiguous float64 / int64 arrays first.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, expm1, log, fabs

cnp.import_array()

cdef double LOG_2PI = 1.8378770664093453


cdef inline double _gint(double t, double g, double eps) nogil:
    if fabs(g) < eps:
        return t
    return expm1(g * t) / g


def gompertz_integral(t, gamma, gamma_eps):
    tb, gb = np.broadcast_arrays(np.asarray(t, dtype=np.float64),
                                 np.asarray(gamma, dtype=np.float64))
    cdef const double[::1] tv = np.ascontiguousarray(tb).ravel()
    cdef const double[::1] gv = np.ascontiguousarray(gb).ravel()
    out = np.empty(tv.shape[0], dtype=np.float64)
    cdef double[::1] ov = out
    cdef double eps = gamma_eps
    cdef Py_ssize_t i
    for i in range(tv.shape[0]):
        ov[i] = _gint(tv[i], gv[i], eps)
    return out.reshape(tb.shape)


def gompertz_survival_terms(T, delta, eta, lam0, gamma, gamma_eps):
    cdef const double[::1] Tv = np.ascontiguousarray(T, dtype=np.float64)
    cdef const double[::1] dv = np.ascontiguousarray(delta, dtype=np.float64)
    cdef const double[:, ::1] ev = np.ascontiguousarray(eta, dtype=np.float64)
    cdef const double[::1] lv = np.ascontiguousarray(lam0, dtype=np.float64)
    cdef const double[::1] gv = np.ascontiguousarray(gamma, dtype=np.float64)
    cdef Py_ssize_t N = ev.shape[0], K = ev.shape[1], i, k
    out = np.empty((N, K), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef double eps = gamma_eps, ls, loglam
    for k in range(K):
        loglam = log(lv[k])
        for i in range(N):
            ls = loglam + ev[i, k]
            ov[i, k] = dv[i] * (ls + gv[k] * Tv[i]) - exp(ls) * _gint(Tv[i], gv[k], eps)
    return out


def mvn_cholesky_logdens(W, Tmat, log_d2):
    cdef const double[:, ::1] Wv = np.ascontiguousarray(W, dtype=np.float64)
    cdef const double[:, :, ::1] Tv = np.ascontiguousarray(Tmat, dtype=np.float64)
    cdef const double[:, ::1] Lv = np.ascontiguousarray(log_d2, dtype=np.float64)
    cdef Py_ssize_t N = Wv.shape[0], d = Wv.shape[1], i, g, l
    out = np.empty(N, dtype=np.float64)
    cdef double[::1] ov = out
    cdef double acc, e
    for i in range(N):
        acc = 0.0
        for g in range(d):
            e = Wv[i, g]
            for l in range(g):
                e += Tv[i, g, l] * Wv[i, l]
            acc += Lv[i, g] + e * e * exp(-Lv[i, g])
        ov[i] = -0.5 * d * LOG_2PI - 0.5 * acc
    return out


def gaussian_terms(y, mean, tau):
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef const double[:, ::1] mv = np.ascontiguousarray(mean, dtype=np.float64)
    cdef const double[::1] tv = np.ascontiguousarray(tau, dtype=np.float64)
    cdef Py_ssize_t n = mv.shape[0], K = mv.shape[1], j, k
    out = np.empty((n, K), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef double r, c
    for k in range(K):
        c = -0.5 * (LOG_2PI + log(tv[k]))
        for j in range(n):
            r = yv[j] - mv[j, k]
            ov[j, k] = c - 0.5 * r * r / tv[k]
    return out


def subject_gaussian_loglik(y, mean, Z, U, tau, obs_subject, n_subjects):
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef const double[::1] mv = np.ascontiguousarray(mean, dtype=np.float64)
    cdef const double[:, ::1] Zv = np.ascontiguousarray(Z, dtype=np.float64)
    cdef const double[:, ::1] Uv = np.ascontiguousarray(U, dtype=np.float64)
    cdef const double[::1] tv = np.ascontiguousarray(tau, dtype=np.float64)
    cdef const cnp.int64_t[::1] sv = np.ascontiguousarray(obs_subject, dtype=np.int64)
    cdef Py_ssize_t n = yv.shape[0], q = Zv.shape[1], j, a, i
    out = np.zeros(n_subjects, dtype=np.float64)
    cdef double[::1] ov = out
    cdef double r
    for j in range(n):
        i = sv[j]
        r = yv[j] - mv[j]
        for a in range(q):
            r -= Zv[j, a] * Uv[i, a]
        ov[i] += -0.5 * (LOG_2PI + log(tv[j])) - 0.5 * r * r / tv[j]
    return out


def log_softmax_rows(L):
    cdef const double[:, ::1] Lv = np.ascontiguousarray(L, dtype=np.float64)
    cdef Py_ssize_t n = Lv.shape[0], K = Lv.shape[1], j, k
    out = np.empty((n, K), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef double m, s
    for j in range(n):
        m = Lv[j, 0]
        for k in range(1, K):
            if Lv[j, k] > m:
                m = Lv[j, k]
        s = 0.0
        for k in range(K):
            s += exp(Lv[j, k] - m)
        s = log(s)
        for k in range(K):
            ov[j, k] = Lv[j, k] - m - s
    return out


def sample_categorical(logp, u):
    cdef const double[:, ::1] Lv = np.ascontiguousarray(logp, dtype=np.float64)
    cdef const double[::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef Py_ssize_t n = Lv.shape[0], K = Lv.shape[1], j, k
    out = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] ov = out
    cdef double m, total, target
    cdef Py_ssize_t c
    cdef double[::1] buf = np.empty(K, dtype=np.float64)
    for j in range(n):
        m = Lv[j, 0]
        for k in range(1, K):
            if Lv[j, k] > m:
                m = Lv[j, k]
        total = 0.0
        for k in range(K):
            total += exp(Lv[j, k] - m)
            buf[k] = total
        target = uv[j] * total
        c = 0
        for k in range(K):
            if buf[k] < target:
                c += 1
        if c > K - 1:
            c = K - 1
        ov[j] = <cnp.int64_t>c
    return out
