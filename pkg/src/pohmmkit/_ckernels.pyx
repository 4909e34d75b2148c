# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner-loop kernels; see ``_pykernels`` for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, INFINITY

cnp.import_array()

BACKEND = "cython"


cdef inline double _lse(const double* x, Py_ssize_t n, Py_ssize_t stride) noexcept nogil:
    cdef Py_ssize_t i
    cdef double m = -INFINITY
    cdef double s = 0.0
    for i in range(n):
        if x[i * stride] > m:
            m = x[i * stride]
    if m == -INFINITY:
        return -INFINITY
    for i in range(n):
        s += exp(x[i * stride] - m)
    return m + log(s)


cdef inline Py_ssize_t _draw(const double* logw, Py_ssize_t n, double u, double* buf) noexcept nogil:
    cdef Py_ssize_t i
    cdef double m = -INFINITY
    cdef double c = 0.0
    cdef double thresh
    for i in range(n):
        if logw[i] > m:
            m = logw[i]
    for i in range(n):
        c += exp(logw[i] - m)
        buf[i] = c
    thresh = u * c
    for i in range(n):
        if buf[i] > thresh:
            return i
    i = n - 1
    while i > 0 and exp(logw[i] - m) <= 0.0:
        i -= 1
    return i


def forward(const double[::1] log_pi, const double[:, ::1] log_A, const double[:, :, ::1] log_b):
    cdef Py_ssize_t B = log_b.shape[0], T = log_b.shape[1], S = log_b.shape[2]
    cdef Py_ssize_t b, t, i, j
    out = np.empty((B, T, S))
    ll = np.empty(B)
    cdef double[:, :, ::1] a = out
    cdef double[::1] llv = ll
    cdef double[::1] tmp = np.empty(S)
    with nogil:
        for b in range(B):
            for i in range(S):
                a[b, 0, i] = log_pi[i] + log_b[b, 0, i]
            for t in range(1, T):
                for j in range(S):
                    for i in range(S):
                        tmp[i] = a[b, t - 1, i] + log_A[i, j]
                    a[b, t, j] = _lse(&tmp[0], S, 1) + log_b[b, t, j]
            llv[b] = _lse(&a[b, T - 1, 0], S, 1)
    return out, ll


def backward(const double[:, ::1] log_A, const double[:, :, ::1] log_b):
    cdef Py_ssize_t B = log_b.shape[0], T = log_b.shape[1], S = log_b.shape[2]
    cdef Py_ssize_t b, t, i, j
    out = np.empty((B, T, S))
    cdef double[:, :, ::1] be = out
    cdef double[::1] tmp = np.empty(S)
    with nogil:
        for b in range(B):
            for i in range(S):
                be[b, T - 1, i] = 0.0
            for t in range(T - 2, -1, -1):
                for i in range(S):
                    for j in range(S):
                        tmp[j] = log_A[i, j] + log_b[b, t + 1, j] + be[b, t + 1, j]
                    be[b, t, i] = _lse(&tmp[0], S, 1)
    return out


def xi_sums(const double[:, :, ::1] log_alpha, const double[:, :, ::1] log_beta,
            const double[:, ::1] log_A, const double[:, :, ::1] log_b, const double[::1] loglik):
    cdef Py_ssize_t B = log_b.shape[0], T = log_b.shape[1], S = log_b.shape[2]
    cdef Py_ssize_t b, t, i, j
    out = np.zeros((B, S, S))
    cdef double[:, :, ::1] x = out
    with nogil:
        for b in range(B):
            for t in range(T - 1):
                for i in range(S):
                    for j in range(S):
                        x[b, i, j] += exp(log_alpha[b, t, i] + log_A[i, j]
                                          + log_b[b, t + 1, j] + log_beta[b, t + 1, j] - loglik[b])
    return out


def backward_sample(const double[:, :, ::1] log_alpha, const double[:, ::1] log_A, const double[:, ::1] u):
    cdef Py_ssize_t B = log_alpha.shape[0], T = log_alpha.shape[1], S = log_alpha.shape[2]
    cdef Py_ssize_t b, t, i, nxt
    path = np.empty((B, T), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] p = path
    cdef double[::1] w = np.empty(S)
    cdef double[::1] buf = np.empty(S)
    with nogil:
        for b in range(B):
            p[b, T - 1] = _draw(&log_alpha[b, T - 1, 0], S, u[b, T - 1], &buf[0])
            for t in range(T - 2, -1, -1):
                nxt = p[b, t + 1]
                for i in range(S):
                    w[i] = log_alpha[b, t, i] + log_A[i, nxt]
                p[b, t] = _draw(&w[0], S, u[b, t], &buf[0])
    return path


def sample_categorical(const double[:, ::1] logits, const double[::1] u):
    cdef Py_ssize_t N = logits.shape[0], V = logits.shape[1], n
    idx = np.empty(N, dtype=np.int64)
    cdef cnp.int64_t[::1] out = idx
    cdef double[::1] buf = np.empty(V)
    with nogil:
        for n in range(N):
            out[n] = _draw(&logits[n, 0], V, u[n], &buf[0])
    return idx
