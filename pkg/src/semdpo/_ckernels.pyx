# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled sequence kernels for the prompt-conditioned bigram policy.

Every reduction runs in ascending token index, so results are reproducible
bit-for-bit for a given build.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()


def cond_vector(const double[:, ::1] C, const double[::1] xe):
    cdef Py_ssize_t V = C.shape[0], D = C.shape[1], v, k
    cdef double s
    out = np.empty(V, dtype=np.float64)
    cdef double[::1] o = out
    for v in range(V):
        s = 0.0
        for k in range(D):
            s += C[v, k] * xe[k]
        o[v] = s
    return out


cdef inline double _log_softmax_row(const double[:, ::1] B, const double[::1] cond,
                                    Py_ssize_t prev, double* buf) nogil:
    """Fill buf with shifted logits; return log-sum-exp of the shifted row."""
    cdef Py_ssize_t V = B.shape[1], v
    cdef double m, s, x
    m = B[prev, 0] + cond[0]
    for v in range(V):
        x = B[prev, v] + cond[v]
        buf[v] = x
        if x > m:
            m = x
    s = 0.0
    for v in range(V):
        buf[v] -= m
        s += exp(buf[v])
    return log(s)


def seq_logprob(const double[:, ::1] B, const double[::1] cond, ids, int max_len):
    cdef cnp.intp_t[::1] y = np.ascontiguousarray(ids, dtype=np.intp)
    cdef Py_ssize_t T = y.shape[0], V = B.shape[1], t, n_scored, prev
    cdef double total = 0.0, lse
    n_scored = T if T < max_len - 1 else max_len - 1
    if n_scored <= 0:
        return 0.0
    cdef double[::1] buf = np.empty(V, dtype=np.float64)
    prev = 0
    for t in range(n_scored):
        lse = _log_softmax_row(B, cond, prev, &buf[0])
        total += buf[y[t]] - lse
        prev = y[t]
    return total


def seq_logprob_grad(const double[:, ::1] B, const double[::1] cond, ids, int max_len,
                     double scale, double[:, ::1] gB, double[::1] gcond):
    cdef cnp.intp_t[::1] y = np.ascontiguousarray(ids, dtype=np.intp)
    cdef Py_ssize_t T = y.shape[0], V = B.shape[1], t, v, n_scored, prev
    cdef double total = 0.0, lse, r
    n_scored = T if T < max_len - 1 else max_len - 1
    if n_scored <= 0:
        return 0.0
    cdef double[::1] buf = np.empty(V, dtype=np.float64)
    prev = 0
    for t in range(n_scored):
        lse = _log_softmax_row(B, cond, prev, &buf[0])
        total += buf[y[t]] - lse
        for v in range(V):
            r = -exp(buf[v] - lse)
            if v == y[t]:
                r += 1.0
            r *= scale
            gB[prev, v] += r
            gcond[v] += r
        prev = y[t]
    return total
