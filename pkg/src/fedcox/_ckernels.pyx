# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot loops; see _pykernels for the contract."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()


def cox_terms(double[:, ::1] X, double[::1] eta, event, long[::1] group_start, int order):
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t p = X.shape[1]
    cdef Py_ssize_t i, j, k, l, g
    cdef double shift, s0, loss = 0.0, inv, coef
    cdef cnp.uint8_t[::1] ev = np.ascontiguousarray(event, dtype=np.uint8)

    grad_arr = np.zeros(p) if order >= 1 else None
    hess_arr = np.zeros((p, p)) if order >= 2 else None
    if n == 0:
        return 0.0, grad_arr, hess_arr

    shift = eta[0]
    for i in range(1, n):
        if eta[i] > shift:
            shift = eta[i]

    cdef double[::1] w = np.empty(n)
    cdef long[::1] d = np.zeros(n, dtype=np.int64)
    for i in range(n):
        w[i] = exp(eta[i] - shift)
        if ev[i]:
            d[group_start[i]] += 1
            loss -= eta[i]

    cdef double[::1] s1 = np.zeros(p)
    cdef double[::1] grad
    cdef double[:, ::1] hess
    cdef double[::1] s0_at = np.zeros(n)
    cdef double[:, ::1] means
    if order >= 1:
        grad = grad_arr
        for i in range(n):
            if ev[i]:
                for k in range(p):
                    grad[k] -= X[i, k]
    if order >= 2:
        means = np.zeros((n, p))

    s0 = 0.0
    for j in range(n - 1, -1, -1):
        s0 += w[j]
        if order >= 1:
            for k in range(p):
                s1[k] += w[j] * X[j, k]
        if group_start[j] == j and d[j] > 0:
            loss += d[j] * (log(s0) + shift)
            s0_at[j] = s0
            if order >= 1:
                inv = 1.0 / s0
                for k in range(p):
                    grad[k] += d[j] * s1[k] * inv
                    if order >= 2:
                        means[j, k] = s1[k] * inv

    if order >= 2:
        hess = hess_arr
        coef = 0.0
        for j in range(n):
            if group_start[j] == j and d[j] > 0:
                coef += d[j] / s0_at[j]
                for k in range(p):
                    for l in range(k, p):
                        hess[k, l] -= d[j] * means[j, k] * means[j, l]
            inv = w[j] * coef
            if inv != 0.0:
                for k in range(p):
                    for l in range(k, p):
                        hess[k, l] += inv * X[j, k] * X[j, l]
        for k in range(p):
            for l in range(k + 1, p):
                hess[l, k] = hess[k, l]

    return loss, grad_arr, hess_arr


def concordance_counts(time, event, risk):
    # sweep times from latest to earliest; a Fenwick tree over risk ranks
    # holds every subject with a strictly later time
    order = np.argsort(time, kind="stable")
    cdef double[::1] t = np.ascontiguousarray(np.asarray(time, dtype=np.float64)[order])
    r_sorted = np.asarray(risk, dtype=np.float64)[order]
    cdef cnp.uint8_t[::1] e = np.ascontiguousarray(np.asarray(event)[order], dtype=np.uint8)
    cdef Py_ssize_t n = t.shape[0]
    if n == 0:
        return 0, 0, 0
    # dense 1-based ranks of the risk scores
    cdef long[::1] rank = np.ascontiguousarray(
        np.unique(r_sorted, return_inverse=True)[1].reshape(-1) + 1, dtype=np.int_)
    cdef Py_ssize_t m = 0
    cdef Py_ssize_t i, j, k, lo, hi
    for i in range(n):
        if rank[i] > m:
            m = rank[i]
    cdef long long[::1] tree = np.zeros(m + 1, dtype=np.int64)
    cdef long long concordant = 0, tied = 0, comparable = 0, seen = 0, below, upto
    hi = n
    while hi > 0:
        lo = hi - 1
        while lo > 0 and t[lo - 1] == t[hi - 1]:
            lo -= 1
        for i in range(lo, hi):
            if not e[i]:
                continue
            comparable += seen
            below = 0
            k = rank[i] - 1
            while k > 0:
                below += tree[k]
                k -= k & (-k)
            upto = 0
            k = rank[i]
            while k > 0:
                upto += tree[k]
                k -= k & (-k)
            concordant += below
            tied += upto - below
        for i in range(lo, hi):
            k = rank[i]
            while k <= m:
                tree[k] += 1
                k += k & (-k)
        seen += hi - lo
        hi = lo
    return int(concordant), int(tied), int(comparable)
