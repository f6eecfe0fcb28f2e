# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: pairwise squared distances, nearest-centroid
assignment, and Levenshtein distance."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def pairwise_sq_dists(double[:, ::1] x, double[:, ::1] m):
    cdef Py_ssize_t t = x.shape[0], k = m.shape[0], d = x.shape[1]
    cdef Py_ssize_t i, j, c
    cdef double acc, diff
    out_arr = np.empty((t, k), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for i in range(t):
        for j in range(k):
            acc = 0.0
            for c in range(d):
                diff = x[i, c] - m[j, c]
                acc += diff * diff
            out[i, j] = acc
    return out_arr


def nearest_assign(double[:, ::1] x, double[:, ::1] m):
    cdef Py_ssize_t t = x.shape[0], k = m.shape[0], d = x.shape[1]
    cdef Py_ssize_t i, j, c, best
    cdef double acc, diff, best_d
    labels_arr = np.empty(t, dtype=np.int64)
    dists_arr = np.empty(t, dtype=np.float64)
    cdef cnp.int64_t[::1] labels = labels_arr
    cdef double[::1] dists = dists_arr
    for i in range(t):
        best = 0
        best_d = 0.0
        for j in range(k):
            acc = 0.0
            for c in range(d):
                diff = x[i, c] - m[j, c]
                acc += diff * diff
            if j == 0 or acc < best_d:
                best = j
                best_d = acc
        labels[i] = best
        dists[i] = best_d
    return labels_arr, dists_arr


def levenshtein(cnp.int64_t[::1] a, cnp.int64_t[::1] b):
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0]
    cdef Py_ssize_t i, j
    cdef cnp.int64_t cost, best, tmp
    if n == 0:
        return m
    if m == 0:
        return n
    prev_arr = np.arange(m + 1, dtype=np.int64)
    cur_arr = np.empty(m + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] prev = prev_arr
    cdef cnp.int64_t[::1] cur = cur_arr
    for i in range(1, n + 1):
        cur[0] = i
        for j in range(1, m + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            best = prev[j] + 1
            tmp = cur[j - 1] + 1
            if tmp < best:
                best = tmp
            tmp = prev[j - 1] + cost
            if tmp < best:
                best = tmp
            cur[j] = best
        prev, cur = cur, prev
    return int(prev[m])
