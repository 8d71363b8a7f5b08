# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for clustering and feature pooling.

Every loop accumulates in a fixed order (row index, then feature index) so the
results agree bit-for-bit with :mod:`ssal._kernels_py`.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def assign_sq(const double[:, ::1] X, const double[:, ::1] C):
    """Nearest centroid per row. Returns (labels int64, squared distances)."""
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1], k = C.shape[0]
    cdef Py_ssize_t i, c, j
    cdef double acc, diff, best
    cdef Py_ssize_t best_c
    labels = np.empty(n, dtype=np.int64)
    d2 = np.empty(n, dtype=np.float64)
    cdef cnp.int64_t[::1] lab = labels
    cdef double[::1] dist = d2
    with nogil:
        for i in range(n):
            best = 0.0
            best_c = -1
            for c in range(k):
                acc = 0.0
                for j in range(d):
                    diff = X[i, j] - C[c, j]
                    acc = acc + diff * diff
                # strict comparison: ties keep the lowest centroid index
                if best_c < 0 or acc < best:
                    best = acc
                    best_c = c
            lab[i] = best_c
            dist[i] = best
    return labels, d2


def sq_dist_to(const double[:, ::1] X, const double[:, ::1] C, const cnp.int64_t[::1] labels):
    """Squared distance of each row to the centroid named by ``labels``."""
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1]
    cdef Py_ssize_t i, j, c
    cdef double acc, diff
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            c = labels[i]
            acc = 0.0
            for j in range(d):
                diff = X[i, j] - C[c, j]
                acc = acc + diff * diff
            o[i] = acc
    return out


def centroid_sums(const double[:, ::1] X, const cnp.int64_t[::1] labels, Py_ssize_t k):
    """Per-cluster row sums (accumulated in row order) and member counts."""
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1]
    cdef Py_ssize_t i, j, c
    sums = np.zeros((k, d), dtype=np.float64)
    counts = np.zeros(k, dtype=np.int64)
    cdef double[:, ::1] s = sums
    cdef cnp.int64_t[::1] cnt = counts
    with nogil:
        for i in range(n):
            c = labels[i]
            cnt[c] += 1
            for j in range(d):
                s[c, j] = s[c, j] + X[i, j]
    return sums, counts


def adaptive_avg_pool(const double[:, :, ::1] fmap, Py_ssize_t g):
    """Average C x h x w into C x g x g with floor/ceil adaptive bins."""
    cdef Py_ssize_t nc = fmap.shape[0], h = fmap.shape[1], w = fmap.shape[2]
    cdef Py_ssize_t ch, bi, bj, r, col, r0, r1, c0, c1
    cdef double acc
    out = np.empty((nc, g, g), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    with nogil:
        for ch in range(nc):
            for bi in range(g):
                r0 = (bi * h) // g
                r1 = ((bi + 1) * h + g - 1) // g
                for bj in range(g):
                    c0 = (bj * w) // g
                    c1 = ((bj + 1) * w + g - 1) // g
                    acc = 0.0
                    for r in range(r0, r1):
                        for col in range(c0, c1):
                            acc = acc + fmap[ch, r, col]
                    o[ch, bi, bj] = acc / ((r1 - r0) * (c1 - c0))
    return out
