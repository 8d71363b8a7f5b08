"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``.

Accumulation order mirrors the compiled loops so both backends return
identical bits for ``assign_sq``, ``sq_dist_to`` and ``centroid_sums``.
"""
from __future__ import annotations

import numpy as np


def assign_sq(X: np.ndarray, C: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n, d = X.shape
    k = C.shape[0]
    acc = np.zeros((n, k), dtype=np.float64)
    for j in range(d):
        diff = X[:, j, None] - C[None, :, j]
        acc += diff * diff
    # argmin returns the first minimum, i.e. the lowest centroid index on ties
    labels = np.argmin(acc, axis=1).astype(np.int64) if k else np.zeros(n, np.int64)
    return labels, acc[np.arange(n), labels]


def sq_dist_to(X: np.ndarray, C: np.ndarray, labels: np.ndarray) -> np.ndarray:
    sel = C[labels]
    acc = np.zeros(X.shape[0], dtype=np.float64)
    for j in range(X.shape[1]):
        diff = X[:, j] - sel[:, j]
        acc += diff * diff
    return acc


def centroid_sums(X: np.ndarray, labels: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    sums = np.zeros((k, X.shape[1]), dtype=np.float64)
    np.add.at(sums, labels, X)  # unbuffered, applied in row order
    counts = np.bincount(labels, minlength=k).astype(np.int64)
    return sums, counts


def adaptive_avg_pool(fmap: np.ndarray, g: int) -> np.ndarray:
    nc, h, w = fmap.shape
    out = np.empty((nc, g, g), dtype=np.float64)
    for bi in range(g):
        r0, r1 = (bi * h) // g, -((-(bi + 1) * h) // g)
        for bj in range(g):
            c0, c1 = (bj * w) // g, -((-(bj + 1) * w) // g)
            out[:, bi, bj] = fmap[:, r0:r1, c0:c1].mean(axis=(1, 2))
    return out
