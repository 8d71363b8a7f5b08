"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy fallback.
Set ``SSAL_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

_compiled = None
if not os.environ.get("SSAL_PURE_PYTHON"):
    try:
        from . import _kernels as _compiled  # type: ignore[attr-defined,no-redef]
    except ImportError:
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _kernels_py


def _f64(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def assign_sq(X, C):
    """Return ``(labels, squared_distances)`` of each row's nearest centroid."""
    X, C = _f64(X), _f64(C)
    if X.ndim != 2 or C.ndim != 2 or X.shape[1] != C.shape[1]:
        raise ValueError(f"dimension mismatch: features {X.shape}, centroids {C.shape}")
    return _impl.assign_sq(X, C)


def sq_dist_to(X, C, labels):
    return _impl.sq_dist_to(_f64(X), _f64(C), np.ascontiguousarray(labels, dtype=np.int64))


def centroid_sums(X, labels, k: int):
    return _impl.centroid_sums(_f64(X), np.ascontiguousarray(labels, dtype=np.int64), int(k))


def adaptive_avg_pool(fmap, g: int) -> np.ndarray:
    fmap = _f64(fmap)
    return _impl.adaptive_avg_pool(fmap, int(g))
