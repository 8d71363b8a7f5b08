"""K-means (Lloyd iterations, k-means++ seeding) over feature rows."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from ._util import derive_seed
from .errors import BudgetError, ConfigError
from .features import FeatureMatrix

INITS = ("k-means++", "random")


@dataclass(frozen=True)
class ClusterModel:
    centroids: np.ndarray  # k x d, float64
    assignment: np.ndarray  # N, int64
    distances: np.ndarray  # N, L2 distance to own centroid
    inertia: float
    ids: tuple[str, ...] = ()
    n_iter: int = 0
    converged: bool = True
    history: tuple[float, ...] = field(default=(), repr=False)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def sizes(self) -> list[int]:
        return np.bincount(self.assignment, minlength=self.k).tolist()

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "inertia": self.inertia,
            "n_iter": self.n_iter,
            "converged": self.converged,
            "ids": list(self.ids),
            "assignment": self.assignment.tolist(),
            "distances": self.distances.tolist(),
            "centroids": self.centroids.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClusterModel":
        return cls(
            centroids=np.asarray(d["centroids"], dtype=np.float64),
            assignment=np.asarray(d["assignment"], dtype=np.int64),
            distances=np.asarray(d["distances"], dtype=np.float64),
            inertia=float(d["inertia"]),
            ids=tuple(d.get("ids", ())),
            n_iter=int(d.get("n_iter", 0)),
            converged=bool(d.get("converged", True)),
        )

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict()))
        return path


def _rows(features) -> tuple[np.ndarray, tuple[str, ...]]:
    if isinstance(features, FeatureMatrix):
        return np.ascontiguousarray(features.rows, dtype=np.float64), features.ids
    x = np.ascontiguousarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"features must be 2-D, got shape {x.shape}")
    return x, ()


def assign(features, centroids) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-centroid labels (ties -> lowest index) and the L2 distances to them."""
    x, _ = _rows(features)
    labels, d2 = kernels.assign_sq(x, centroids)
    return labels, np.sqrt(d2)


def kmeans_plus_plus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """D^2-weighted seeding; returns the indices of the chosen rows."""
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = kernels.assign_sq(x, x[chosen])[1]
    for _ in range(1, k):
        total = d2.sum()
        r = rng.random()
        if total > 0:
            idx = int(np.searchsorted(np.cumsum(d2), r * total, side="right"))
            if idx >= n or d2[idx] == 0:  # round-off at the top end
                idx = int(np.flatnonzero(d2 > 0)[-1])
        else:
            # fewer distinct rows than k: fall back to uniform over unchosen rows
            free = np.setdiff1d(np.arange(n), chosen)
            idx = int(free[min(int(r * len(free)), len(free) - 1)])
        chosen.append(idx)
        d2 = np.minimum(d2, kernels.assign_sq(x, x[idx:idx + 1])[1])
    return np.asarray(chosen, dtype=np.int64)


def _repair_empty(labels: np.ndarray, d2: np.ndarray, k: int) -> None:
    """Give each empty cluster the point farthest from its centroid (in place)."""
    counts = np.bincount(labels, minlength=k)
    for c in np.flatnonzero(counts == 0):
        donors = np.flatnonzero(counts[labels] > 1)
        i = donors[np.argmax(d2[donors])]
        counts[labels[i]] -= 1
        labels[i] = c
        counts[c] = 1
        d2[i] = 0.0


def _means(x: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    sums, counts = kernels.centroid_sums(x, labels, k)
    return sums / counts[:, None]


def kmeans(features, k: int, seed: int = 0, max_iter: int = 300, init: str = "k-means++") -> ClusterModel:
    """One Lloyd run from a seeded initialization.

    Iterates until the assignment stops changing or ``max_iter`` centroid
    updates have been made. ``history`` holds the objective after every
    assignment step and is non-increasing.
    """
    x, ids = _rows(features)
    n = x.shape[0]
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if k > n:
        raise BudgetError(f"k={k} exceeds the number of samples {n}")
    if max_iter < 1:
        raise ConfigError("max_iter must be >= 1")
    if init not in INITS:
        raise ConfigError(f"init must be one of {INITS}, got {init!r}")

    rng = np.random.default_rng(seed)
    start = kmeans_plus_plus(x, k, rng) if init == "k-means++" else np.sort(rng.choice(n, k, replace=False))
    centroids = x[start].copy()
    labels, d2 = kernels.assign_sq(x, centroids)
    history = [float(d2.sum())]
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        _repair_empty(labels, d2, k)
        centroids = _means(x, labels, k)
        new_labels, d2 = kernels.assign_sq(x, centroids)
        history.append(float(d2.sum()))
        if np.array_equal(new_labels, labels):
            converged = True
            break
        labels = new_labels

    if not converged:
        _repair_empty(labels, d2, k)
        centroids = _means(x, labels, k)
        d2 = kernels.sq_dist_to(x, centroids, labels)
    return ClusterModel(
        centroids=centroids,
        assignment=labels,
        distances=np.sqrt(d2),
        inertia=float(d2.sum()),
        ids=ids,
        n_iter=n_iter,
        converged=converged,
        history=tuple(history),
    )


def kmeans_best(features, k: int, seed: int = 0, restarts: int = 10, max_iter: int = 300,
                init: str = "k-means++") -> ClusterModel:
    """Best (lowest inertia) of ``restarts`` seeded runs; earliest run wins ties."""
    if restarts < 1:
        raise ConfigError("restarts must be >= 1")
    best = None
    for r in range(restarts):
        model = kmeans(features, k, derive_seed(seed, "kmeans-restart", r), max_iter, init)
        if best is None or model.inertia < best.inertia:
            best = model
    return best


def recompute_inertia(features, model: ClusterModel) -> float:
    x, _ = _rows(features)
    return float(kernels.sq_dist_to(x, model.centroids, model.assignment).sum())
