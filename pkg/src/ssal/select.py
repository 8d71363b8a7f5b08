"""Representative sample selection and the random baseline.

Budgets are split across clusters in proportion to cluster size (largest
remainder apportionment); within a cluster, members closest to the centroid
are taken first. Later rounds continue down the same per-cluster rankings.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .cluster import ClusterModel, kmeans_best
from .errors import BudgetError, DataError
from .features import FeatureMatrix

Ranking = tuple[tuple[str, float], ...]


def allocate(cluster_sizes: Sequence[int], budget: int) -> list[int]:
    """Integer per-cluster budgets summing exactly to ``budget``.

    Each cluster gets ``floor(budget * N_i / N)``; the leftover goes one by one
    to the largest fractional remainders (ties to the lowest index), skipping
    clusters that are already full.
    """
    sizes = [int(s) for s in cluster_sizes]
    budget = int(budget)
    if any(s < 0 for s in sizes):
        raise ValueError(f"cluster sizes must be >= 0: {sizes}")
    total = sum(sizes)
    if budget < 0 or budget > total:
        raise BudgetError(f"budget {budget} outside [0, {total}]")
    if total == 0:
        return [0] * len(sizes)
    counts = [budget * s // total for s in sizes]
    remainders = [budget * s % total for s in sizes]  # exact integer numerators
    left = budget - sum(counts)
    order = sorted(range(len(sizes)), key=lambda i: (-remainders[i], i))
    while left:
        for i in order:
            if left and counts[i] < sizes[i]:
                counts[i] += 1
                left -= 1
    return counts


@dataclass(frozen=True)
class Chosen:
    id: str
    cluster: int | None
    distance: float | None
    rank: int | None


@dataclass(frozen=True)
class SelectionResult:
    chosen: tuple[Chosen, ...]
    budget: int
    method: str
    iteration: int = 0

    @property
    def ids(self) -> list[str]:
        return [c.id for c in self.chosen]

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "budget": self.budget,
            "iteration": self.iteration,
            "chosen": [{"id": c.id, "cluster": c.cluster, "distance": c.distance, "rank": c.rank}
                       for c in self.chosen],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_json())
        return path

    @classmethod
    def from_dict(cls, d: dict) -> "SelectionResult":
        chosen = tuple(Chosen(c["id"], c.get("cluster"), c.get("distance"), c.get("rank")) for c in d["chosen"])
        return cls(chosen, int(d["budget"]), d["method"], int(d.get("iteration", 0)))

    @classmethod
    def load(cls, path) -> "SelectionResult":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class SelectionState:
    labeled_ids: tuple[str, ...]
    pool_ids: tuple[str, ...]
    rankings: tuple[Ranking, ...] = ()
    iteration: int = 0
    method: str = "representative"
    _labeled_set: frozenset = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        labeled = frozenset(self.labeled_ids)
        if len(labeled) != len(self.labeled_ids):
            raise DataError("duplicate IDs in labeled set")
        if labeled & set(self.pool_ids):
            raise DataError("labeled and pool sets overlap")
        object.__setattr__(self, "pool_ids", tuple(sorted(self.pool_ids)))
        object.__setattr__(self, "_labeled_set", labeled)

    @property
    def cluster_sizes(self) -> list[int]:
        return [len(r) for r in self.rankings]

    def remaining(self) -> list[list[tuple[int, str, float]]]:
        """Per cluster, (rank, id, distance) of members still in the pool."""
        return [[(rank, sid, dist) for rank, (sid, dist) in enumerate(r) if sid not in self._labeled_set]
                for r in self.rankings]

    def advance(self, ids: Sequence[str]) -> "SelectionState":
        """Move ``ids`` from the pool to the labeled set and bump the iteration."""
        ids = list(ids)
        pool = set(self.pool_ids)
        missing = [i for i in ids if i not in pool]
        if missing or len(set(ids)) != len(ids):
            raise DataError(f"cannot label IDs not in the pool (or repeated): {missing[:10]}")
        taken = set(ids)
        return replace(self, labeled_ids=self.labeled_ids + tuple(ids),
                       pool_ids=tuple(i for i in self.pool_ids if i not in taken),
                       iteration=self.iteration + 1)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "iteration": self.iteration,
            "labeled_ids": list(self.labeled_ids),
            "pool_ids": list(self.pool_ids),
            "rankings": [[[sid, dist] for sid, dist in r] for r in self.rankings],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SelectionState":
        return cls(
            labeled_ids=tuple(d["labeled_ids"]),
            pool_ids=tuple(d["pool_ids"]),
            rankings=tuple(tuple((sid, float(dist)) for sid, dist in r) for r in d["rankings"]),
            iteration=int(d["iteration"]),
            method=d["method"],
        )

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "SelectionState":
        return cls.from_dict(json.loads(Path(path).read_text()))


def rank_representatives(features: FeatureMatrix, cmodel: ClusterModel) -> tuple[Ranking, ...]:
    """Per cluster, members sorted by L2 distance to the centroid (ties by ID)."""
    if cmodel.ids and tuple(cmodel.ids) != tuple(features.ids):
        raise DataError("cluster model and feature matrix cover different IDs")
    if len(cmodel.assignment) != features.n:
        raise DataError("cluster model and feature matrix differ in size")
    d2 = kernels.sq_dist_to(features.rows, cmodel.centroids, cmodel.assignment)
    dist = np.sqrt(d2)
    members: list[list[tuple[float, str]]] = [[] for _ in range(cmodel.k)]
    for sid, c, d in zip(features.ids, cmodel.assignment.tolist(), dist.tolist()):
        members[c].append((d, sid))
    return tuple(tuple((sid, d) for d, sid in sorted(m)) for m in members)


def _take(state: SelectionState, budget: int, method: str) -> SelectionResult:
    remaining = state.remaining()
    quotas = allocate([len(r) for r in remaining], budget)
    chosen = []
    for c, (members, q) in enumerate(zip(remaining, quotas)):
        chosen.extend(Chosen(sid, c, dist, rank) for rank, sid, dist in members[:q])
    return SelectionResult(tuple(chosen), budget, method, state.iteration)


def select_from_model(features: FeatureMatrix, cmodel: ClusterModel, budget: int) -> tuple[SelectionResult, SelectionState]:
    if budget > features.n:
        raise BudgetError(f"budget {budget} exceeds the {features.n} available samples")
    rankings = rank_representatives(features, cmodel)
    start = SelectionState((), features.ids, rankings, 0, "representative")
    result = _take(start, budget, "representative")
    state = replace(start.advance(result.ids), iteration=0)
    return result, state


def select_initial(features: FeatureMatrix, k: int, budget: int, seed: int = 0, restarts: int = 10,
                   max_iter: int = 300, init: str = "k-means++") -> tuple[SelectionResult, SelectionState]:
    """Cluster, apportion ``budget`` by cluster size, and take the nearest members of each cluster."""
    if budget > features.n:
        raise BudgetError(f"budget {budget} exceeds the {features.n} available samples")
    cmodel = kmeans_best(features, k, seed, restarts, max_iter, init)
    return select_from_model(features, cmodel, budget)


def select_next_result(state: SelectionState, batch: int) -> tuple[SelectionResult, SelectionState]:
    if batch > len(state.pool_ids):
        raise BudgetError(f"batch {batch} exceeds the {len(state.pool_ids)} samples left in the pool")
    if not state.rankings:
        raise DataError("state carries no cluster rankings; use select_random for the random baseline")
    new_state = state.advance([])
    result = _take(new_state, batch, "representative")
    return result, replace(new_state.advance(result.ids), iteration=new_state.iteration)


def select_next(state: SelectionState, batch: int) -> tuple[list[str], SelectionState]:
    """Continue down each cluster's ranking; budgets follow the remaining cluster sizes."""
    result, new_state = select_next_result(state, batch)
    return result.ids, new_state


def select_random(pool_ids: Sequence[str], n: int, seed: int) -> list[str]:
    """Uniform sample without replacement from the ID-sorted pool."""
    pool = sorted(pool_ids)
    if n > len(pool):
        raise BudgetError(f"cannot draw {n} from a pool of {len(pool)}")
    if n < 0:
        raise BudgetError("n must be >= 0")
    idx = np.random.default_rng(seed).choice(len(pool), size=n, replace=False)
    return [pool[i] for i in idx]


def random_result(ids: Sequence[str], iteration: int) -> SelectionResult:
    return SelectionResult(tuple(Chosen(i, None, None, None) for i in ids), len(ids), "random", iteration)
