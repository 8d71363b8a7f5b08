"""Bottleneck feature extraction and the binary feature store.

Feature store layout (little-endian)::

    b"FEAT" | u32 version | u32 N | u32 d | u32 g
    | N x (u32 byte length, utf-8 ID) | N*d float32, row-major
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import DataError
from .imaging import Dataset
from .net import UNet, bottleneck

FEAT_MAGIC = b"FEAT"
FEAT_VERSION = 1


@dataclass(frozen=True)
class FeatureMatrix:
    """N x d float32 feature rows keyed by sample ID, kept in ID order."""

    rows: np.ndarray
    ids: tuple[str, ...]
    g: int

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float32)
        if rows.ndim != 2 or rows.shape[0] != len(self.ids):
            raise DataError(f"rows {rows.shape} do not align with {len(self.ids)} IDs")
        ids = tuple(str(i) for i in self.ids)
        if len(set(ids)) != len(ids):
            raise DataError("duplicate IDs in feature matrix")
        order = sorted(range(len(ids)), key=ids.__getitem__)
        if order != list(range(len(ids))):
            rows = rows[order]
            ids = tuple(ids[i] for i in order)
        rows = np.ascontiguousarray(rows)
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "g", int(self.g))

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]

    def standardized(self) -> "FeatureMatrix":
        """Per-dimension zero-mean, unit-variance copy (constant columns left at zero)."""
        x = self.rows.astype(np.float64)
        sd = x.std(axis=0)
        sd[sd == 0] = 1.0
        return FeatureMatrix(((x - x.mean(axis=0)) / sd).astype(np.float32), self.ids, self.g)


def adaptive_avg_pool(fmap, g: int) -> np.ndarray:
    """Average a C x h x w map into C x g x g bins.

    Bin i spans rows ``floor(i*h/g)`` to ``ceil((i+1)*h/g)`` (likewise for
    columns), so bins are exact equal blocks whenever g divides h and w.
    """
    fmap = np.asarray(fmap)
    if fmap.ndim != 3:
        raise ValueError(f"expected a C x h x w map, got shape {fmap.shape}")
    _, h, w = fmap.shape
    if not 1 <= g <= min(h, w):
        raise ValueError(f"pool grid {g} must satisfy 1 <= g <= min(h, w) = {min(h, w)}")
    return kernels.adaptive_avg_pool(fmap, g)


def extract(model: UNet, dataset: Dataset, g: int, batch_size: int = 32,
            standardize: bool = False) -> FeatureMatrix:
    """Pool and flatten (channel, row, col) the bottleneck map of every image."""
    model.config.check_input(dataset.working_size)
    images = dataset.images()
    rows = []
    for start in range(0, len(images), batch_size):
        maps = bottleneck(model, images[start:start + batch_size], size=dataset.working_size)
        rows.extend(adaptive_avg_pool(m, g).ravel() for m in maps)
    fm = FeatureMatrix(np.asarray(rows, dtype=np.float32).reshape(len(images), -1), tuple(dataset.ids), g)
    return fm.standardized() if standardize else fm


def write_features(fm: FeatureMatrix, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(FEAT_MAGIC)
        f.write(struct.pack("<IIII", FEAT_VERSION, fm.n, fm.d, fm.g))
        for sid in fm.ids:
            raw = sid.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
        f.write(np.ascontiguousarray(fm.rows, dtype="<f4").tobytes())
    tmp.replace(path)
    return path


def read_features(path) -> FeatureMatrix:
    data = Path(path).read_bytes()
    if data[:4] != FEAT_MAGIC:
        raise DataError(f"{path}: not a feature store")
    version, n, d, g = struct.unpack_from("<IIII", data, 4)
    if version != FEAT_VERSION:
        raise DataError(f"{path}: unsupported feature store version {version}")
    off = 20
    ids = []
    for _ in range(n):
        (length,) = struct.unpack_from("<I", data, off)
        off += 4
        ids.append(data[off:off + length].decode("utf-8"))
        off += length
    if len(data) - off != 4 * n * d:
        raise DataError(f"{path}: expected {4 * n * d} bytes of features, found {len(data) - off}")
    rows = np.frombuffer(data, dtype="<f4", count=n * d, offset=off).reshape(n, d).astype(np.float32)
    return FeatureMatrix(rows, tuple(ids), g)
