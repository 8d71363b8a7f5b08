"""Experiment configuration: dataclasses, file loading and ``key=value`` overrides.

Every key has a default, so an empty file is a valid (desk-scale) config.
Files may be JSON (``.json``) or TOML (anything else).
"""
from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Iterable

from ._util import derive_seed
from .deform import DeformConfig
from .errors import BudgetError, ConfigError
from .net import NetConfig
from .seg import SegConfig
from .ssl import SSLConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

METHODS = ("representative", "random")
DATA_SOURCES = ("synth", "dir", "manifest")


@dataclass(frozen=True)
class DataConfig:
    source: str = "synth"
    n: int = 500
    size: tuple[int, int] = (64, 64)
    synth_seed: int = 0
    images: str | None = None
    masks: str | None = None
    manifest: str | None = None
    workers: int = 1

    def __post_init__(self):
        if self.source not in DATA_SOURCES:
            raise ConfigError(f"data.source must be one of {DATA_SOURCES}, got {self.source!r}")
        object.__setattr__(self, "size", tuple(int(v) for v in self.size))
        if len(self.size) != 2:
            raise ConfigError("data.size must be [H, W]")
        if self.source == "dir" and not self.images:
            raise ConfigError("data.images is required when data.source = 'dir'")
        if self.source == "manifest" and not self.manifest:
            raise ConfigError("data.manifest is required when data.source = 'manifest'")


@dataclass(frozen=True)
class SplitConfig:
    pool_size: int = 400
    test_size: int = 100
    pool_ids_file: str | None = None
    test_ids_file: str | None = None


@dataclass(frozen=True)
class Seeds:
    """``global`` seeds everything; any other seed left unset is derived from it."""

    global_: int = 0
    split: int | None = None
    ssl: int | None = None
    kmeans: int | None = None
    selection: int | None = None
    training: int | None = None

    def resolve(self, name: str) -> int:
        value = getattr(self, name)
        return int(value) if value is not None else derive_seed(self.global_, name)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["global"] = d.pop("global_")
        return d


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "desk"
    method: str = "representative"
    warm_start: bool = False
    C: int = 40
    batch: int = 10
    T: int = 4
    k: int = 5
    g: int = 2
    restarts: int = 10
    kmeans_init: str = "k-means++"
    kmeans_max_iter: int = 300
    recluster: bool = False
    transfer_scope: str = "full"
    standardize_features: bool = False
    deterministic: bool = False
    data: DataConfig = field(default_factory=DataConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    net: NetConfig = field(default_factory=NetConfig)
    ssl: SSLConfig = field(default_factory=SSLConfig)
    seg: SegConfig = field(default_factory=SegConfig)
    seeds: Seeds = field(default_factory=Seeds)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.transfer_scope not in ("full", "encoder"):
            raise ConfigError("transfer_scope must be 'full' or 'encoder'")
        for name in ("C", "batch", "k", "g", "restarts", "kmeans_max_iter"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.T < 0:
            raise ConfigError("T must be >= 0")
        self.net.check_input(self.data.size)
        bott = self.net.bottleneck_shape(self.data.size)
        if self.g > min(bott[1:]):
            raise ConfigError(f"g={self.g} exceeds the {bott[1]}x{bott[2]} bottleneck")
        if self.data.source == "synth" and self.split.pool_size + self.split.test_size > self.data.n:
            raise BudgetError(f"split {self.split.pool_size}+{self.split.test_size} exceeds data.n={self.data.n}")
        if self.C + self.T * self.batch > self.split.pool_size:
            raise BudgetError(f"C + T*batch = {self.C + self.T * self.batch} exceeds pool_size={self.split.pool_size}")
        if self.k > self.split.pool_size:
            raise BudgetError(f"k={self.k} exceeds pool_size={self.split.pool_size}")

    @property
    def arm(self) -> str:
        return f"{self.method}_{'warm' if self.warm_start else 'cold'}"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = self.seeds.to_dict()
        return d

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seeds=replace(self.seeds, global_=int(seed)))

    def with_(self, **overrides) -> "ExperimentConfig":
        return from_dict(apply_overrides(self.to_dict(), [f"{k}={json.dumps(v)}" for k, v in overrides.items()]))


_NESTED = {"data": DataConfig, "split": SplitConfig, "net": NetConfig, "seg": SegConfig}


def _construct(cls, d: Any, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where or 'config'} must be a table/object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {unknown}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"bad value in {where or 'config'}: {exc}") from exc


def from_dict(d: dict) -> ExperimentConfig:
    d = dict(d)
    kwargs: dict[str, Any] = {}
    for key, cls in _NESTED.items():
        if key in d:
            kwargs[key] = _construct(cls, d.pop(key), key)
    if "ssl" in d:
        ssl = dict(d.pop("ssl"))
        if "deform" in ssl:
            ssl["deform"] = _construct(DeformConfig, ssl["deform"], "ssl.deform")
        kwargs["ssl"] = _construct(SSLConfig, ssl, "ssl")
    if "seeds" in d:
        seeds = dict(d.pop("seeds"))
        if "global" in seeds:
            seeds["global_"] = seeds.pop("global")
        kwargs["seeds"] = _construct(Seeds, seeds, "seeds")
    kwargs.update(d)
    return _construct(ExperimentConfig, kwargs, "")


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(d: dict, overrides: Iterable[str]) -> dict:
    """Apply ``a.b.c=value`` assignments to a nested dict (values parsed as JSON when possible)."""
    d = json.loads(json.dumps(d))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, _, raw = item.partition("=")
        parts = key.strip().split(".")
        node = d
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r}: {p!r} is not a table")
        node[parts[-1]] = _parse_value(raw.strip())
    return d


def read_config_file(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        return json.loads(text) if path.suffix == ".json" else tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc


def load_config(path=None, overrides: Iterable[str] = ()) -> ExperimentConfig:
    base = read_config_file(path) if path else {}
    return from_dict(apply_overrides(base, overrides))
