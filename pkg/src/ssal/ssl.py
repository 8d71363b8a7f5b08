"""Self-supervised pretraining: reconstruct each image from a deformed copy of itself."""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from ._util import derive_seed
from .deform import DeformConfig, deform
from .errors import ConfigError, DataError
from .imaging import Dataset
from .net import NetConfig, UNet, as_batch, build

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SSLConfig:
    epochs: int = 10
    batch_size: int = 8
    learning_rate: float = 1e-3
    seed: int = 0
    deform: DeformConfig = field(default_factory=DeformConfig)

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("ssl.epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("ssl.batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("ssl.learning_rate must be > 0")
        if isinstance(self.deform, dict):
            object.__setattr__(self, "deform", DeformConfig(**self.deform))

    def to_dict(self) -> dict:
        return asdict(self)


def reconstruction_loss(pred, target) -> torch.Tensor:
    """Mean squared error over all pixels."""
    pred = torch.as_tensor(pred)
    target = torch.as_tensor(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    return ((pred - target) ** 2).mean()


def deformed_input(image: np.ndarray, sample_id: str, epoch: int, cfg: SSLConfig) -> np.ndarray:
    rng = np.random.default_rng(derive_seed(cfg.seed, epoch, sample_id))
    return deform(image, rng, cfg.deform)


def pretrain(dataset: Dataset, net_cfg: NetConfig, cfg: SSLConfig,
             on_epoch: Callable[[int, float], None] | None = None) -> tuple[UNet, list[float]]:
    """Train a reconstruction-head U-Net on ``deform(x) -> x`` pairs.

    Returns the model and the per-epoch mean training loss.
    """
    if len(dataset) == 0:
        raise DataError("cannot pretrain on an empty dataset")
    if net_cfg.head != "reconstruction":
        raise ConfigError(f"pretraining needs head='reconstruction', got {net_cfg.head!r}")
    model = build(net_cfg, derive_seed(cfg.seed, "ssl-init"), input_size=dataset.working_size)
    model.train()
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    images = dataset.images()
    ids = dataset.ids
    history: list[float] = []
    for epoch in range(cfg.epochs):
        order = np.random.default_rng(derive_seed(cfg.seed, "ssl-order", epoch)).permutation(len(ids))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            inputs = np.stack([deformed_input(images[i], ids[i], epoch, cfg) for i in idx])
            target = as_batch(images[idx])
            opt.zero_grad()
            loss = reconstruction_loss(model(as_batch(inputs)), target)
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        history.append(total / len(ids))
        log.info("ssl epoch %d/%d loss %.5f", epoch + 1, cfg.epochs, history[-1])
        if on_epoch is not None:
            on_epoch(epoch, history[-1])
    return model, history


def write_loss_log(history: list[float], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "mean_loss"])
        for i, v in enumerate(history, start=1):
            w.writerow([i, repr(float(v))])
    return path
