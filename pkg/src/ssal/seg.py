"""Segmentation: cross-entropy + soft Dice training and Dice evaluation."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from ._util import derive_seed
from .errors import ConfigError, DataError
from .imaging import Dataset
from .net import UNet, as_batch

log = logging.getLogger(__name__)

PROB_EPS = 1e-7


@dataclass(frozen=True)
class SegConfig:
    base_epochs: int = 10
    iter_epochs: int = 2
    batch_size: int = 4
    learning_rate: float = 1e-3
    seed: int = 0
    threshold: float = 0.5
    smooth: float = 1.0

    def __post_init__(self):
        if self.base_epochs < 1 or self.iter_epochs < 1:
            raise ConfigError("seg epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("seg.batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("seg.learning_rate must be > 0")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError("seg.threshold must lie in (0, 1)")
        if not self.smooth > 0:
            raise ConfigError("seg.smooth must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)


def dice_coefficient(pred, gt) -> float:
    """Hard Dice ``2|P&G| / (|P|+|G|)``; two empty masks score 1.0."""
    p = np.asarray(pred).astype(bool)
    g = np.asarray(gt).astype(bool)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")
    denom = int(p.sum()) + int(g.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int(np.logical_and(p, g).sum()) / denom


def _pair(probs, gt):
    probs = torch.as_tensor(probs)
    if not probs.is_floating_point():
        probs = probs.double()
    gt = torch.as_tensor(gt).to(probs.dtype)
    if probs.shape != gt.shape:
        raise ValueError(f"shape mismatch: {tuple(probs.shape)} vs {tuple(gt.shape)}")
    return probs, gt


def soft_dice_loss(probs, gt, smooth: float = 1.0) -> torch.Tensor:
    """``1 - (2 sum(p g) + s) / (sum p + sum g + s)`` per image, averaged over leading dims."""
    if not smooth > 0:
        raise ValueError("smooth must be > 0")
    probs, gt = _pair(probs, gt)
    inter = (probs * gt).sum(dim=(-2, -1))
    total = probs.sum(dim=(-2, -1)) + gt.sum(dim=(-2, -1))
    return (1.0 - (2.0 * inter + smooth) / (total + smooth)).mean()


def cross_entropy(probs, gt) -> torch.Tensor:
    """Pixel-mean binary cross-entropy; probabilities clamped to [1e-7, 1 - 1e-7]."""
    probs, gt = _pair(probs, gt)
    p = probs.clamp(PROB_EPS, 1.0 - PROB_EPS)
    return -(gt * torch.log(p) + (1.0 - gt) * torch.log1p(-p)).mean()


def seg_loss(probs, gt, smooth: float = 1.0) -> torch.Tensor:
    return cross_entropy(probs, gt) + soft_dice_loss(probs, gt, smooth)


def train_seg(model: UNet, labeled: Dataset, cfg: SegConfig, epochs: int, stage: int = 0) -> tuple[UNet, list[float]]:
    """Train ``model`` in place for exactly ``epochs`` epochs on ``labeled``.

    ``stage`` salts the shuffling seed so successive active-learning rounds
    see different batch orders. A fresh optimizer is created per call.
    """
    if epochs < 1:
        raise ConfigError("epochs must be >= 1")
    if len(labeled) == 0:
        raise DataError("cannot train on an empty labeled set")
    for s in labeled:
        if s.mask is None:
            raise DataError(f"sample {s.id} has no mask")
    images, masks = labeled.images(), labeled.masks()
    model.train()
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    history = []
    for epoch in range(epochs):
        order = np.random.default_rng(derive_seed(cfg.seed, "seg-order", stage, epoch)).permutation(len(labeled))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            opt.zero_grad()
            loss = seg_loss(model(as_batch(images[idx])), as_batch(masks[idx]), cfg.smooth)
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        history.append(total / len(labeled))
        log.info("seg stage %d epoch %d/%d loss %.5f", stage, epoch + 1, epochs, history[-1])
    return model, history


@torch.no_grad()
def predict(model: UNet, dataset: Dataset, batch_size: int = 32) -> np.ndarray:
    """Foreground probabilities, shape (N, H, W), in dataset (ID) order."""
    was_training = model.training
    model.eval()
    images = dataset.images()
    out = []
    try:
        for start in range(0, len(images), batch_size):
            out.append(model(as_batch(images[start:start + batch_size]))[:, 0].numpy())
    finally:
        model.train(was_training)
    return np.concatenate(out) if out else np.zeros((0, *dataset.working_size), np.float32)


def evaluate_per_sample(model: UNet, test: Dataset, threshold: float = 0.5) -> dict[str, float]:
    if len(test) == 0:
        raise DataError("empty test set")
    masks = test.masks()
    probs = predict(model, test)
    return {sid: dice_coefficient(p > threshold, m) for sid, p, m in zip(test.ids, probs, masks)}


def mean_dice(per_sample: dict[str, float]) -> float:
    if not per_sample:
        raise DataError("empty test set")
    return float(np.mean(np.array([per_sample[k] for k in sorted(per_sample)], dtype=np.float64)))


def evaluate(model: UNet, test: Dataset, threshold: float = 0.5) -> float:
    """Mean Dice of thresholded predictions over the test set."""
    return mean_dice(evaluate_per_sample(model, test, threshold))


def write_eval_report(per_sample: dict[str, float], out_dir, threshold: float) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = out_dir / "eval.csv", out_dir / "eval.json"
    with open(csv_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sample_id", "dice"])
        for sid in sorted(per_sample):
            w.writerow([sid, repr(per_sample[sid])])
    summary = {"mean_dice": mean_dice(per_sample), "n": len(per_sample), "threshold": threshold}
    json_path.write_text(json.dumps(summary, indent=2))
    return csv_path, json_path
