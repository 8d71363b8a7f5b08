"""Stochastic image corruptions for the reconstruction pretext task.

Four operators (nonlinear intensity remap, local pixel shuffling, in-painting
and out-painting) plus :func:`deform`, which composes them at random. Every
operator maps an image in [0, 1] to an image in [0, 1] and is a pure function
of ``(image, rng state, config)``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError

BEZIER_SAMPLES = 10_000

Rect = tuple[int, int, int, int]  # (top, left, height, width)


@dataclass(frozen=True)
class DeformConfig:
    p_nonlinear: float = 0.9
    p_shuffle: float = 0.5
    p_paint: float = 0.9
    p_inpaint_given_paint: float = 0.8
    shuffle_windows: int = 100
    shuffle_max_frac: float = 1 / 8
    paint_patch_count_range: tuple[int, int] = (1, 5)
    paint_patch_frac_range: tuple[float, float] = (1 / 6, 1 / 3)
    outpaint_keep_frac_range: tuple[float, float] = (0.5, 0.75)

    def __post_init__(self):
        for name in ("p_nonlinear", "p_shuffle", "p_paint", "p_inpaint_given_paint"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"deform.{name} must be a probability, got {p}")
        if self.shuffle_windows < 1:
            raise ConfigError("deform.shuffle_windows must be >= 1")
        if not 0.0 < self.shuffle_max_frac < 1.0:
            raise ConfigError("deform.shuffle_max_frac must lie in (0, 1)")
        lo, hi = self.paint_patch_count_range
        if not 1 <= lo <= hi:
            raise ConfigError(f"deform.paint_patch_count_range invalid: {(lo, hi)}")
        for name in ("paint_patch_frac_range", "outpaint_keep_frac_range"):
            a, b = getattr(self, name)
            if not 0.0 < a <= b < 1.0:
                raise ConfigError(f"deform.{name} must satisfy 0 < min <= max < 1, got {(a, b)}")
        if self.outpaint_keep_frac_range[0] < 0.5:
            raise ConfigError("deform.outpaint_keep_frac_range min must be >= 0.5 (retain >= 25% of the image)")
        object.__setattr__(self, "paint_patch_count_range", tuple(int(v) for v in self.paint_patch_count_range))
        object.__setattr__(self, "paint_patch_frac_range", tuple(float(v) for v in self.paint_patch_frac_range))
        object.__setattr__(self, "outpaint_keep_frac_range", tuple(float(v) for v in self.outpaint_keep_frac_range))

    def to_dict(self) -> dict:
        return asdict(self)


def bezier_curve(points: np.ndarray, n: int = BEZIER_SAMPLES) -> tuple[np.ndarray, np.ndarray]:
    """Sample a cubic Bezier curve with control ``points`` (4 x 2) at ``n`` values of t."""
    p = np.asarray(points, dtype=np.float64)
    t = np.linspace(0.0, 1.0, n)
    s = 1.0 - t
    basis = np.stack([s**3, 3 * s**2 * t, 3 * s * t**2, t**3])
    return basis.T @ p[:, 0], basis.T @ p[:, 1]


def bezier_map(img: np.ndarray, c1, c2, flip: bool = False) -> np.ndarray:
    """Remap intensities through the Bezier value curve.

    Endpoints are (0, 0) and (1, 1), or (0, 1) and (1, 0) when ``flip``.
    The x coordinate of a cubic with x-controls in [0, 1] is monotone in t,
    so the curve is inverted by linear interpolation on the sampled points.
    """
    start, end = ((0.0, 1.0), (1.0, 0.0)) if flip else ((0.0, 0.0), (1.0, 1.0))
    xs, ys = bezier_curve(np.array([start, c1, c2, end]))
    xs = np.maximum.accumulate(xs)  # guard against round-off wiggles
    out = np.interp(np.asarray(img, dtype=np.float64), xs, ys)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def nonlinear_intensity(img: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    flip = bool(rng.random() < 0.5)
    c1, c2 = rng.random(2), rng.random(2)
    return bezier_map(img, c1, c2, flip)


def local_shuffle(img: np.ndarray, rng: np.random.Generator, cfg: DeformConfig) -> np.ndarray:
    """Permute the pixels inside ``cfg.shuffle_windows`` random rectangles, one after another."""
    h, w = img.shape
    max_side = math.floor(cfg.shuffle_max_frac * min(h, w))
    if max_side < 2:
        raise ConfigError(f"shuffle window max side {max_side} < 2 for a {h}x{w} image")
    out = np.array(img, dtype=np.float32, copy=True)
    for _ in range(cfg.shuffle_windows):
        bh = int(rng.integers(2, max_side + 1))
        bw = int(rng.integers(2, max_side + 1))
        top = int(rng.integers(0, h - bh + 1))
        left = int(rng.integers(0, w - bw + 1))
        window = out[top:top + bh, left:left + bw]
        out[top:top + bh, left:left + bw] = rng.permutation(window.ravel()).reshape(bh, bw)
    return out


def _interior_rect(shape, frac_range, rng: np.random.Generator, rounding=round) -> Rect:
    h, w = shape
    side = min(h, w)
    ph = max(1, int(rounding(rng.uniform(*frac_range) * side)))
    pw = max(1, int(rounding(rng.uniform(*frac_range) * side)))
    if ph > h - 2 or pw > w - 2:
        raise ConfigError(f"patch {ph}x{pw} does not fit strictly inside a {h}x{w} image")
    top = int(rng.integers(1, h - ph))
    left = int(rng.integers(1, w - pw))
    return top, left, ph, pw


def inpaint_regions(shape, rng: np.random.Generator, cfg: DeformConfig) -> list[Rect]:
    lo, hi = cfg.paint_patch_count_range
    count = int(rng.integers(lo, hi + 1))
    return [_interior_rect(shape, cfg.paint_patch_frac_range, rng) for _ in range(count)]


def outpaint_regions(shape, rng: np.random.Generator, cfg: DeformConfig) -> list[Rect]:
    # ceil keeps the first retained block at >= 25% of the area
    rects = [_interior_rect(shape, cfg.outpaint_keep_frac_range, rng, rounding=math.ceil)]
    if rng.random() < 0.5:
        rects.append(_interior_rect(shape, cfg.outpaint_keep_frac_range, rng, rounding=math.ceil))
    return rects


def rect_mask(shape, rects: list[Rect]) -> np.ndarray:
    m = np.zeros(shape, dtype=bool)
    for top, left, ph, pw in rects:
        m[top:top + ph, left:left + pw] = True
    return m


def inpaint(img: np.ndarray, rng: np.random.Generator, cfg: DeformConfig) -> np.ndarray:
    """Fill random interior rectangles with uniform noise."""
    rects = inpaint_regions(img.shape, rng, cfg)
    out = np.array(img, dtype=np.float32, copy=True)
    for top, left, ph, pw in rects:
        out[top:top + ph, left:left + pw] = rng.random((ph, pw), dtype=np.float32)
    return out


def outpaint(img: np.ndarray, rng: np.random.Generator, cfg: DeformConfig) -> np.ndarray:
    """Replace everything but one or two interior rectangles with uniform noise."""
    rects = outpaint_regions(img.shape, rng, cfg)
    keep = rect_mask(img.shape, rects)
    out = rng.random(img.shape, dtype=np.float32)
    out[keep] = np.asarray(img, dtype=np.float32)[keep]
    return out


def deform_traced(img: np.ndarray, rng: np.random.Generator, cfg: DeformConfig) -> tuple[np.ndarray, list[str]]:
    """:func:`deform` that also returns the names of the operators applied, in order."""
    applied: list[str] = []
    out = np.asarray(img, dtype=np.float32)
    if rng.random() < cfg.p_nonlinear:
        out = nonlinear_intensity(out, rng)
        applied.append("nonlinear")
    if rng.random() < cfg.p_shuffle:
        out = local_shuffle(out, rng, cfg)
        applied.append("shuffle")
    if rng.random() < cfg.p_paint:
        if rng.random() < cfg.p_inpaint_given_paint:
            out = inpaint(out, rng, cfg)
            applied.append("inpaint")
        else:
            out = outpaint(out, rng, cfg)
            applied.append("outpaint")
    return out, applied


def deform(img: np.ndarray, rng: np.random.Generator, cfg: DeformConfig) -> np.ndarray:
    return deform_traced(img, rng, cfg)[0]
