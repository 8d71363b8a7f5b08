"""Dataset ingestion, preprocessing and a synthetic lesion generator.

Images are single-channel float32 arrays in [0, 1]; masks are uint8 arrays of
{0, 1}. A :class:`Dataset` is always ordered by sample ID.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image as PILImage
from scipy.ndimage import gaussian_filter

from .errors import DataError

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Sample:
    id: str
    image: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        if self.mask is not None and self.mask.shape != self.image.shape:
            raise DataError(f"{self.id}: mask shape {self.mask.shape} != image shape {self.image.shape}")


@dataclass(frozen=True)
class Dataset:
    name: str
    samples: tuple[Sample, ...]
    working_size: tuple[int, int]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ordered = tuple(sorted(self.samples, key=lambda s: s.id))
        ids = [s.id for s in ordered]
        if len(set(ids)) != len(ids):
            raise DataError(f"duplicate sample IDs in dataset {self.name!r}")
        for s in ordered:
            if s.image.shape != tuple(self.working_size):
                raise DataError(f"{s.id}: image shape {s.image.shape} != working size {self.working_size}")
        object.__setattr__(self, "samples", ordered)
        object.__setattr__(self, "working_size", tuple(int(v) for v in self.working_size))
        object.__setattr__(self, "_index", {sid: i for i, sid in enumerate(ids)})

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, sample_id: str) -> Sample:
        try:
            return self.samples[self._index[sample_id]]
        except KeyError:
            raise DataError(f"unknown sample ID {sample_id!r}") from None

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    @property
    def labeled(self) -> bool:
        return all(s.mask is not None for s in self.samples)

    def subset(self, ids: Iterable[str], name: str | None = None) -> "Dataset":
        return Dataset(name or self.name, tuple(self[i] for i in ids), self.working_size)

    def images(self) -> np.ndarray:
        """Stack of all images, shape (N, H, W)."""
        return np.stack([s.image for s in self.samples]) if self.samples else np.zeros((0, *self.working_size), np.float32)

    def masks(self) -> np.ndarray:
        missing = [s.id for s in self.samples if s.mask is None]
        if missing:
            raise DataError(f"samples without masks: {missing[:10]}{' ...' if len(missing) > 10 else ''}")
        return np.stack([s.mask for s in self.samples])

    def fingerprint(self) -> str:
        """Content hash of IDs, pixels and masks."""
        import hashlib

        h = hashlib.sha256()
        h.update(repr(self.working_size).encode())
        for s in self.samples:
            h.update(s.id.encode())
            h.update(np.ascontiguousarray(s.image).tobytes())
            if s.mask is not None:
                h.update(np.ascontiguousarray(s.mask).tobytes())
        return h.hexdigest()


def _to_gray(raw: np.ndarray) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim == 3:
        raw = raw.mean(axis=2)  # unweighted channel mean
    return raw


def preprocess(raw, target: Sequence[int], sample_id: str = "<array>") -> np.ndarray:
    """Grayscale, bilinear-resize to ``target`` and min-max normalize to [0, 1].

    A constant input (max == min) maps to an all-zero image.
    """
    raw = _to_gray(raw)
    if raw.size == 0 or raw.ndim != 2:
        raise DataError(f"{sample_id}: empty or malformed image of shape {raw.shape}")
    h, w = int(target[0]), int(target[1])
    if raw.shape != (h, w):
        resized = PILImage.fromarray(raw.astype(np.float32), mode="F").resize((w, h), PILImage.BILINEAR)
        raw = np.asarray(resized, dtype=np.float64)
    lo, hi = raw.min(), raw.max()
    if hi == lo:
        out = np.zeros((h, w), dtype=np.float32)
    else:
        out = ((raw - lo) / (hi - lo)).astype(np.float32)
    return np.clip(out, 0.0, 1.0)


def preprocess_mask(raw, target: Sequence[int], sample_id: str = "<array>") -> np.ndarray:
    """Binarize (nonzero = foreground) and nearest-neighbor resize."""
    raw = np.asarray(raw)
    if raw.size == 0:
        raise DataError(f"{sample_id}: empty mask")
    if raw.ndim == 3:
        raw = raw.max(axis=2)
    binary = (raw != 0).astype(np.uint8)
    h, w = int(target[0]), int(target[1])
    if binary.shape != (h, w):
        binary = np.asarray(PILImage.fromarray(binary * 255).resize((w, h), PILImage.NEAREST)) // 255
    return binary.astype(np.uint8)


def _read(path: Path) -> np.ndarray:
    try:
        with PILImage.open(path) as im:
            if im.mode in ("P", "LA", "PA", "CMYK", "YCbCr", "HSV"):
                im = im.convert("RGBA" if "A" in im.mode else "RGB")
            arr = np.asarray(im)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if arr.ndim == 3 and arr.shape[2] == 4:
        arr = arr[:, :, :3]  # drop alpha
    return arr


def _list_images(path: Path) -> dict[str, Path]:
    found: dict[str, Path] = {}
    for p in sorted(path.iterdir()):
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES:
            if p.stem in found:
                raise DataError(f"two files share sample ID {p.stem!r} in {path}")
            found[p.stem] = p
    return found


def _load_pairs(pairs: list[tuple[str, Path, Path | None]], target, workers: int) -> list[Sample]:
    def load_one(item):
        sid, ipath, mpath = item
        img = _frozen(preprocess(_read(ipath), target, sid))
        mask = None if mpath is None else _frozen(preprocess_mask(_read(mpath), target, sid))
        return Sample(sid, img, mask)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(load_one, pairs))
    return [load_one(p) for p in pairs]


def load_dir(images_path, masks_path=None, target: Sequence[int] = (64, 64), name: str | None = None,
             workers: int = 1) -> Dataset:
    """Load every image in a directory, pairing masks by filename stem."""
    images_path = Path(images_path)
    if not images_path.is_dir():
        raise DataError(f"image directory not found: {images_path}")
    images = _list_images(images_path)
    if not images:
        raise DataError(f"no images found in {images_path}")
    masks: dict[str, Path] = {}
    if masks_path is not None:
        masks_path = Path(masks_path)
        if not masks_path.is_dir():
            raise DataError(f"mask directory not found: {masks_path}")
        masks = _list_images(masks_path)
        missing = sorted(set(images) - set(masks))
        if missing:
            raise DataError(f"missing masks for {len(missing)} image(s): {missing}")
    pairs = [(sid, images[sid], masks.get(sid)) for sid in sorted(images)]
    return Dataset(name or images_path.name, tuple(_load_pairs(pairs, target, workers)), tuple(target))


def load_manifest(manifest_path, target: Sequence[int] = (64, 64), name: str | None = None,
                  workers: int = 1) -> Dataset:
    """Load a JSON manifest: ``[{"id", "image_path", "mask_path"?}, ...]``.

    Relative paths resolve against the manifest's directory.
    """
    manifest_path = Path(manifest_path)
    try:
        entries = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest {manifest_path}: {exc}") from exc
    if not isinstance(entries, list) or not entries:
        raise DataError(f"manifest {manifest_path} must be a nonempty JSON list")
    root = manifest_path.parent
    pairs = []
    for e in entries:
        try:
            sid = str(e["id"])
            ipath = root / e["image_path"]
        except (KeyError, TypeError) as exc:
            raise DataError(f"bad manifest entry {e!r}") from exc
        mpath = root / e["mask_path"] if e.get("mask_path") else None
        pairs.append((sid, ipath, mpath))
    pairs.sort(key=lambda p: p[0])
    return Dataset(name or manifest_path.stem, tuple(_load_pairs(pairs, target, workers)), tuple(target))


def write_dataset(dataset: Dataset, out_dir) -> Path:
    """Write 16-bit PNG images, 0/255 PNG masks and a manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    entries = []
    for s in dataset:
        img16 = np.round(np.asarray(s.image, dtype=np.float64) * 65535).astype(np.uint16)
        PILImage.fromarray(img16).save(out_dir / "images" / f"{s.id}.png")
        entry = {"id": s.id, "image_path": f"images/{s.id}.png"}
        if s.mask is not None:
            (out_dir / "masks").mkdir(exist_ok=True)
            PILImage.fromarray((s.mask * 255).astype(np.uint8)).save(out_dir / "masks" / f"{s.id}.png")
            entry["mask_path"] = f"masks/{s.id}.png"
        entries.append(entry)
    manifest = out_dir / "manifest.json"
    manifest.write_text(json.dumps(entries, indent=1))
    return manifest


_SYNTH_STYLES = (  # (frequency, background range, texture amplitude range, border blur range, hairs)
    (0.45, (0.55, 0.75), (0.02, 0.04), (0.01, 0.03), 0),  # light skin
    (0.25, (0.15, 0.35), (0.02, 0.04), (0.01, 0.03), 0),  # dark skin: the lesion clips to a flat floor
    (0.20, (0.50, 0.70), (0.06, 0.09), (0.04, 0.07), 0),  # coarse texture, fuzzy borders
    (0.10, (0.55, 0.75), (0.02, 0.04), (0.01, 0.03), 6),  # hair occlusion
)
# Lesions are always darker than the surrounding skin. With mixed polarity an
# intensity-inverted image is indistinguishable from another style after
# min-max scaling, which makes undoing the inversion in pretraining ill-posed.


def _ellipse(shape, rng: np.random.Generator) -> np.ndarray:
    h, w = shape
    side = min(h, w)
    a = max(rng.uniform(0.08, 0.3) * side, 1.5)
    b = max(rng.uniform(0.08, 0.3) * side, 1.5)
    theta = rng.uniform(0, np.pi)
    r = max(a, b) + 1
    cy = rng.uniform(r, h - r) if h > 2 * r else h / 2
    cx = rng.uniform(r, w - r) if w > 2 * r else w / 2
    yy, xx = np.mgrid[0:h, 0:w] + 0.5
    dy, dx = yy - cy, xx - cx
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def _spot(shape, rng: np.random.Generator) -> np.ndarray:
    """Small disc: a freckle-like distractor that is not part of the mask."""
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w] + 0.5
    cy, cx = rng.uniform(0, h), rng.uniform(0, w)
    return np.hypot(yy - cy, xx - cx) <= rng.uniform(0.02, 0.05) * min(h, w)


def _hair(shape, rng: np.random.Generator) -> np.ndarray:
    """Thin, slightly bent stroke across the image."""
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w] + 0.5
    y0, x0 = rng.uniform(0, h), rng.uniform(0, w)
    th = rng.uniform(0, np.pi)
    bend = rng.uniform(-1, 1) / max(h, w)
    u = (xx - x0) * np.cos(th) + (yy - y0) * np.sin(th)
    v = -(xx - x0) * np.sin(th) + (yy - y0) * np.cos(th)
    return np.abs(v - bend * u ** 2) <= 0.5 + 0.01 * min(h, w)


def synth_sample(index: int, size: Sequence[int], seed: int) -> Sample:
    h, w = int(size[0]), int(size[1])
    rng = np.random.default_rng([seed, index])
    probs = np.array([s[0] for s in _SYNTH_STYLES])
    _, bg_range, tex_range, blur_range, hairs = _SYNTH_STYLES[rng.choice(len(_SYNTH_STYLES), p=probs)]

    background = rng.uniform(*bg_range)
    contrast = rng.uniform(0.3, 0.45)
    smooth = gaussian_filter(rng.standard_normal((h, w)), sigma=max(h, w) / 16, mode="wrap")
    smooth /= smooth.std() + 1e-12
    texture = rng.uniform(*tex_range) * smooth + 0.02 * rng.standard_normal((h, w))

    mask = _ellipse((h, w), rng)
    if rng.random() < 0.5:
        mask |= _ellipse((h, w), rng)
    blurred = gaussian_filter(mask.astype(float), sigma=rng.uniform(*blur_range) * min(h, w))
    lesion = np.maximum(np.clip(2 * blurred, 0, 1), mask)  # full depth inside, soft halo outside
    raw = np.full((h, w), background) + texture - contrast * lesion

    clutter = np.zeros((h, w))
    for _ in range(rng.integers(0, 4)):
        clutter = np.maximum(clutter, rng.uniform(0.15, 0.25) * _spot((h, w), rng))
    for _ in range(hairs):
        clutter = np.maximum(clutter, rng.uniform(0.3, 0.4) * _hair((h, w), rng))
    raw = np.clip(raw - gaussian_filter(clutter, 0.7), 0.0, 1.0)

    sid = f"synth_{index:05d}"
    image = _frozen(preprocess(raw, (h, w), sid))
    return Sample(sid, image, _frozen(mask.astype(np.uint8)))


def synth_dataset(n: int, size: Sequence[int] = (64, 64), seed: int = 0, name: str = "synth",
                  offset: int = 0) -> Dataset:
    """Generate ``n`` textured images with one or two dark elliptical lesions each.

    Four appearance styles at unequal frequencies; freckle-like spots and (in
    one style) hairs add clutter outside the masks.

    Sample ``i`` depends only on ``(seed, offset + i)``, so the dataset is a
    pure function of its arguments.
    """
    if n < 1:
        raise DataError("synth_dataset needs n >= 1")
    if min(size) < 16:
        raise DataError(f"synth_dataset needs size >= 16x16, got {tuple(size)}")
    samples = tuple(synth_sample(offset + i, size, seed) for i in range(n))
    return Dataset(name, samples, tuple(int(v) for v in size))


def split_ids(ids: Sequence[str], pool_size: int, test_size: int, seed: int) -> tuple[list[str], list[str]]:
    """Seeded disjoint pool/test split of ``ids``; both halves come back ID-sorted."""
    ids = sorted(ids)
    if pool_size + test_size > len(ids):
        raise DataError(f"split {pool_size}+{test_size} exceeds dataset size {len(ids)}")
    perm = np.random.default_rng(seed).permutation(len(ids))
    pool = sorted(ids[i] for i in perm[:pool_size])
    test = sorted(ids[i] for i in perm[pool_size:pool_size + test_size])
    return pool, test

