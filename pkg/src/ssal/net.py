"""U-Net shared by the reconstruction pretext task and segmentation.

Parameter names partition into ``encoder.*``, ``decoder.*`` and ``head.*`` so
that pretrained weights can be transferred minus the head.

Checkpoint layout (little-endian)::

    b"SSAL" | u8 version | u32 header length | header JSON (utf-8)
    | float32 arrays, name-sorted, row-major

The header holds ``config``, ``seed``, ``tensors`` ([{name, shape}] in storage
order) and a free-form ``meta`` object.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, DataError

HEADS = ("reconstruction", "segmentation")
CKPT_MAGIC = b"SSAL"
CKPT_VERSION = 1


@dataclass(frozen=True)
class NetConfig:
    in_channels: int = 1
    base_channels: int = 32
    depth: int = 4
    head: str = "segmentation"

    def __post_init__(self):
        if self.in_channels != 1:
            raise ConfigError("only single-channel input is supported (in_channels=1)")
        if self.base_channels < 1:
            raise ConfigError("net.base_channels must be >= 1")
        if self.depth < 1:
            raise ConfigError("net.depth must be >= 1")
        if self.head not in HEADS:
            raise ConfigError(f"net.head must be one of {HEADS}, got {self.head!r}")

    @property
    def level_channels(self) -> list[int]:
        """Channels at encoder levels 0..depth; the last entry is the bottleneck."""
        return [self.base_channels * 2 ** min(i, self.depth - 1) for i in range(self.depth + 1)]

    @property
    def bottleneck_channels(self) -> int:
        return self.level_channels[-1]

    def bottleneck_shape(self, size) -> tuple[int, int, int]:
        self.check_input(size)
        f = 2 ** self.depth
        return self.bottleneck_channels, int(size[0]) // f, int(size[1]) // f

    def check_input(self, size) -> None:
        f = 2 ** self.depth
        h, w = int(size[0]), int(size[1])
        if h % f or w % f or h < f or w < f:
            raise ConfigError(f"input {h}x{w} not divisible by 2^depth = {f}")

    def to_dict(self) -> dict:
        return asdict(self)


class ConvBlock(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        groups = math.gcd(8, cout)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.norm1 = nn.GroupNorm(groups, cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.norm2 = nn.GroupNorm(groups, cout)

    def forward(self, x):
        x = torch.relu(self.norm1(self.conv1(x)))
        return torch.relu(self.norm2(self.conv2(x)))


class UpLevel(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.up = nn.ConvTranspose2d(cin, cout, 2, stride=2)
        self.block = ConvBlock(2 * cout, cout)

    def forward(self, x, skip):
        return self.block(torch.cat([self.up(x), skip], dim=1))


class UNet(nn.Module):
    def __init__(self, config: NetConfig, seed: int = 0):
        super().__init__()
        self.config = config
        self.seed = int(seed)
        ch = config.level_channels
        self.encoder = nn.ModuleList(
            [ConvBlock(config.in_channels, ch[0])] + [ConvBlock(ch[i - 1], ch[i]) for i in range(1, config.depth + 1)]
        )
        self.decoder = nn.ModuleList([UpLevel(ch[i], ch[i - 1]) for i in range(config.depth, 0, -1)])
        self.head = nn.Conv2d(ch[0], 1, 1)

    def _encode(self, x):
        skips = []
        for i, level in enumerate(self.encoder):
            if i:
                x = nn.functional.max_pool2d(x, 2)
            x = level(x)
            skips.append(x)
        return x, skips[:-1]

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        """Deepest encoder activation, shape (B, C, H/2^depth, W/2^depth)."""
        self.config.check_input(x.shape[-2:])
        return self._encode(x)[0]

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        self.config.check_input(x.shape[-2:])
        x, skips = self._encode(x)
        for level in self.decoder:
            x = level(x, skips.pop())
        return self.head(x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.logits(x))


def _init_weights(model: UNet) -> None:
    for m in model.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.kaiming_normal_(m.weight, nonlinearity="relu")
            nn.init.zeros_(m.bias)


def build(config: NetConfig, seed: int = 0, input_size=None) -> UNet:
    """Deterministically initialized U-Net. ``input_size`` is validated when given."""
    if input_size is not None:
        config.check_input(input_size)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(int(seed))
        model = UNet(config, seed)
        _init_weights(model)
    return model


def parameter_count(config: NetConfig) -> int:
    return sum(p.numel() for p in UNet(config).parameters())


def as_batch(images, dtype=torch.float32) -> torch.Tensor:
    """(H, W) or (N, H, W) array -> (N, 1, H, W) tensor."""
    t = torch.as_tensor(np.array(images), dtype=dtype)
    if t.ndim == 2:
        t = t[None]
    if t.ndim != 3:
        raise DataError(f"expected (H, W) or (N, H, W) images, got shape {tuple(t.shape)}")
    return t[:, None]


@torch.no_grad()
def bottleneck(model: UNet, img, size=None) -> np.ndarray:
    """Bottleneck feature map (C x h x w) of one image, or (N x C x h x w) of a stack."""
    arr = np.asarray(img)
    if size is not None and tuple(arr.shape[-2:]) != tuple(size):
        raise DataError(f"image shape {arr.shape[-2:]} does not match model resolution {tuple(size)}")
    was_training = model.training
    model.eval()
    try:
        dtype = next(model.parameters()).dtype
        out = model.encode(as_batch(arr, dtype)).cpu().numpy()
    finally:
        model.train(was_training)
    return out[0] if arr.ndim == 2 else out


def transfer_weights(source: UNet, target: UNet, scope: str = "full") -> UNet:
    """Copy encoder (and, for ``scope="full"``, decoder) weights from ``source`` into ``target``.

    ``head.*`` keeps the target's own initialization.
    """
    if scope not in ("full", "encoder"):
        raise ConfigError(f"transfer scope must be 'full' or 'encoder', got {scope!r}")
    if replace(source.config, head="segmentation") != replace(target.config, head="segmentation"):
        raise ConfigError(f"architecture mismatch: {source.config} vs {target.config}")
    src, dst = source.state_dict(), target.state_dict()
    for a, b in zip(sorted(src), sorted(dst)):
        if a != b or src[a].shape != dst[b].shape:
            raise ConfigError(f"architecture mismatch at parameter {a!r} / {b!r}")
    if len(src) != len(dst):
        raise ConfigError("architecture mismatch: parameter counts differ")
    prefixes = ("encoder.", "decoder.") if scope == "full" else ("encoder.",)
    with torch.no_grad():
        for name, tensor in dst.items():
            if name.startswith(prefixes):
                tensor.copy_(src[name])
    return target


def save_checkpoint(model: UNet, path, meta: dict | None = None) -> Path:
    path = Path(path)
    state = {k: v.detach().cpu().to(torch.float32).numpy() for k, v in model.state_dict().items()}
    names = sorted(state)
    header = {
        "config": model.config.to_dict(),
        "seed": model.seed,
        "tensors": [{"name": n, "shape": list(state[n].shape)} for n in names],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<BI", CKPT_VERSION, len(blob)))
        f.write(blob)
        for n in names:
            f.write(np.ascontiguousarray(state[n], dtype="<f4").tobytes())
    tmp.replace(path)
    return path


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Return ``(header, arrays)`` from a checkpoint file."""
    data = Path(path).read_bytes()
    if data[:4] != CKPT_MAGIC:
        raise DataError(f"{path}: not an SSAL checkpoint")
    version, hlen = struct.unpack_from("<BI", data, 4)
    if version != CKPT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    off = 9
    header = json.loads(data[off:off + hlen].decode("utf-8"))
    off += hlen
    arrays = {}
    for t in header["tensors"]:
        count = int(np.prod(t["shape"], dtype=np.int64))
        arrays[t["name"]] = np.frombuffer(data, dtype="<f4", count=count, offset=off).reshape(t["shape"]).copy()
        off += 4 * count
    if off != len(data):
        raise DataError(f"{path}: trailing bytes in checkpoint")
    return header, arrays


def load_checkpoint(path) -> UNet:
    header, arrays = read_checkpoint(path)
    model = UNet(NetConfig(**header["config"]), header["seed"])
    model.load_state_dict({k: torch.from_numpy(v) for k, v in arrays.items()})
    return model
