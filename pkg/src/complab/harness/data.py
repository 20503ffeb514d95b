"""Dataset ingestion: CIFAR-10 binary batches, IDX files, and a seeded synthetic set."""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigError, FormatError

DATA_ROOT_ENV = "COMPLAB_DATA_ROOT"
CIFAR_RECORD = 1 + 3 * 32 * 32


@dataclass
class Dataset:
    images: np.ndarray  # uint8 [N, H, W, C]
    labels: np.ndarray  # int64 [N]

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx])


@dataclass
class Split:
    train: Dataset
    val: Dataset


def split_dataset(ds: Dataset, val_fraction: float, seed: int) -> Split:
    if not 0 < val_fraction < 1:
        raise ConfigError(f"val_fraction must be in (0, 1), got {val_fraction}")
    order = np.random.default_rng(seed).permutation(len(ds))
    n_val = int(round(val_fraction * len(ds)))
    if n_val == 0 or n_val == len(ds):
        raise ConfigError("split leaves an empty partition")
    return Split(ds.subset(np.sort(order[n_val:])), ds.subset(np.sort(order[:n_val])))


def resolve_path(path) -> Path:
    """Relative dataset paths are taken from ``$COMPLAB_DATA_ROOT`` when it is set."""
    p = Path(path)
    root = os.environ.get(DATA_ROOT_ENV)
    if root and not p.is_absolute():
        p = Path(root) / p
    return p


# --- CIFAR-10 binary ----------------------------------------------------------

def parse_cifar10_bin(buf: bytes) -> Dataset:
    """Records of 1 label byte + 1024 R + 1024 G + 1024 B bytes (32x32, row-major)."""
    if len(buf) == 0:
        raise FormatError("empty CIFAR-10 file", 0)
    if len(buf) % CIFAR_RECORD:
        whole = len(buf) // CIFAR_RECORD
        raise FormatError(f"truncated CIFAR-10 record {whole}", whole * CIFAR_RECORD)
    raw = np.frombuffer(buf, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = raw[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise FormatError(f"label {labels[bad[0]]} out of range", int(bad[0]) * CIFAR_RECORD)
    images = raw[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    return Dataset(np.ascontiguousarray(images), labels)


def load_cifar10_bin(path) -> Dataset:
    p = resolve_path(path)
    files = sorted(p.glob("*.bin")) if p.is_dir() else [p]
    if not files:
        raise ConfigError(f"no .bin files under {p}")
    parts = [parse_cifar10_bin(f.read_bytes()) for f in files]
    return Dataset(np.concatenate([d.images for d in parts]), np.concatenate([d.labels for d in parts]))


# --- IDX -------------------------------------------------------------------------

_IDX_TYPES = {0x08: np.dtype("u1"), 0x09: np.dtype("i1"), 0x0B: np.dtype(">i2"),
              0x0C: np.dtype(">i4"), 0x0D: np.dtype(">f4"), 0x0E: np.dtype(">f8")}


def parse_idx(buf: bytes) -> np.ndarray:
    if len(buf) < 4:
        raise FormatError("IDX header truncated", len(buf))
    zero, dtype_code, ndim = struct.unpack(">HBB", buf[:4])
    if zero != 0 or dtype_code not in _IDX_TYPES:
        raise FormatError(f"bad IDX magic {buf[:4].hex()}", 0)
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise FormatError("IDX dimension table truncated", len(buf))
    dims = struct.unpack(f">{ndim}I", buf[4:header])
    dt = _IDX_TYPES[dtype_code]
    need = header + int(np.prod(dims, dtype=np.int64)) * dt.itemsize
    if len(buf) < need:
        raise FormatError(f"IDX payload truncated: need {need} bytes, have {len(buf)}", len(buf))
    return np.frombuffer(buf, dtype=dt, count=int(np.prod(dims)), offset=header).reshape(dims)


def load_idx(path, labels_path=None) -> Dataset:
    """An images IDX file (N x H x W [x C]) plus its labels file.

    ``path`` may be a directory holding one ``*images*`` and one ``*labels*`` file.
    """
    p = resolve_path(path)
    if p.is_dir():
        imgs = sorted(p.glob("*images*"))
        labs = sorted(p.glob("*labels*"))
        if len(imgs) != 1 or len(labs) != 1:
            raise ConfigError(f"expected one images and one labels IDX file under {p}")
        p, labels_path = imgs[0], labs[0]
    if labels_path is None:
        raise ConfigError("IDX loading needs a labels file")
    images = parse_idx(p.read_bytes())
    labels = parse_idx(resolve_path(labels_path).read_bytes())
    if images.ndim == 3:
        images = images[..., None]
    if images.ndim != 4 or labels.ndim != 1 or len(labels) != len(images):
        raise FormatError(f"IDX shapes do not pair up: {images.shape} vs {labels.shape}", 0)
    return Dataset(np.ascontiguousarray(images.astype(np.uint8)), labels.astype(np.int64))


# --- synthetic -------------------------------------------------------------------

def _render_segments(segs, size, width):
    """Anti-aliased strokes: intensity 1 - distance/width, clipped to [0, 1]."""
    c = np.arange(size) + 0.5
    px, py = np.meshgrid(c, c)
    best = np.full((size, size), np.inf)
    for (x0, y0), (x1, y1) in segs:
        dx, dy = x1 - x0, y1 - y0
        t = ((px - x0) * dx + (py - y0) * dy) / max(dx * dx + dy * dy, 1e-12)
        t = np.clip(t, 0.0, 1.0)
        d = np.hypot(px - (x0 + t * dx), py - (y0 + t * dy))
        best = np.minimum(best, d)
    return np.clip(1.0 - best / width, 0.0, 1.0)


def synthetic(n_samples: int = 5000, image_size: int = 16, num_classes: int = 10, channels: int = 1,
              strokes: int = 3, rotation: float = 20.0, shift: float = 2.0, scale: float = 0.1,
              noise: float = 0.15, seed: int = 0) -> Dataset:
    """Stroke-figure classes seen under random pose, contrast and pixel noise.

    Each class is a fixed set of random line segments; every sample renders
    that figure after a random rotation/shift/scale, so the clean set already
    contains the geometric variation that augmentation imitates.
    """
    if n_samples < num_classes or image_size < 4 or channels not in (1, 3):
        raise ConfigError("invalid synthetic dataset parameters")
    rng = np.random.default_rng(seed)
    s = float(image_size)
    lo, hi = 0.2 * s, 0.8 * s
    templates = [rng.uniform(lo, hi, size=(strokes, 2, 2)) for _ in range(num_classes)]
    tints = rng.uniform(0.4, 1.0, size=(num_classes, channels))
    labels = np.arange(n_samples) % num_classes
    rng.shuffle(labels)
    images = np.empty((n_samples, image_size, image_size, channels), dtype=np.uint8)
    centre = s / 2.0
    for k, y in enumerate(labels):
        th = np.deg2rad(rng.uniform(-rotation, rotation))
        sc = 1.0 + rng.uniform(-scale, scale)
        t = rng.uniform(-shift, shift, size=2)
        rot = sc * np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        pts = (templates[y] - centre) @ rot.T + centre + t
        ink = _render_segments(pts, image_size, width=1.2)
        fg, bg = rng.uniform(0.6, 1.0), rng.uniform(0.0, 0.3)
        tint = tints[y] if channels == 3 else np.ones(1)
        img = bg + (fg - bg) * ink[..., None] * tint
        img = img + rng.normal(0.0, noise, size=img.shape)
        images[k] = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    return Dataset(images, labels.astype(np.int64))


def load_dataset(path=None, format: str = "synthetic", *, val_fraction: float = 0.2, split_seed: int = 0,
                 limit: int | None = None, **synthetic_params) -> Split:
    """Load ``format`` in {cifar10-bin, idx, synthetic} and split it deterministically."""
    if format == "cifar10-bin":
        ds = load_cifar10_bin(path)
    elif format == "idx":
        ds = load_idx(path, synthetic_params.pop("labels_path", None))
    elif format == "synthetic":
        ds = synthetic(**synthetic_params)
    else:
        raise ConfigError(f"unknown dataset format {format!r}")
    if limit is not None:
        ds = ds.subset(np.arange(min(limit, len(ds))))
    return split_dataset(ds, val_fraction, split_seed)
