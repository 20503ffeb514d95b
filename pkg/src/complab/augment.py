"""RandAugment over uint8 images held as ``[H, W, C]`` numpy arrays (C in {1, 3}).

Magnitudes are integers in ``[0, 30]``; ``level = M / 30`` maps linearly onto
each op's physical range:

=================  ===========================================
Rotate             +-30 * level degrees
ShearX / ShearY    +-0.3 * level
TranslateX / Y     +-0.45 * level * extent (pixels)
Solarize           invert pixels >= 255 - 255 * level
Posterize          keep 8 - round(4 * level) bits (at least 4)
Color, Contrast,   enhancement factor 1 +- 0.9 * level
Brightness,
Sharpness
=================  ===========================================

Signs are drawn from the supplied generator. Geometric ops resample with
nearest neighbour around the image centre and fill from the nearest edge.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError

MAX_MAGNITUDE = 30


class AugOp(str, Enum):
    Identity = "Identity"
    AutoContrast = "AutoContrast"
    Equalize = "Equalize"
    Rotate = "Rotate"
    Solarize = "Solarize"
    Color = "Color"
    Posterize = "Posterize"
    Contrast = "Contrast"
    Brightness = "Brightness"
    Sharpness = "Sharpness"
    ShearX = "ShearX"
    ShearY = "ShearY"
    TranslateX = "TranslateX"
    TranslateY = "TranslateY"


OPS = tuple(AugOp)
GEOMETRIC = (AugOp.Rotate, AugOp.ShearX, AugOp.ShearY, AugOp.TranslateX, AugOp.TranslateY)
ENHANCE = (AugOp.Color, AugOp.Contrast, AugOp.Brightness, AugOp.Sharpness)


@dataclass(frozen=True)
class AugPolicy:
    magnitude: int
    num_ops: int = 2

    def __post_init__(self):
        check_magnitude(self.magnitude)
        if self.num_ops != 2:
            raise ConfigError("RandAugment composes exactly 2 ops")


def check_magnitude(m) -> int:
    if isinstance(m, bool) or int(m) != m or not 0 <= m <= MAX_MAGNITUDE:
        raise ConfigError(f"magnitude must be an integer in [0, {MAX_MAGNITUDE}], got {m!r}")
    return int(m)


def sample_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for one image, derived from a global seed and indices."""
    return np.random.default_rng([int(seed), *(int(k) for k in keys)])


def _check_image(img):
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ConfigError(f"expected uint8 [H, W, 1|3] image, got {img.dtype} {img.shape}")


# --- geometric ----------------------------------------------------------------

def _warp(img, a, b, c, d, tx=0.0, ty=0.0):
    """Sample ``img`` at ``A @ (p - centre) + centre + t`` for every output pixel p."""
    h, w = img.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ys, xs = np.mgrid[0:h, 0:w]
    dx, dy = xs - cx, ys - cy
    sx = np.rint(a * dx + b * dy + cx + tx)
    sy = np.rint(c * dx + d * dy + cy + ty)
    sx = np.clip(sx, 0, w - 1).astype(np.intp)
    sy = np.clip(sy, 0, h - 1).astype(np.intp)
    return img[sy, sx]


def rotate(img: np.ndarray, degrees: float) -> np.ndarray:
    """Counter-clockwise rotation by ``degrees`` about the image centre."""
    if degrees == 0:
        return img.copy()
    t = np.deg2rad(degrees)
    cos, sin = np.cos(t), np.sin(t)
    # inverse map: rotate destination coordinates clockwise
    return _warp(img, cos, -sin, sin, cos)


def shear_x(img, s):
    return img.copy() if s == 0 else _warp(img, 1.0, s, 0.0, 1.0)


def shear_y(img, s):
    return img.copy() if s == 0 else _warp(img, 1.0, 0.0, s, 1.0)


def translate(img, tx, ty):
    if tx == 0 and ty == 0:
        return img.copy()
    return _warp(img, 1.0, 0.0, 0.0, 1.0, -tx, -ty)


# --- photometric --------------------------------------------------------------

def _grayscale(img):
    if img.shape[2] == 1:
        return img[..., 0].astype(np.float64)
    r, g, b = (img[..., i].astype(np.int64) for i in range(3))
    return ((r * 299 + g * 587 + b * 114) // 1000).astype(np.float64)


def _blend(degenerate, img, factor):
    x = img.astype(np.float64)
    out = degenerate + factor * (x - degenerate)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def autocontrast(img):
    out = img.copy()
    for ch in range(img.shape[2]):
        x = img[..., ch]
        lo, hi = int(x.min()), int(x.max())
        if hi > lo:
            scaled = (x.astype(np.float64) - lo) * (255.0 / (hi - lo))
            out[..., ch] = np.clip(np.rint(scaled), 0, 255).astype(np.uint8)
    return out


def equalize(img):
    out = img.copy()
    for ch in range(img.shape[2]):
        x = img[..., ch]
        hist = np.bincount(x.ravel(), minlength=256)
        nonzero = hist[hist > 0]
        step = (nonzero.sum() - nonzero[-1]) // 255
        if step == 0:
            continue
        cum = np.concatenate([[0], np.cumsum(hist)[:-1]])
        lut = np.clip((cum + step // 2) // step, 0, 255).astype(np.uint8)
        out[..., ch] = lut[x]
    return out


def solarize(img, threshold):
    return np.where(img >= threshold, 255 - img, img).astype(np.uint8)


def posterize(img, bits):
    shift = 8 - bits
    return ((img >> shift) << shift).astype(np.uint8)


def color(img, factor):
    if factor == 1.0 or img.shape[2] == 1:
        return img.copy()
    gray = _grayscale(img)[..., None]
    return _blend(np.broadcast_to(gray, img.shape), img, factor)


def contrast(img, factor):
    if factor == 1.0:
        return img.copy()
    m = np.floor(_grayscale(img).mean() + 0.5)
    return _blend(np.full(img.shape, m), img, factor)


def brightness(img, factor):
    if factor == 1.0:
        return img.copy()
    return _blend(np.zeros(img.shape), img, factor)


def sharpness(img, factor):
    if factor == 1.0:
        return img.copy()
    h, w = img.shape[:2]
    x = img.astype(np.float64)
    degenerate = x.copy()
    if h > 2 and w > 2:
        acc = np.zeros((h - 2, w - 2, img.shape[2]))
        for dy in range(3):
            for dx in range(3):
                acc += x[dy:dy + h - 2, dx:dx + w - 2] * (5.0 if dy == dx == 1 else 1.0)
        degenerate[1:-1, 1:-1] = np.rint(acc / 13.0)
    return _blend(degenerate, img, factor)


def _signed(value, rng):
    return -value if rng.random() < 0.5 else value


def apply_op(img: np.ndarray, op: AugOp, magnitude: int, rng: np.random.Generator) -> np.ndarray:
    """Apply one atomic op at integer ``magnitude``; returns a new array."""
    check_magnitude(magnitude)
    _check_image(img)
    op = AugOp(op)
    level = magnitude / MAX_MAGNITUDE
    h, w = img.shape[:2]
    if op is AugOp.Identity:
        return img.copy()
    if op is AugOp.AutoContrast:
        return autocontrast(img)
    if op is AugOp.Equalize:
        return equalize(img)
    if op is AugOp.Solarize:
        return solarize(img, 255 - level * 255)
    if op is AugOp.Posterize:
        return posterize(img, max(4, 8 - int(round(level * 4))))
    if op is AugOp.Rotate:
        return rotate(img, _signed(30.0 * level, rng))
    if op is AugOp.ShearX:
        return shear_x(img, _signed(0.3 * level, rng))
    if op is AugOp.ShearY:
        return shear_y(img, _signed(0.3 * level, rng))
    if op is AugOp.TranslateX:
        return translate(img, _signed(0.45 * level * w, rng), 0.0)
    if op is AugOp.TranslateY:
        return translate(img, 0.0, _signed(0.45 * level * h, rng))
    factor = 1.0 + _signed(0.9 * level, rng)
    return {
        AugOp.Color: color,
        AugOp.Contrast: contrast,
        AugOp.Brightness: brightness,
        AugOp.Sharpness: sharpness,
    }[op](img, factor)


def sample_ops(rng: np.random.Generator) -> tuple[AugOp, AugOp]:
    """Draw (first, second) uniformly with replacement from the 14 ops."""
    j, i = rng.integers(0, len(OPS), size=2)
    return OPS[j], OPS[i]


def randaugment_with_ops(img, magnitude, rng):
    first, second = sample_ops(rng)
    out = apply_op(img, first, magnitude, rng)
    return apply_op(out, second, magnitude, rng), (first, second)


def randaugment(img: np.ndarray, policy: AugPolicy, rng: np.random.Generator) -> np.ndarray:
    return randaugment_with_ops(img, policy.magnitude, rng)[0]


def random_magnitude_augment(img: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, int]:
    m = int(rng.integers(0, MAX_MAGNITUDE + 1))
    return randaugment(img, AugPolicy(m), rng), m


class TraceLog:
    """Rows of (sample_index, op1, op2, magnitude) for replaying augmentation."""

    HEADER = ("sample_index", "op1", "op2", "magnitude")

    def __init__(self):
        self.rows = []

    def add(self, sample_index, ops, magnitude):
        self.rows.append((int(sample_index), ops[0].value, ops[1].value, int(magnitude)))

    def write(self, path):
        with open(path, "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(self.HEADER)
            wr.writerows(self.rows)

    @classmethod
    def read(cls, path):
        log = cls()
        with open(path, newline="") as f:
            for r in csv.DictReader(f):
                log.rows.append((int(r["sample_index"]), r["op1"], r["op2"], int(r["magnitude"])))
        return log
