"""Color-coded flow images on the flat chart view, written as binary PPM.

Hue follows the 55-bin Middlebury color wheel, saturation grows linearly
with magnitude up to ``max_magnitude`` and white marks zero flow.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import DimMismatch, NonFiniteValue, ValidationError

# red-yellow, yellow-green, green-cyan, cyan-blue, blue-magenta, magenta-red
WHEEL_SEGMENTS = (15, 6, 4, 11, 13, 6)


def color_wheel() -> np.ndarray:
    RY, YG, GC, CB, BM, MR = WHEEL_SEGMENTS
    wheel = np.zeros((sum(WHEEL_SEGMENTS), 3))
    k = 0
    wheel[k:k + RY, 0] = 1.0
    wheel[k:k + RY, 1] = np.arange(RY) / RY
    k += RY
    wheel[k:k + YG, 0] = 1.0 - np.arange(YG) / YG
    wheel[k:k + YG, 1] = 1.0
    k += YG
    wheel[k:k + GC, 1] = 1.0
    wheel[k:k + GC, 2] = np.arange(GC) / GC
    k += GC
    wheel[k:k + CB, 1] = 1.0 - np.arange(CB) / CB
    wheel[k:k + CB, 2] = 1.0
    k += CB
    wheel[k:k + BM, 0] = np.arange(BM) / BM
    wheel[k:k + BM, 2] = 1.0
    k += BM
    wheel[k:k + MR, 0] = 1.0
    wheel[k:k + MR, 2] = 1.0 - np.arange(MR) / MR
    return wheel


@dataclass(frozen=True)
class FlowImage:
    """``pixels[r, c]`` is RGB; rows follow xi1, columns xi2."""

    pixels: np.ndarray

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3 or self.pixels.dtype != np.uint8:
            raise ValidationError("pixels must be a (height, width, 3) uint8 array")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def scaled_projection(u: np.ndarray, eps: float = 1e-14) -> np.ndarray:
    """(u1, u2) rescaled so the planar vector keeps the length of ``u``."""
    u = np.asarray(u, dtype=np.float64)
    if u.shape[-1] != 3:
        raise DimMismatch("expected ambient 3-vectors")
    planar = np.hypot(u[..., 0], u[..., 1])
    full = np.sqrt(np.sum(u * u, axis=-1))
    ok = planar >= eps
    scale = np.where(ok, full / np.where(ok, planar, 1.0), 0.0)
    return u[..., :2] * scale[..., None]


def auto_max_magnitude(fields) -> float:
    mags = np.concatenate([np.hypot(f[..., 0], f[..., 1]).reshape(-1) for f in fields])
    m = float(np.percentile(mags, 99)) if mags.size else 0.0
    return m if m > 0 else 1.0


def colorize(field: np.ndarray, max_magnitude="auto") -> FlowImage:
    field = np.asarray(field, dtype=np.float64)
    if field.ndim != 3 or field.shape[2] != 2:
        raise DimMismatch("expected a (n1, n2, 2) planar field")
    if not np.all(np.isfinite(field)):
        raise NonFiniteValue("flow field contains non-finite values")
    if max_magnitude == "auto":
        max_magnitude = auto_max_magnitude([field])
    if not max_magnitude > 0:
        raise ValidationError("max_magnitude must be positive")
    u, v = field[..., 0], field[..., 1]
    rad = np.minimum(np.hypot(u, v) / max_magnitude, 1.0)
    wheel = color_wheel()
    ncols = wheel.shape[0]
    a = np.arctan2(-v, -u) / np.pi
    fk = (a + 1.0) / 2.0 * (ncols - 1)
    k0 = np.floor(fk).astype(int)
    k1 = (k0 + 1) % ncols
    frac = (fk - k0)[..., None]
    col = (1.0 - frac) * wheel[k0] + frac * wheel[k1]
    col = 1.0 - rad[..., None] * (1.0 - col)
    pixels = np.floor(255.0 * col + 0.5).astype(np.uint8)
    return FlowImage(pixels)


def ppm_bytes(image: FlowImage) -> bytes:
    header = f"P6\n{image.width} {image.height}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(image.pixels).tobytes()


def write_ppm(image: FlowImage, path) -> None:
    with open(path, "wb") as fh:
        fh.write(ppm_bytes(image))


def read_ppm(path) -> FlowImage:
    data = open(path, "rb").read()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P6" or parts[2] != b"255":
        raise ValidationError(f"{path}: unsupported PPM header")
    w, h = (int(x) for x in parts[1].split())
    return FlowImage(np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w, 3).copy())
