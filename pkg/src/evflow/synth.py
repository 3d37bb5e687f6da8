"""Analytic evolving surfaces and advected textures with known flow.

The texture moves with a constant chart velocity ``v``: ``f(t, xi) = f0(xi - t v)``.
Then ``d_t f + v^i d_i f = 0`` holds exactly in the continuum for every
surface shape, so ``u = v^i d_i x`` is the ground truth tangential flow.

Blob centres and amplitudes come from a 64-bit linear congruential
generator so fixtures are reproducible in any language::

    state <- (6364136223846793005 * state + 1442695040888963407) mod 2**64
    uniform = (state >> 11) / 2**53
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .geometry import GeometryAtlas, build_atlas, frame_coordinates
from .model import EvflowError, Grid3, ValidationError

LCG_A = 6364136223846793005
LCG_C = 1442695040888963407
_MASK = (1 << 64) - 1


class MotionExitsDomain(EvflowError, ValueError):
    pass


class Lcg:
    def __init__(self, seed: int):
        self.state = int(seed) & _MASK

    def next_u64(self) -> int:
        self.state = (LCG_A * self.state + LCG_C) & _MASK
        return self.state

    def uniform(self) -> float:
        return (self.next_u64() >> 11) / float(1 << 53)

    def normal(self) -> float:
        # Box-Muller, cosine branch only so each call consumes two draws
        u1 = self.uniform()
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2.0 * math.pi * u2)


@dataclass(frozen=True)
class SurfaceSpec:
    kind: str = "flat"  # flat | tilt | bump | wave
    slope: float = 0.5
    amplitude: float = 0.2
    width: float = 0.2
    spatial_freq: float = 1.0
    temporal_freq: float = 2.0

    def __post_init__(self):
        if self.kind not in ("flat", "tilt", "bump", "wave"):
            raise ValidationError(f"unknown surface {self.kind!r}")
        if self.amplitude < 0:
            raise ValidationError("amplitude must be >= 0")
        if not self.width > 0:
            raise ValidationError("width must be > 0")

    def height(self, t, x1, x2):
        if self.kind == "flat":
            return np.zeros(np.broadcast(t, x1, x2).shape)
        if self.kind == "tilt":
            return self.slope * x1 + 0.0 * t
        if self.kind == "bump":
            r2 = (x1 - 0.5) ** 2 + (x2 - 0.5) ** 2
            return self.amplitude * np.exp(-r2 / (2 * self.width**2)) + 0.0 * t
        k = 2 * np.pi * self.spatial_freq
        return self.amplitude * np.sin(k * x1 + self.temporal_freq * t) * np.cos(k * x2)


@dataclass(frozen=True)
class TextureSpec:
    kind: str = "gaussian-blobs"  # gaussian-blobs | polynomial
    count: int = 40
    width: float = 0.05
    seed: int = 1
    degree: int = 1

    def __post_init__(self):
        if self.kind not in ("gaussian-blobs", "polynomial"):
            raise ValidationError(f"unknown texture {self.kind!r}")
        if not self.width > 0:
            raise ValidationError("width must be > 0")
        if self.count < 1 or self.degree < 0:
            raise ValidationError("count must be >= 1 and degree >= 0")


@dataclass(frozen=True)
class SynthSpec:
    surface: SurfaceSpec = field(default_factory=SurfaceSpec)
    texture: TextureSpec = field(default_factory=TextureSpec)
    velocity: tuple[float, float] = (0.2, 0.1)
    noise: float = 0.0  # std of optional additive Gaussian noise
    noise_seed: int = 7

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        surf = SurfaceSpec(**d.pop("surface", {}))
        tex = TextureSpec(**d.pop("texture", {}))
        if "velocity" in d:
            d["velocity"] = tuple(float(x) for x in d["velocity"])
        return cls(surf, tex, **d)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["velocity"] = list(self.velocity)
        return out


class Blobs(NamedTuple):
    centers: np.ndarray  # (count, 2)
    amplitudes: np.ndarray
    width: float

    def __call__(self, x1, x2):
        keep = np.ones(np.broadcast(x1, x2).shape)
        for (c1, c2), a in zip(self.centers, self.amplitudes):
            g = np.exp(-((x1 - c1) ** 2 + (x2 - c2) ** 2) / (2 * self.width**2))
            keep = keep * (1.0 - a * g)
        return 1.0 - keep


class Polynomial(NamedTuple):
    degree: int

    def __call__(self, x1, x2):
        s = 0.5 + 0.0 * (x1 + x2)
        for k in range(1, self.degree + 1):
            s = s + 0.12 * ((x1 - 0.5) ** k + (x2 - 0.5) ** k) / k
        return s


def texture(spec: SynthSpec, duration: float):
    """Closed-form texture ``f0`` for a sequence of length ``duration`` in t."""
    tex = spec.texture
    if tex.kind == "polynomial":
        return Polynomial(tex.degree)
    margin = 2.0 * tex.width
    lo, hi = [], []
    for vk in spec.velocity:
        shift = vk * duration
        # a blob placed at c sits at c + t v at time t; keep it in [margin, 1 - margin]
        lo.append(margin - min(0.0, shift))
        hi.append(1.0 - margin - max(0.0, shift))
    if any(h <= l for l, h in zip(lo, hi)):
        raise MotionExitsDomain("blob texture cannot stay inside the chart for this motion")
    rng = Lcg(tex.seed)
    centers = np.empty((tex.count, 2))
    amps = np.empty(tex.count)
    for k in range(tex.count):
        centers[k, 0] = lo[0] + (hi[0] - lo[0]) * rng.uniform()
        centers[k, 1] = lo[1] + (hi[1] - lo[1]) * rng.uniform()
        amps[k] = 0.5 + 0.5 * rng.uniform()
    return Blobs(centers, amps, tex.width)


class SynthResult(NamedTuple):
    z: np.ndarray
    f: np.ndarray
    w_true: np.ndarray
    u_true: np.ndarray
    atlas: GeometryAtlas


def intensity(spec: SynthSpec, grid: Grid3, t, x1, x2):
    f0 = texture(spec, grid.n0 * grid.h0)
    v1, v2 = spec.velocity
    return f0(x1 - t * v1, x2 - t * v2)


def generate(spec: SynthSpec, grid: Grid3) -> SynthResult:
    T, X1, X2 = grid.mesh()
    z = np.asarray(spec.surface.height(T, X1, X2), dtype=np.float64)
    f = intensity(spec, grid, T, X1, X2)
    if spec.noise > 0:
        rng = Lcg(spec.noise_seed)
        noise = np.array([rng.normal() for _ in range(f.size)]).reshape(f.shape)
        f = np.clip(f + spec.noise * noise, 0.0, 1.0)
    if f.min() < 0.0 or f.max() > 1.0:
        raise ValidationError("texture leaves [0, 1] on this grid")
    atlas = build_atlas(z, grid)
    v = np.asarray(spec.velocity, dtype=np.float64)
    u_true = np.einsum("i,...ia->...a", v, atlas.dx)
    w_true = frame_coordinates(u_true, atlas)
    return SynthResult(z, f, w_true, u_true, atlas)
