"""From a 4D intensity volume to the surface pair (z, f).

Per frame: Gaussian smoothing, cell-centre detection as strict local
maxima, a regularized least-squares bilinear height fit through the
centres, and trilinear sampling of the volume on the fitted surface.

Volumes are indexed ``(t, x, y, z)``. Voxel ``(ix, iy)`` sits at chart
position ``(ix / n_x, iy / n_y)``, so the chart grid and voxel grid line up
when their sizes agree. Heights are stored in chart units, i.e. physical
height divided by the physical extent ``n_x * voxel_size[0]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.ndimage as ndi
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .model import EvflowError, ValidationError


class BadSigma(EvflowError, ValueError):
    pass


class NoCenters(EvflowError):
    pass


class SingularFit(EvflowError):
    pass


class CellCenter(NamedTuple):
    x: float
    y: float
    z: float
    intensity: float


@dataclass(frozen=True)
class FitConfig:
    reg_weight: float = 1e-2
    grid_n1: int = 64
    grid_n2: int = 64
    # height used when a frame has no centres; None raises NoCenters
    fallback_height: float | None = None

    def __post_init__(self):
        if not (math.isfinite(self.reg_weight) and self.reg_weight >= 0):
            raise ValidationError("reg_weight must be >= 0")
        if self.grid_n1 < 3 or self.grid_n2 < 3:
            raise ValidationError("fit grid must be at least 3x3")


@dataclass(frozen=True)
class PreprocessConfig:
    sigma: float = 2.0
    threshold: float = 0.3
    voxel_size: tuple[float, float, float] = (1.0, 1.0, 1.0)
    fit: FitConfig = FitConfig()

    def __post_init__(self):
        if not 0 < self.threshold < 1:
            raise ValidationError("threshold must lie in (0, 1)")
        if len(self.voxel_size) != 3 or min(self.voxel_size) <= 0:
            raise ValidationError("voxel_size needs three positive entries")


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(4.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_filter3(volume: np.ndarray, sigma) -> np.ndarray:
    """Separable truncated Gaussian, radius ceil(4 sigma), reflect padding."""
    volume = np.asarray(volume, dtype=np.float64)
    if volume.ndim != 3:
        raise ValidationError("expected a 3D volume")
    sig = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (3,))
    if not np.all(sig > 0) or not np.all(np.isfinite(sig)):
        raise BadSigma(f"sigma must be positive, got {sigma}")
    out = volume
    for axis, s in enumerate(sig):
        out = ndi.correlate1d(out, gaussian_kernel(float(s)), axis=axis, mode="reflect")
    return out


def detect_cells(smoothed: np.ndarray, threshold: float, voxel_size=(1.0, 1.0, 1.0)) -> list[CellCenter]:
    """Strict 26-neighbour maxima above ``threshold``, in physical units."""
    smoothed = np.asarray(smoothed, dtype=np.float64)
    if not 0 < threshold < 1:
        raise ValidationError("threshold must lie in (0, 1)")
    footprint = np.ones((3, 3, 3), dtype=bool)
    footprint[1, 1, 1] = False
    neigh = ndi.maximum_filter(smoothed, footprint=footprint, mode="constant", cval=-np.inf)
    peaks = (smoothed > neigh) & (smoothed > threshold)
    sx, sy, sz = voxel_size
    return [CellCenter(ix * sx, iy * sy, iz * sz, float(smoothed[ix, iy, iz]))
            for ix, iy, iz in zip(*(a.tolist() for a in np.nonzero(peaks)))]


def _bilinear_rows(p1: np.ndarray, p2: np.ndarray, n1: int, n2: int) -> sp.csr_matrix:
    """Sparse matrix of bilinear weights at fractional node positions."""
    p1 = np.clip(p1, 0.0, n1 - 1.0)
    p2 = np.clip(p2, 0.0, n2 - 1.0)
    i = np.minimum(np.floor(p1).astype(int), n1 - 2)
    j = np.minimum(np.floor(p2).astype(int), n2 - 2)
    a, b = p1 - i, p2 - j
    rows = np.repeat(np.arange(p1.size), 4)
    cols = np.stack([i * n2 + j, (i + 1) * n2 + j, i * n2 + j + 1, (i + 1) * n2 + j + 1], axis=1).reshape(-1)
    vals = np.stack([(1 - a) * (1 - b), a * (1 - b), (1 - a) * b, a * b], axis=1).reshape(-1)
    return sp.csr_matrix((vals, (rows, cols)), shape=(p1.size, n1 * n2))


def _forward_differences(n1: int, n2: int) -> sp.csr_matrix:
    def d(n):
        return sp.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n))

    return sp.vstack([sp.kron(d(n1), sp.identity(n2)), sp.kron(sp.identity(n1), d(n2))]).tocsr()


def fit_objective(zgrid: np.ndarray, positions: np.ndarray, heights: np.ndarray, mu: float) -> float:
    """Data misfit plus ``mu`` times the squared forward differences of ``zgrid``."""
    n1, n2 = zgrid.shape
    B = _bilinear_rows(positions[:, 0], positions[:, 1], n1, n2)
    r = B @ zgrid.reshape(-1) - heights
    D = _forward_differences(n1, n2) @ zgrid.reshape(-1)
    return float(r @ r + mu * (D @ D))


def fit_surface(positions: np.ndarray, heights: np.ndarray, config: FitConfig) -> np.ndarray:
    """Least-squares bilinear height field through scattered points.

    ``positions`` holds fractional node indices ``(p1, p2)`` of the output
    grid, one row per centre.
    """
    n1, n2 = config.grid_n1, config.grid_n2
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    heights = np.asarray(heights, dtype=np.float64).reshape(-1)
    if positions.shape[0] != heights.shape[0]:
        raise ValidationError("positions and heights differ in length")
    if heights.size == 0:
        if config.fallback_height is None:
            raise NoCenters("no cell centres to fit")
        return np.full((n1, n2), float(config.fallback_height))
    B = _bilinear_rows(positions[:, 0], positions[:, 1], n1, n2)
    D = _forward_differences(n1, n2)
    N = (B.T @ B + config.reg_weight * (D.T @ D)).tocsc()
    try:
        z = spla.splu(N).solve(B.T @ heights)
    except RuntimeError as exc:
        raise SingularFit(f"normal equations are singular: {exc}") from None
    if not np.all(np.isfinite(z)):
        raise SingularFit("normal equations are singular")
    return z.reshape(n1, n2)


def _extent(shape, voxel_size) -> float:
    return shape[0] * voxel_size[0]


def fit_frame(centers: list[CellCenter], vol_shape, config: PreprocessConfig) -> np.ndarray:
    fit = config.fit
    lx = _extent(vol_shape, config.voxel_size)
    sx, sy, _ = config.voxel_size
    nx, ny, _ = vol_shape
    if centers:
        c = np.array([[cc.x, cc.y, cc.z] for cc in centers])
        # physical -> chart (voxel index / n) -> output-grid fractional index
        pos = np.stack([c[:, 0] / sx / nx * fit.grid_n1, c[:, 1] / sy / ny * fit.grid_n2], axis=1)
        heights = c[:, 2] / lx
    else:
        pos, heights = np.zeros((0, 2)), np.zeros(0)
    return fit_surface(pos, heights, fit)


def sample_intensity(volume: np.ndarray, z: np.ndarray, voxel_size=(1.0, 1.0, 1.0)):
    """Trilinear samples of one volume frame on the surface ``z``.

    Returns ``(f, clamped)`` where ``clamped`` marks surface points outside
    the volume's z-range that were moved to the nearest voxel layer.
    """
    volume = np.asarray(volume, dtype=np.float64)
    nx, ny, nz = volume.shape
    n1, n2 = z.shape
    lx = _extent(volume.shape, voxel_size)
    ix = np.arange(n1) / n1 * nx
    iy = np.arange(n2) / n2 * ny
    IX, IY = np.meshgrid(np.clip(ix, 0, nx - 1), np.clip(iy, 0, ny - 1), indexing="ij")
    iz = np.asarray(z, dtype=np.float64) * lx / voxel_size[2]
    clamped = (iz < 0) | (iz > nz - 1)
    iz = np.clip(iz, 0, nz - 1)
    f = ndi.map_coordinates(volume, [IX, IY, iz], order=1, mode="nearest")
    return np.clip(f, 0.0, 1.0), clamped


class PreprocessResult(NamedTuple):
    z: np.ndarray
    f: np.ndarray
    centers: list[list[CellCenter]]
    clamped: np.ndarray


def preprocess_volume(volume: np.ndarray, config: PreprocessConfig = PreprocessConfig()) -> PreprocessResult:
    volume = np.asarray(volume, dtype=np.float64)
    if volume.ndim != 4:
        raise ValidationError("expected a 4D volume (t, x, y, z)")
    if not np.all(np.isfinite(volume)) or volume.min() < 0 or volume.max() > 1:
        raise ValidationError("volume values must be finite and lie in [0, 1]")
    zs, fs, cs, flags = [], [], [], []
    for t in range(volume.shape[0]):
        smooth = gaussian_filter3(volume[t], config.sigma)
        centers = detect_cells(smooth, config.threshold, config.voxel_size)
        try:
            z = fit_frame(centers, volume.shape[1:], config)
        except NoCenters:
            raise NoCenters(f"frame {t}: no cell centres above threshold {config.threshold}") from None
        f, clamped = sample_intensity(volume[t], z, config.voxel_size)
        zs.append(z)
        fs.append(f)
        cs.append(centers)
        flags.append(clamped)
    return PreprocessResult(np.stack(zs), np.stack(fs), cs, np.stack(flags))
