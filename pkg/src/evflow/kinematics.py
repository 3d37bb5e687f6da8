"""Ambient velocity reconstruction and forward-Euler cell trajectories."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .geometry import GeometryAtlas
from .model import EvflowError, Grid3, ValidationError, check_field


class SeedOutOfDomain(EvflowError, ValueError):
    pass


def reconstruct_u(w: np.ndarray, atlas: GeometryAtlas) -> np.ndarray:
    """Ambient tangent field ``u = w^i alpha^j_i d_j x``."""
    w = check_field(w, atlas.grid, 2, "w")
    coeff = np.einsum("...i,...ji->...j", w, atlas.alpha)
    return np.einsum("...j,...ja->...a", coeff, atlas.dx)


def total_velocity(u: np.ndarray, atlas: GeometryAtlas) -> np.ndarray:
    u = check_field(u, atlas.grid, 3, "u")
    return u + atlas.v


@dataclass
class Trajectory:
    seed: tuple[float, float]  # chart position (xi1, xi2)
    frames: list[int] = field(default_factory=list)
    points: list[np.ndarray] = field(default_factory=list)  # ambient (x1, x2, x3)
    chart: list[tuple[float, float]] = field(default_factory=list)
    exited: bool = False


def _bilinear(values: np.ndarray, p1: float, p2: float) -> np.ndarray:
    """Interpolate ``values[i, j, ...]`` at fractional index ``(p1, p2)``."""
    n1, n2 = values.shape[:2]
    i = min(int(np.floor(p1)), n1 - 2)
    j = min(int(np.floor(p2)), n2 - 2)
    a, b = p1 - i, p2 - j
    v00, v10, v01, v11 = values[i, j], values[i + 1, j], values[i, j + 1], values[i + 1, j + 1]
    # difference form: a constant field comes back bit-exact
    return v00 + a * (v10 - v00) + b * (v01 - v00) + a * b * ((v11 - v10) - (v01 - v00))


def _inside(grid: Grid3, p1: float, p2: float) -> bool:
    return 0.0 <= p1 <= grid.n1 - 1 and 0.0 <= p2 <= grid.n2 - 1


def integrate_trajectories(m: np.ndarray, seeds, grid: Grid3, step: float = 10.0,
                           z: np.ndarray | None = None, start: int = 0, stop: int | None = None):
    """Integrate ``x <- x + step * m(t, x)`` from frame ``start`` to ``stop``.

    ``seeds`` are chart points ``(xi1, xi2)``. The chart position follows the
    (x1, x2) part of each ambient step. ``x3`` is read from ``z`` when given,
    otherwise it is 0 at the seed and accumulates the x3 component of the
    steps. A trajectory leaving the chart is truncated and flagged.
    """
    m = check_field(m, grid, 3, "m")
    if not step > 0:
        raise ValidationError("step must be positive")
    stop = grid.n0 - 1 if stop is None else stop
    if not 0 <= start <= stop < grid.n0:
        raise ValidationError(f"frame range [{start}, {stop}] outside 0..{grid.n0 - 1}")
    if z is not None:
        z = check_field(z, grid, name="z")

    out = []
    for seed in seeds:
        xi1, xi2 = float(seed[0]), float(seed[1])
        p1, p2 = xi1 / grid.h1, xi2 / grid.h2
        if not _inside(grid, p1, p2):
            raise SeedOutOfDomain(f"seed {seed} outside the chart")
        x3 = float(_bilinear(z[start], p1, p2)) if z is not None else 0.0
        x = np.array([xi1, xi2, x3])
        traj = Trajectory((xi1, xi2))
        traj.frames.append(start)
        traj.points.append(x.copy())
        traj.chart.append((xi1, xi2))
        for t in range(start, stop):
            x = x + step * _bilinear(m[t], x[0] / grid.h1, x[1] / grid.h2)
            p1, p2 = x[0] / grid.h1, x[1] / grid.h2
            if not _inside(grid, p1, p2):
                traj.exited = True
                break
            if z is not None:
                x[2] = float(_bilinear(z[t + 1], p1, p2))
            traj.frames.append(t + 1)
            traj.points.append(x.copy())
            traj.chart.append((float(x[0]), float(x[1])))
        out.append(traj)
    return out


def detect_seeds(f: np.ndarray, frame: int, threshold: float, grid: Grid3):
    """Strict 8-neighbour maxima above ``threshold`` as chart points, row-major."""
    f = check_field(f, grid, name="f")
    if not 0 <= frame < grid.n0:
        raise ValidationError(f"frame {frame} out of range")
    if not 0.0 <= threshold <= 1.0:
        raise ValidationError("threshold must lie in [0, 1]")
    img = f[frame]
    pad = np.pad(img, 1, constant_values=-np.inf)
    n1, n2 = img.shape
    strict = img > threshold
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di or dj:
                strict &= img > pad[1 + di:1 + di + n1, 1 + dj:1 + dj + n2]
    ii, jj = np.nonzero(strict)
    return [(i * grid.h1, j * grid.h2) for i, j in zip(ii.tolist(), jj.tolist())]


CSV_HEADER = ["trajectory_id", "frame", "x1", "x2", "x3", "xi1", "xi2", "exited"]


def write_trajectories_csv(trajectories, path, grid: Grid3) -> None:
    """Chart positions are written as fractional grid indices ``xi / h``."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(CSV_HEADER)
        for k, tr in enumerate(trajectories):
            for frame, x, (c1, c2) in zip(tr.frames, tr.points, tr.chart):
                wr.writerow([k, frame, repr(float(x[0])), repr(float(x[1])), repr(float(x[2])),
                             repr(c1 / grid.h1), repr(c2 / grid.h2), int(tr.exited)])
