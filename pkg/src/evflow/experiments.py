"""Manufactured-solution recovery runs shared by the scripts and the test suite."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .assembly import assemble
from .kinematics import reconstruct_u
from .model import Grid3
from .solver import SolverConfig, gmres
from .synth import SurfaceSpec, SynthSpec, TextureSpec, generate
from .variational import RegParams, data_derivatives, el_coefficients, ofc_residual


def interior(shape, fraction: float = 0.8):
    """Spatial slice covering the central ``fraction`` of each chart axis."""
    cut = [int(round(n * (1 - fraction) / 2)) for n in shape[1:3]]
    return (slice(None), slice(cut[0], shape[1] - cut[0]), slice(cut[1], shape[2] - cut[1]))


def rel_rms(u: np.ndarray, ref: np.ndarray, region=None) -> float:
    region = interior(u.shape) if region is None else region
    d, r = u[region] - ref[region], ref[region]
    return float(np.sqrt(np.sum(d * d) / np.sum(r * r)))


@dataclass
class Recovery:
    w: np.ndarray
    u: np.ndarray
    u_true: np.ndarray
    rel_error: float
    ofc_ratio: float
    iterations: int
    rel_residual: float
    converged: bool
    seconds: float


def recovery_fixture(surface: str = "flat", amplitude: float = 0.2, velocity=(0.2, 0.1)) -> SynthSpec:
    return SynthSpec(SurfaceSpec(surface, amplitude=amplitude), TextureSpec("gaussian-blobs", 40, 0.05, 1),
                     tuple(velocity))


def run_recovery(spec: SynthSpec, grid: Grid3, reg: RegParams, solver: SolverConfig,
                 mode: str = "spatiotemporal") -> Recovery:
    """Synthesize, solve and score one fixture.

    ``ofc_ratio`` is the L2 norm of ``d_t f + u^i d_i f`` for the recovered
    flow over the same norm at zero flow.
    """
    res = generate(spec, grid)
    start = time.perf_counter()
    df = data_derivatives(res.f, grid)
    cf = el_coefficients(res.atlas, df, reg)
    if mode == "spatiotemporal":
        x, rep = gmres(assemble(cf), solver)
        w = x.reshape(grid.shape + (2,))
        reps = [rep]
    else:
        w = np.zeros(grid.shape + (2,))
        reps = []
        for t in range(grid.n0):
            x, rep = gmres(assemble(cf, "framewise", t), solver)
            w[t] = x.reshape(grid.shape[1:] + (2,))
            reps.append(rep)
    seconds = time.perf_counter() - start
    u = reconstruct_u(w, res.atlas)
    ratio = float(np.linalg.norm(ofc_residual(w, res.atlas, df)) / np.linalg.norm(df.ft))
    return Recovery(w, u, res.u_true, rel_rms(u, res.u_true), ratio, sum(r.iterations for r in reps),
                    max(r.rel_residual for r in reps), all(r.converged for r in reps), seconds)
