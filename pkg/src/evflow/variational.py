"""Discrete spatiotemporal energy and Euler-Lagrange coefficients.

The unknowns are the frame coordinates ``w`` (shape ``(n0, n1, n2, 2)``) of
the tangential flow ``u = w^i e_i``. Coefficient arrays use the layout

* ``a[..., m]``, ``b[..., m, i]``
* ``c[..., sigma, m, i]``, ``p[..., nu, m, i]``
* ``d[..., nu, sigma]``, ``q[..., nu, sigma]``

with Greek indices over (t, xi1, xi2) and Latin indices over the two frame
components. The optimality system they describe is::

    d^{ns} d_{ns} w^m + c^{sm}_i d_s w^i + b^m_i w^i = a^m     in the interior
    q^{ns} d_s w^m + p^{nm}_i w^i = 0                          on faces xi^n = 0, 1
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fd import diff, grad3
from .geometry import GeometryAtlas, frame_vectors
from .model import Grid3, ValidationError, check_field


@dataclass(frozen=True)
class RegParams:
    lambda0: float
    lambda1: float

    def __post_init__(self):
        if not (math.isfinite(self.lambda0) and self.lambda0 >= 0):
            raise ValidationError(f"lambda0 must be >= 0, got {self.lambda0}")
        if not (math.isfinite(self.lambda1) and self.lambda1 > 0):
            raise ValidationError(f"lambda1 must be > 0, got {self.lambda1}")

    @property
    def weights(self) -> np.ndarray:
        """(lambda_0, lambda_1, lambda_2) with lambda_2 = lambda_1."""
        return np.array([self.lambda0, self.lambda1, self.lambda1])


@dataclass(frozen=True)
class DataDerivatives:
    grid: Grid3
    grad: np.ndarray  # [..., 0] = d_t f, [..., 1] = d_1 f, [..., 2] = d_2 f

    @property
    def ft(self):
        return self.grad[..., 0]

    @property
    def f1(self):
        return self.grad[..., 1]

    @property
    def f2(self):
        return self.grad[..., 2]


@dataclass(frozen=True)
class ElCoefficients:
    grid: Grid3
    reg: RegParams
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    p: np.ndarray
    q: np.ndarray

    def frame(self, t: int) -> "ElCoefficients":
        """Coefficients of a single frame on a one-frame grid."""
        s = slice(t, t + 1)
        return ElCoefficients(self.grid.frame(), self.reg, self.a[s], self.b[s], self.c[s],
                              self.d[s], self.p[s], self.q[s])


def data_derivatives(f: np.ndarray, grid: Grid3) -> DataDerivatives:
    f = check_field(f, grid, name="f")
    grid.require_frames(2)
    return DataDerivatives(grid, grad3(f, grid.spacing))


def _divergence(field: np.ndarray, grid: Grid3) -> np.ndarray:
    """Sum over nu of d_nu field[..., nu, ...] (products are differenced as gridded)."""
    return sum(diff(field[:, :, :, nu], nu, grid.spacing[nu]) for nu in range(3))


def el_coefficients(atlas: GeometryAtlas, df: DataDerivatives, reg: RegParams,
                    printed: bool = False) -> ElCoefficients:
    """Per-gridpoint coefficients of the optimality system.

    The default coefficients are the exact first variation of the energy.
    ``printed=True`` instead reproduces the published coefficient list
    verbatim, which carries G_nu with weight 1 instead of 2 and the opposite
    sign on the divergence term of ``b``; both variants agree on static
    planes and whenever the frame symbols and area-element gradient vanish.
    """
    grid = atlas.grid
    lam = reg.weights
    A = atlas.alpha3()  # A[..., nu, mu] = alpha^nu_mu
    GF = atlas.gammaF
    G = atlas.bigG

    # s_m = alpha^i_m d_i f
    s = np.einsum("...im,...i->...m", atlas.alpha, df.grad[..., 1:])
    a = -s * df.ft[..., None]

    q = np.einsum("m,...nm,...sm->...ns", lam, A, A)
    q = 0.5 * (q + np.swapaxes(q, -1, -2))  # exact symmetry, einsum order is not
    d = -q
    p = np.einsum("u,...nu,...mui->...nmi", lam, A, GF)

    kappa, div_sign = (1.0, 1.0) if printed else (2.0, -1.0)
    div_p = _divergence(p, grid)  # [..., m, i]
    div_q = _divergence(q, grid)  # [..., sigma]
    Gq = np.einsum("...n,...ns->...s", G, q)
    Gp = np.einsum("...n,...nmi->...mi", G, p)

    b = (
        s[..., :, None] * s[..., None, :]
        + np.einsum("u,...jum,...jui->...mi", lam, GF, GF)
        - kappa * Gp
        + div_sign * div_p
    )
    c = np.einsum("u,...su,...ium->...smi", lam, A, GF) - np.einsum("u,...su,...mui->...smi", lam, A, GF)
    c = c - (kappa * Gq + div_q)[..., :, None, None] * np.eye(2)
    return ElCoefficients(grid, reg, a, b, c, d, p, q)


def ofc_residual(w: np.ndarray, atlas: GeometryAtlas, df: DataDerivatives) -> np.ndarray:
    """Discrete optical-flow residual d_t f + w^j alpha^i_j d_i f."""
    s = np.einsum("...im,...i->...m", atlas.alpha, df.grad[..., 1:])
    return df.ft + np.sum(w * s, axis=-1)


def frame_derivatives(w: np.ndarray, atlas: GeometryAtlas, connection: str = "ambient") -> np.ndarray:
    """D_mu w^j for mu = 0, 1, 2, shape ``(n0, n1, n2, 3, 2)``.

    ``connection="frame"`` evaluates alpha^nu_mu d_nu w^j + w^i ~Gamma^j_{mu i}
    literally. ``connection="ambient"`` evaluates the same quantity as
    e_j . P(alpha^nu_mu d_nu u) from the differenced ambient field u = w^i e_i,
    which makes the pointwise regularizer exactly independent of the chosen
    orthonormal frame.
    """
    grid = atlas.grid
    A = atlas.alpha3()
    if connection == "frame":
        dw = grad3(w, grid.spacing)  # [..., nu, j]
        return np.einsum("...nu,...nj->...uj", A, dw) + np.einsum("...jui,...i->...uj", atlas.gammaF, w)
    if connection == "ambient":
        e = frame_vectors(atlas.alpha, atlas.dx)
        u = np.einsum("...i,...ia->...a", w, e)
        du = grad3(u, grid.spacing)  # [..., nu, a]; e_j is tangent so P drops out
        return np.einsum("...nu,...na,...ja->...uj", A, du, e)
    raise ValueError(f"unknown connection {connection!r}")


def energy_terms(w, atlas: GeometryAtlas, df: DataDerivatives, reg: RegParams, connection: str = "ambient"):
    """Return ``(data, regularizer)`` Riemann sums of the energy."""
    grid = atlas.grid
    w = check_field(w, grid, 2, "w")
    vol = grid.h0 * grid.h1 * grid.h2
    r = ofc_residual(w, atlas, df)
    D = frame_derivatives(w, atlas, connection)
    dens = np.einsum("u,...uj->...", reg.weights, D * D)
    data = float(np.sum(r * r * atlas.sqrtdetg)) * vol
    regv = float(np.sum(dens * atlas.sqrtdetg)) * vol
    return data, regv


def energy(w, atlas: GeometryAtlas, df: DataDerivatives, reg: RegParams, connection: str = "ambient") -> float:
    data, regv = energy_terms(w, atlas, df, reg, connection)
    return data + regv


def frame_energy(w, atlas: GeometryAtlas, df: DataDerivatives, reg: RegParams, t: int) -> float:
    """Spatial-only functional of a single frame (no temporal regularization)."""
    grid = atlas.grid
    sl = (slice(t, t + 1),)
    wt = np.asarray(w)[sl]
    e = frame_vectors(atlas.alpha[sl], atlas.dx[sl])
    u = np.einsum("...i,...ia->...a", wt, e)
    du = np.stack([diff(u, 1, grid.h1), diff(u, 2, grid.h2)], axis=3)
    D = np.einsum("...nu,...na,...ja->...uj", atlas.alpha[sl], du, e)
    s = np.einsum("...im,...i->...m", atlas.alpha[sl], df.grad[sl][..., 1:])
    r = df.ft[sl] + np.sum(wt * s, axis=-1)
    dens = r * r + reg.lambda1 * np.sum(D * D, axis=(-1, -2))
    return float(np.sum(dens * atlas.sqrtdetg[sl])) * grid.h1 * grid.h2
