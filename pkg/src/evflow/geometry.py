"""Differential geometry of a graph surface ``x(t, xi) = (xi1, xi2, z(t, xi))``.

Index conventions for the arrays in :class:`GeometryAtlas` (grid axes first):

* ``dx[..., i, :]``          ambient vector d_{i+1} x
* ``alpha[..., j, i]``       coordinate j of frame vector e_i, ``e_i = alpha^j_i d_j x``
* ``gamma[..., j, i, k]``    Christoffel symbol Gamma^j_{ik}
* ``gamma0[..., j, i]``      time connection Gamma^j_{0i}
* ``gammaF[..., j, mu, i]``  frame symbol ~Gamma^j_{mu i}, mu = 0 (time), 1, 2
* ``bigG[..., nu]``          d_nu sqrt(det g) / (2 sqrt(det g))

Derivatives of derived quantities (g, alpha, sqrt(det g)) are taken by
differencing the gridded quantity itself.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fd import diff, grad3
from .model import EvflowError, Grid3, check_field

DET_EPS = 1e-12


class DegenerateMetric(EvflowError):
    pass


class NotTangent(EvflowError, ValueError):
    pass


@dataclass(frozen=True)
class GeometryAtlas:
    grid: Grid3
    dx: np.ndarray
    v: np.ndarray
    dtx: np.ndarray
    g: np.ndarray
    ginv: np.ndarray
    sqrtdetg: np.ndarray
    gamma: np.ndarray
    gamma0: np.ndarray
    alpha: np.ndarray
    gammaF: np.ndarray
    normal: np.ndarray
    projector: np.ndarray
    bigG: np.ndarray

    @property
    def frame(self) -> np.ndarray:
        """Orthonormal frame vectors, ``frame[..., i, :] = e_{i+1}``."""
        return frame_vectors(self.alpha, self.dx)

    def alpha3(self) -> np.ndarray:
        """Extended coefficients alpha^nu_mu with alpha^0_mu = delta^0_mu."""
        return extend_alpha(self.alpha)


def parametrization_derivatives(z: np.ndarray, grid: Grid3):
    """Return ``(dx, v, dtx)`` for the graph parametrization of height field ``z``."""
    z = check_field(z, grid, name="z")
    grid.require_frames(2)
    zt = diff(z, 0, grid.h0)
    z1 = diff(z, 1, grid.h1)
    z2 = diff(z, 2, grid.h2)
    zt1 = diff(zt, 1, grid.h1)
    zt2 = diff(zt, 2, grid.h2)

    dx = np.zeros(grid.shape + (2, 3))
    dx[..., 0, 0] = 1.0
    dx[..., 1, 1] = 1.0
    dx[..., 0, 2] = z1
    dx[..., 1, 2] = z2
    v = np.zeros(grid.shape + (3,))
    v[..., 2] = zt
    dtx = np.zeros(grid.shape + (2, 3))
    dtx[..., 0, 2] = zt1
    dtx[..., 1, 2] = zt2
    return dx, v, dtx


def metric(dx: np.ndarray):
    """First fundamental form, its inverse and the area element."""
    g = np.einsum("...ia,...ja->...ij", dx, dx)
    det = g[..., 0, 0] * g[..., 1, 1] - g[..., 0, 1] * g[..., 1, 0]
    if np.any(~(det > DET_EPS)):
        raise DegenerateMetric(f"det g <= {DET_EPS} at {int(np.sum(~(det > DET_EPS)))} points")
    ginv = np.empty_like(g)
    ginv[..., 0, 0] = g[..., 1, 1] / det
    ginv[..., 1, 1] = g[..., 0, 0] / det
    ginv[..., 0, 1] = -g[..., 0, 1] / det
    ginv[..., 1, 0] = -g[..., 1, 0] / det
    return g, ginv, np.sqrt(det)


def christoffel(g: np.ndarray, ginv: np.ndarray, grid: Grid3) -> np.ndarray:
    # dg[..., l, a, b] = d_l g_ab, spatial l only
    dg = np.stack([diff(g, 1, grid.h1), diff(g, 2, grid.h2)], axis=3)
    lower = (
        np.einsum("...ikm->...mik", dg)  # d_i g_km
        + np.einsum("...kmi->...mik", dg)  # d_k g_mi
        - dg  # d_m g_ik
    )
    gamma = 0.5 * np.einsum("...jm,...mik->...jik", ginv, lower)
    # exact (i,k) symmetry; the two halves only differ by summation order
    return 0.5 * (gamma + np.swapaxes(gamma, -1, -2))


def time_symbols(ginv: np.ndarray, dtx: np.ndarray, dx: np.ndarray) -> np.ndarray:
    """Gamma^j_{0i} = g^{jk} (d_{ti} x . d_k x)."""
    inner = np.einsum("...ia,...ka->...ik", dtx, dx)
    return np.einsum("...jk,...ik->...ji", ginv, inner)


def orthonormal_frame(dx: np.ndarray, g: np.ndarray, first: int = 1) -> np.ndarray:
    """Gram-Schmidt coefficients alpha^j_i of the coordinate basis.

    ``first=1`` orthonormalizes d_1 x first (the default frame);
    ``first=2`` starts from d_2 x, giving a second, distinct orthonormal frame.
    """
    g11, g12, g22 = g[..., 0, 0], g[..., 0, 1], g[..., 1, 1]
    det = g11 * g22 - g12 * g12
    if np.any(~(det > DET_EPS)):
        raise DegenerateMetric("cannot orthonormalize a degenerate basis")
    alpha = np.zeros_like(g)
    if first == 1:
        alpha[..., 0, 0] = 1.0 / np.sqrt(g11)
        alpha[..., 0, 1] = -g12 / np.sqrt(g11 * det)
        alpha[..., 1, 1] = np.sqrt(g11 / det)
    elif first == 2:
        alpha[..., 1, 0] = 1.0 / np.sqrt(g22)
        alpha[..., 1, 1] = -g12 / np.sqrt(g22 * det)
        alpha[..., 0, 1] = np.sqrt(g22 / det)
    else:
        raise ValueError("first must be 1 or 2")
    return alpha


def frame_vectors(alpha: np.ndarray, dx: np.ndarray) -> np.ndarray:
    return np.einsum("...ji,...ja->...ia", alpha, dx)


def extend_alpha(alpha: np.ndarray) -> np.ndarray:
    a3 = np.zeros(alpha.shape[:-2] + (3, 3))
    a3[..., 0, 0] = 1.0
    a3[..., 1:, 1:] = alpha
    return a3


def frame_symbols(alpha, gamma, gamma0, g, grid: Grid3) -> np.ndarray:
    """Connection symbols ~Gamma^j_{mu i} of the orthonormal frame."""
    # beta[p, m] = alpha^h_p g_hm
    beta = np.einsum("...hp,...hm->...pm", alpha, g)
    dalpha = grad3(alpha, grid.spacing)  # [..., l, m, k] = d_l alpha^m_k, l = 0..2
    spatial = (
        np.einsum("...li,...lmk->...mik", alpha, dalpha[..., 1:, :, :])
        + np.einsum("...li,...nk,...mln->...mik", alpha, alpha, gamma)
    )
    temporal = dalpha[..., 0, :, :] + np.einsum("...ki,...mk->...mi", alpha, gamma0)
    out = np.empty(alpha.shape[:-2] + (2, 3, 2))
    out[..., :, 0, :] = np.einsum("...jm,...mi->...ji", beta, temporal)
    out[..., :, 1:, :] = np.einsum("...jm,...mik->...jik", beta, spatial)
    return out


def normal_and_projector(dx: np.ndarray):
    n = np.cross(dx[..., 0, :], dx[..., 1, :])
    norm = np.linalg.norm(n, axis=-1)
    if np.any(~(norm > np.sqrt(DET_EPS))):
        raise DegenerateMetric("tangent vectors are parallel")
    n = n / norm[..., None]
    P = np.eye(3) - n[..., :, None] * n[..., None, :]
    return n, P


def big_g(sqrtdetg: np.ndarray, grid: Grid3) -> np.ndarray:
    if np.any(~(sqrtdetg > 0)):
        raise DegenerateMetric("area element must be positive")
    return grad3(sqrtdetg, grid.spacing) / (2.0 * sqrtdetg[..., None])


def build_atlas(z: np.ndarray, grid: Grid3, first: int = 1) -> GeometryAtlas:
    """Compute every per-gridpoint geometric quantity from the height field."""
    dx, v, dtx = parametrization_derivatives(z, grid)
    g, ginv, sqrtdetg = metric(dx)
    gamma = christoffel(g, ginv, grid)
    gamma0 = time_symbols(ginv, dtx, dx)
    alpha = orthonormal_frame(dx, g, first=first)
    gammaF = frame_symbols(alpha, gamma, gamma0, g, grid)
    normal, P = normal_and_projector(dx)
    bigG = big_g(sqrtdetg, grid)
    return GeometryAtlas(grid, dx, v, dtx, g, ginv, sqrtdetg, gamma, gamma0, alpha, gammaF, normal, P, bigG)


def coordinate_components(u: np.ndarray, atlas: GeometryAtlas) -> np.ndarray:
    """Components u^j of a tangent ambient field in the basis d_j x."""
    return np.einsum("...jk,...ka,...a->...j", atlas.ginv, atlas.dx, u)


def frame_coordinates(u: np.ndarray, atlas: GeometryAtlas) -> np.ndarray:
    """Orthonormal-frame coordinates w^i = e_i . u."""
    return np.einsum("...ia,...a->...i", atlas.frame, u)


def _check_tangent(u, atlas, name, rtol=1e-8):
    off = np.abs(np.einsum("...a,...a->...", u, atlas.normal))
    if np.any(off > rtol * np.linalg.norm(u, axis=-1)):
        raise NotTangent(f"{name} has a normal component (max {off.max():.3e})")


def covariant_derivative(u: np.ndarray, direction: np.ndarray, atlas: GeometryAtlas) -> np.ndarray:
    """nabla_v u = (v^i d_i u^j + v^i u^k Gamma^j_{ik}) d_j x, returned as ambient vectors."""
    grid = atlas.grid
    u = check_field(u, grid, 3, "u")
    direction = check_field(direction, grid, 3, "direction")
    _check_tangent(u, atlas, "u")
    _check_tangent(direction, atlas, "direction")
    uc = coordinate_components(u, atlas)
    vc = coordinate_components(direction, atlas)
    duc = np.stack([diff(uc, 1, grid.h1), diff(uc, 2, grid.h2)], axis=3)  # [..., i, j] = d_i u^j
    comp = np.einsum("...i,...ij->...j", vc, duc) + np.einsum("...i,...k,...jik->...j", vc, uc, atlas.gamma)
    return np.einsum("...j,...ja->...a", comp, atlas.dx)


def projected_derivatives(u: np.ndarray, atlas: GeometryAtlas) -> np.ndarray:
    """Tangential parts ``P d_nu u`` of the differenced ambient field, nu = 0, 1, 2.

    Shape ``(n0, n1, n2, 3, 3)`` indexed ``[..., nu, a]``.
    """
    du = grad3(u, atlas.grid.spacing)
    return np.einsum("...ab,...nb->...na", atlas.projector, du)


def frobenius_norm_sq(u: np.ndarray, atlas: GeometryAtlas) -> np.ndarray:
    """|nabla_{e1} u|^2 + |nabla_{e2} u|^2 at every gridpoint.

    The covariant derivative along e_mu is the tangential part of the
    directional derivative alpha^nu_mu d_nu u of the ambient field.
    """
    pd = projected_derivatives(u, atlas)[..., 1:, :]
    along = np.einsum("...nm,...na->...ma", atlas.alpha, pd)
    return np.sum(along * along, axis=(-1, -2))


def curve_covariant_derivative(dx: np.ndarray, ddx: np.ndarray, coeff: np.ndarray, dcoeff: np.ndarray):
    """Covariant derivative of ``u = coeff * dx`` along a parametrized curve.

    ``dx``/``ddx`` are first and second derivatives of the curve (shape
    ``(n, dim)``), ``coeff``/``dcoeff`` the tangent coefficient and its
    derivative. Returns ``(coordinate_route, projection_route)``: the
    intrinsic formula ``(d coeff + coeff Gamma) dx`` with
    ``Gamma = (dx . ddx) / (dx . dx)``, and the tangential part of the
    ordinary derivative ``d(coeff dx)``.
    """
    gtt = np.sum(dx * dx, axis=-1)
    gamma = np.sum(dx * ddx, axis=-1) / gtt
    intrinsic = (dcoeff + coeff * gamma)[:, None] * dx
    raw = dcoeff[:, None] * dx + coeff[:, None] * ddx
    tangent = dx / np.sqrt(gtt)[:, None]
    projected = np.sum(raw * tangent, axis=-1)[:, None] * tangent
    return intrinsic, projected
