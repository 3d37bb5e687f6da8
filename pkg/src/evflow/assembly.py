"""Finite-difference discretization of the optimality system into one sparse matrix.

Unknown ordering: row/column ``(t*n1*n2 + i*n2 + j)*2 + (m-1)`` for frame
component ``m`` at gridpoint ``(t, i, j)``.

Row types, by precedence:

* spatial corners (xi1 and xi2 both on the boundary): diagonal-direction
  condition with n = (0, +-1, +-1)
* spatial faces: boundary condition of that face, outward normal
* temporal faces at spatially interior points: temporal boundary condition,
  unless it vanishes identically (lambda_0 = 0), in which case the interior
  equation is used there as well
* everything else: the interior equation on the 11-point stencil

First derivatives in boundary rows are central along the face and one-sided
(two-point, inward) where a neighbour is missing.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .model import EvflowError, Grid3, GridTooSmall, check_field
from .variational import ElCoefficients

INTERIOR, FACE0, FACE1, FACE2, CORNER = range(5)


class ModeMismatch(EvflowError, ValueError):
    pass


@dataclass(frozen=True)
class SparseSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    grid: Grid3
    mode: str = "spatiotemporal"
    frame: int | None = None

    @property
    def nrows(self) -> int:
        return self.matrix.shape[0]

    @property
    def row_offsets(self) -> np.ndarray:
        return self.matrix.indptr

    @property
    def col_indices(self) -> np.ndarray:
        return self.matrix.indices

    @property
    def values(self) -> np.ndarray:
        return self.matrix.data


def unknown_index(grid: Grid3, m, t, i, j):
    """Row index of unknown w^m (m in {1, 2}) at gridpoint (t, i, j)."""
    return ((t * grid.n1 + i) * grid.n2 + j) * 2 + (m - 1)


def temporal_condition_vanishes(coeffs: ElCoefficients) -> np.ndarray:
    return np.all(coeffs.q[..., 0, :] == 0, axis=-1) & np.all(coeffs.p[..., 0, :, :] == 0, axis=(-1, -2))


def classify_rows(coeffs: ElCoefficients) -> np.ndarray:
    grid = coeffs.grid
    n0, n1, n2 = grid.shape
    t, i, j = np.meshgrid(np.arange(n0), np.arange(n1), np.arange(n2), indexing="ij")
    on1 = (i == 0) | (i == n1 - 1)
    on2 = (j == 0) | (j == n2 - 1)
    on0 = (t == 0) | (t == n0 - 1)
    kind = np.full(grid.shape, INTERIOR, dtype=np.int8)
    kind[on0 & ~temporal_condition_vanishes(coeffs)] = FACE0
    kind[on2] = FACE2
    kind[on1] = FACE1
    kind[on1 & on2] = CORNER
    if n0 == 1 and np.any(kind == FACE0):
        raise GridTooSmall("temporal boundary condition needs at least two frames")
    return kind


class _Triplets:
    def __init__(self, grid: Grid3):
        self.grid = grid
        self.rows, self.cols, self.vals = [], [], []

    def add(self, pts, m, offset, comp, coef):
        """Add ``coef * w^comp`` at ``pts + offset`` to equation ``m`` of each point in ``pts``."""
        coef = np.broadcast_to(np.asarray(coef, dtype=np.float64), pts[0].shape)
        keep = coef != 0
        if not np.any(keep):
            return
        t, i, j = (p[keep] for p in pts)
        nb = (t + offset[0], i + offset[1], j + offset[2])
        for ax, x in enumerate(nb):
            if np.any((x < 0) | (x >= self.grid.shape[ax])):
                raise GridTooSmall(f"stencil leaves the grid along axis {ax}")
        self.rows.append(self.grid.flat_index(t, i, j) * 2 + m)
        self.cols.append(self.grid.flat_index(*nb) * 2 + comp)
        self.vals.append(coef[keep])

    def first_derivative(self, pts, m, axis, comp, coef):
        """``coef * d_axis w^comp``: central where possible, else one-sided inward."""
        n = self.grid.shape[axis]
        h = self.grid.spacing[axis]
        coef = np.broadcast_to(np.asarray(coef, dtype=np.float64), pts[0].shape)
        x = pts[axis]
        e = [0, 0, 0]
        e[axis] = 1
        plus, minus, zero = tuple(e), tuple(-k for k in e), (0, 0, 0)
        if n == 1:
            if np.any(coef != 0):
                raise GridTooSmall(f"derivative along axis {axis} with a single sample")
            return
        lo, hi = x == 0, x == n - 1
        mid = ~(lo | hi)
        sel = lambda mask: tuple(p[mask] for p in pts)  # noqa: E731
        self.add(sel(mid), m, plus, comp, coef[mid] / (2 * h))
        self.add(sel(mid), m, minus, comp, -coef[mid] / (2 * h))
        self.add(sel(lo), m, plus, comp, coef[lo] / h)
        self.add(sel(lo), m, zero, comp, -coef[lo] / h)
        self.add(sel(hi), m, zero, comp, coef[hi] / h)
        self.add(sel(hi), m, minus, comp, -coef[hi] / h)

    def matrix(self, n):
        if self.rows:
            rows, cols, vals = (np.concatenate(x) for x in (self.rows, self.cols, self.vals))
        else:
            rows = cols = np.zeros(0, dtype=np.int64)
            vals = np.zeros(0)
        A = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
        A.sum_duplicates()
        A.sort_indices()
        return A


def _interior_rows(T: _Triplets, pts, cf, grid: Grid3):
    h = grid.spacing
    for m in range(2):
        for nu in range(3):
            e = [0, 0, 0]
            e[nu] = 1
            dnn = cf.d[..., nu, nu] / h[nu] ** 2
            T.add(pts, m, tuple(e), m, dnn)
            T.add(pts, m, tuple(-k for k in e), m, dnn)
            T.add(pts, m, (0, 0, 0), m, -2 * dnn)
            for sg in range(nu + 1, 3):
                dns = (cf.d[..., nu, sg] + cf.d[..., sg, nu]) / (4 * h[nu] * h[sg])
                for s1 in (1, -1):
                    for s2 in (1, -1):
                        off = [0, 0, 0]
                        off[nu], off[sg] = s1, s2
                        T.add(pts, m, tuple(off), m, s1 * s2 * dns)
        for sg in range(3):
            for i in range(2):
                T.first_derivative(pts, m, sg, i, cf.c[..., sg, m, i])
        for i in range(2):
            T.add(pts, m, (0, 0, 0), i, cf.b[..., m, i])


def _face_rows(T: _Triplets, pts, cf, nu: int, side):
    for m in range(2):
        for sg in range(3):
            T.first_derivative(pts, m, sg, m, side * cf.q[..., nu, sg])
        for i in range(2):
            T.add(pts, m, (0, 0, 0), i, side * cf.p[..., nu, m, i])


def _corner_rows(T: _Triplets, pts, cf, s1, s2, grid: Grid3):
    h = grid.h1
    k = s1[:, None] * cf.q[..., 1, :] + s2[:, None] * cf.q[..., 2, :]
    P = s1[:, None, None] * cf.p[..., 1, :, :] + s2[:, None, None] * cf.p[..., 2, :, :]
    # k^1 d_1 + k^2 d_2 = a (d . grad) + b (d_perp . grad), d = (s1, s2), d_perp = (s1, -s2)
    a = 0.5 * (s1 * k[:, 1] + s2 * k[:, 2])
    b = 0.5 * (s1 * k[:, 1] - s2 * k[:, 2])
    zero = np.zeros_like(s1)
    diag = (zero, -s1, -s2)
    along1 = (zero, -s1, zero)
    along2 = (zero, zero, -s2)
    for m in range(2):
        T.first_derivative(pts, m, 0, m, k[:, 0])
        _add_offsets(T, pts, m, (0, 0, 0), m, a / h)
        _add_offsets(T, pts, m, diag, m, -a / h)
        _add_offsets(T, pts, m, along2, m, b / h)
        _add_offsets(T, pts, m, along1, m, -b / h)
        for i in range(2):
            T.add(pts, m, (0, 0, 0), i, P[:, m, i])


def _add_offsets(T: _Triplets, pts, m, offsets, comp, coef):
    """Like ``T.add`` but with a per-point offset (arrays or scalars per axis)."""
    offs = [np.broadcast_to(o, pts[0].shape) for o in offsets]
    keys = np.stack(offs, axis=-1)
    for key in np.unique(keys, axis=0):
        mask = np.all(keys == key, axis=-1)
        T.add(tuple(p[mask] for p in pts), m, tuple(int(x) for x in key), comp, np.asarray(coef)[mask])


def _assemble(cf: ElCoefficients) -> tuple[sp.csr_matrix, np.ndarray]:
    grid = cf.grid
    kind = classify_rows(cf)
    T = _Triplets(grid)
    rhs = np.zeros(grid.shape + (2,))

    def points(mask):
        idx = np.nonzero(mask)
        return idx, tuple(np.asarray(x, dtype=np.int64) for x in idx)

    idx, pts = points(kind == INTERIOR)
    _interior_rows(T, pts, _Sliced(cf, idx), grid)
    rhs[idx] = cf.a[idx]

    n0, n1, n2 = grid.shape
    for nu, K, n in ((0, FACE0, n0), (1, FACE1, n1), (2, FACE2, n2)):
        idx, pts = points(kind == K)
        side = np.where(pts[nu] == 0, -1.0, 1.0)
        _face_rows(T, pts, _Sliced(cf, idx), nu, side)

    idx, pts = points(kind == CORNER)
    s1 = np.where(pts[1] == 0, -1, 1)
    s2 = np.where(pts[2] == 0, -1, 1)
    _corner_rows(T, pts, _Sliced(cf, idx), s1, s2, grid)

    A = T.matrix(2 * grid.size)
    return A, rhs.reshape(-1)


class _Sliced:
    """Coefficient arrays restricted to a set of gridpoints."""

    def __init__(self, cf: ElCoefficients, idx):
        for name in "abcdpq":
            setattr(self, name, getattr(cf, name)[idx])


def assemble(coeffs: ElCoefficients, mode: str = "spatiotemporal", frame: int | None = None) -> SparseSystem:
    """Sparse system for all frames at once, or for one frame (``mode="framewise"``)."""
    if mode == "spatiotemporal":
        A, rhs = _assemble(coeffs)
        return SparseSystem(A, rhs, coeffs.grid, mode)
    if mode == "framewise":
        if coeffs.reg.lambda0 != 0:
            raise ModeMismatch(f"framewise mode requires lambda0 = 0, got {coeffs.reg.lambda0}")
        if frame is None or not 0 <= frame < coeffs.grid.n0:
            raise ModeMismatch(f"framewise mode needs a frame index in [0, {coeffs.grid.n0})")
        cf = coeffs.frame(frame)
        A, rhs = _assemble(cf)
        return SparseSystem(A, rhs, cf.grid, mode, frame)
    raise ModeMismatch(f"unknown mode {mode!r}")


def dump_coo(matrix: sp.spmatrix, path) -> None:
    """Write ``row col value`` lines (17 significant digits), row-major order."""
    A = sp.csr_matrix(matrix)
    with open(path, "w") as fh:
        for r in range(A.shape[0]):
            for k in range(A.indptr[r], A.indptr[r + 1]):
                fh.write(f"{r} {A.indices[k]} {A.data[k]:.17g}\n")


def el_residual(w: np.ndarray, coeffs: ElCoefficients) -> np.ndarray:
    """Discrete residual ``A w - rhs`` evaluated point by point without forming A.

    A plain loop over gridpoints; intended for small grids and as a check on
    :func:`assemble`.
    """
    grid = coeffs.grid
    w = check_field(w, grid, 2, "w")
    n = grid.shape
    h = grid.spacing
    vanish = temporal_condition_vanishes(coeffs)
    out = np.zeros(grid.shape + (2,))

    def W(p, comp):
        for ax in range(3):
            if not 0 <= p[ax] < n[ax]:
                raise GridTooSmall("stencil leaves the grid")
        return w[p[0], p[1], p[2], comp]

    def shift(p, ax, k):
        q = list(p)
        q[ax] += k
        return tuple(q)

    def d1(p, ax, comp):
        if n[ax] == 1:
            return 0.0
        if p[ax] == 0:
            return (W(shift(p, ax, 1), comp) - W(p, comp)) / h[ax]
        if p[ax] == n[ax] - 1:
            return (W(p, comp) - W(shift(p, ax, -1), comp)) / h[ax]
        return (W(shift(p, ax, 1), comp) - W(shift(p, ax, -1), comp)) / (2 * h[ax])

    for t in range(n[0]):
        for i in range(n[1]):
            for j in range(n[2]):
                p = (t, i, j)
                bnd1 = i in (0, n[1] - 1)
                bnd2 = j in (0, n[2] - 1)
                bnd0 = t in (0, n[0] - 1) and not vanish[p]
                for m in range(2):
                    if bnd1 and bnd2:
                        s = (0, -1 if i == 0 else 1, -1 if j == 0 else 1)
                        val = 0.0
                        kvec = [s[1] * coeffs.q[p][1, sg] + s[2] * coeffs.q[p][2, sg] for sg in range(3)]
                        if kvec[0] != 0:
                            val += kvec[0] * d1(p, 0, m)
                        # one-sided first derivatives along each axis, and along the inward diagonal
                        inward_diag = (t, i - s[1], j - s[2])
                        ddiag = (W(p, m) - W(inward_diag, m)) / h[1]  # (s1 d1 + s2 d2) w
                        s1d1 = (W(p, m) - W((t, i - s[1], j), m)) / h[1]
                        s2d2 = (W(p, m) - W((t, i, j - s[2]), m)) / h[2]
                        alpha_ = 0.5 * (s[1] * kvec[1] + s[2] * kvec[2])
                        beta_ = 0.5 * (s[1] * kvec[1] - s[2] * kvec[2])
                        val += alpha_ * ddiag + beta_ * (s1d1 - s2d2)
                        for c in range(2):
                            val += (s[1] * coeffs.p[p][1, m, c] + s[2] * coeffs.p[p][2, m, c]) * W(p, c)
                        out[t, i, j, m] = val
                    elif bnd1 or bnd2 or bnd0:
                        nu = 1 if bnd1 else (2 if bnd2 else 0)
                        side = -1.0 if p[nu] == 0 else 1.0
                        val = 0.0
                        for sg in range(3):
                            qv = coeffs.q[p][nu, sg]
                            if qv != 0:
                                val += qv * d1(p, sg, m)
                        for c in range(2):
                            val += coeffs.p[p][nu, m, c] * W(p, c)
                        out[t, i, j, m] = side * val
                    else:
                        val = 0.0
                        for nu in range(3):
                            for sg in range(3):
                                dv = coeffs.d[p][nu, sg]
                                if dv == 0:
                                    continue
                                if nu == sg:
                                    val += dv * (W(shift(p, nu, 1), m) - 2 * W(p, m) + W(shift(p, nu, -1), m)) / h[nu] ** 2
                                else:
                                    pp = shift(shift(p, nu, 1), sg, 1)
                                    pm = shift(shift(p, nu, 1), sg, -1)
                                    mp = shift(shift(p, nu, -1), sg, 1)
                                    mm = shift(shift(p, nu, -1), sg, -1)
                                    val += dv * (W(pp, m) - W(pm, m) - W(mp, m) + W(mm, m)) / (4 * h[nu] * h[sg])
                        for sg in range(3):
                            for c in range(2):
                                cv = coeffs.c[p][sg, m, c]
                                if cv != 0:
                                    val += cv * d1(p, sg, c)
                        for c in range(2):
                            val += coeffs.b[p][m, c] * W(p, c)
                        out[t, i, j, m] = val - coeffs.a[p][m]
    return out.reshape(-1)
