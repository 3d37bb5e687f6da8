"""Restarted GMRES with modified Gram-Schmidt Arnoldi and Givens rotations.

All inner products use numpy's pairwise summation rather than BLAS so that
results do not depend on the number of BLAS threads.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .model import DimMismatch, ValidationError


@dataclass(frozen=True)
class SolverConfig:
    rel_tol: float = 0.02
    max_iters: int = 2000
    restart: int = 30
    initial_guess: np.ndarray | None = None
    reorthogonalize: bool = False
    # "none" reproduces plain GMRES; "block_jacobi" (2x2 pointwise blocks) is a
    # right preconditioner and an engineering option only.
    preconditioner: str = "none"

    def __post_init__(self):
        if not self.rel_tol > 0:
            raise ValidationError("rel_tol must be positive")
        if self.restart < 1:
            raise ValidationError("restart must be >= 1")
        if self.max_iters < self.restart:
            raise ValidationError("max_iters must be >= restart")
        if self.preconditioner not in ("none", "block_jacobi"):
            raise ValidationError(f"unknown preconditioner {self.preconditioner!r}")


@dataclass
class SolveReport:
    iterations: int
    rel_residual: float
    converged: bool
    wall_time: float
    breakdown: bool = False
    # relative residual estimates per inner iteration, one list per restart cycle
    history: list[list[float]] = field(default_factory=list)


def matvec(matrix, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if matrix.shape[1] != x.shape[0]:
        raise DimMismatch(f"matrix has {matrix.shape[1]} columns, vector has {x.shape[0]} entries")
    return np.asarray(matrix @ x, dtype=np.float64)


def _dot(x, y) -> float:
    return float(np.add.reduce(x * y))


def _norm(x) -> float:
    return math.sqrt(_dot(x, x))


def block_jacobi(matrix) -> spla.LinearOperator:
    """Inverse of the 2x2 diagonal blocks coupling (w^1, w^2) at each gridpoint."""
    A = sp.csr_matrix(matrix)
    n = A.shape[0]
    if n % 2:
        raise DimMismatch("block preconditioner needs an even number of unknowns")
    blocks = np.zeros((n // 2, 2, 2))
    for r in range(2):
        for c in range(2):
            blocks[:, r, c] = A[np.arange(r, n, 2), np.arange(c, n, 2)].A1
    det = blocks[:, 0, 0] * blocks[:, 1, 1] - blocks[:, 0, 1] * blocks[:, 1, 0]
    singular = np.abs(det) < 1e-300
    det[singular] = 1.0
    inv = np.empty_like(blocks)
    inv[:, 0, 0] = blocks[:, 1, 1] / det
    inv[:, 1, 1] = blocks[:, 0, 0] / det
    inv[:, 0, 1] = -blocks[:, 0, 1] / det
    inv[:, 1, 0] = -blocks[:, 1, 0] / det
    inv[singular] = np.eye(2)

    def apply(x):
        x2 = np.asarray(x).reshape(-1, 2)
        return (inv[:, :, 0] * x2[:, :1] + inv[:, :, 1] * x2[:, 1:]).reshape(-1)

    return spla.LinearOperator((n, n), matvec=apply, dtype=np.float64)


def _preconditioner(matrix, kind: str):
    if kind == "none":
        return None
    return block_jacobi(matrix)


def gmres(system, config: SolverConfig = SolverConfig()):
    """Solve ``A x = b`` for a :class:`~evflow.assembly.SparseSystem` (or ``(A, b)`` pair).

    Stops once the true relative residual ``|b - A x| / |b|`` is at most
    ``config.rel_tol`` or after ``config.max_iters`` inner iterations.
    Returns ``(x, report)``.
    """
    A, b = (system.matrix, system.rhs) if hasattr(system, "matrix") else system
    b = np.asarray(b, dtype=np.float64)
    n = b.shape[0]
    if A.shape != (n, n):
        raise DimMismatch(f"matrix {A.shape} does not match rhs of length {n}")
    start = time.perf_counter()
    bnorm = _norm(b)
    if bnorm == 0.0:
        return np.zeros(n), SolveReport(0, 0.0, True, time.perf_counter() - start)

    x = np.zeros(n) if config.initial_guess is None else np.array(config.initial_guess, dtype=np.float64).reshape(-1)
    if x.shape[0] != n:
        raise DimMismatch("initial guess has the wrong length")
    M = _preconditioner(A, config.preconditioner)
    prec = (lambda v: v) if M is None else (lambda v: np.asarray(M.matvec(v), dtype=np.float64))

    m = config.restart
    iters = 0
    history: list[list[float]] = []
    breakdown = False
    r = b - matvec(A, x)
    rel = _norm(r) / bnorm
    while rel > config.rel_tol and iters < config.max_iters and not breakdown:
        beta = _norm(r)
        V = np.zeros((m + 1, n))
        Z = np.zeros((m, n)) if M is not None else None
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        cycle = []
        k = 0
        stalled = False
        while k < m and iters < config.max_iters:
            zk = prec(V[k])
            if Z is not None:
                Z[k] = zk
            wv = matvec(A, zk)
            for j in range(k + 1):
                H[j, k] = _dot(wv, V[j])
                wv -= H[j, k] * V[j]
            if config.reorthogonalize:
                for j in range(k + 1):
                    corr = _dot(wv, V[j])
                    H[j, k] += corr
                    wv -= corr * V[j]
            H[k + 1, k] = _norm(wv)
            # apply previous rotations, then a new one zeroing H[k+1, k]
            for j in range(k):
                hj, hj1 = H[j, k], H[j + 1, k]
                H[j, k] = cs[j] * hj + sn[j] * hj1
                H[j + 1, k] = -sn[j] * hj + cs[j] * hj1
            denom = math.hypot(H[k, k], H[k + 1, k])
            hk1 = H[k + 1, k]
            if denom == 0.0:
                cs[k], sn[k] = 1.0, 0.0
            else:
                cs[k], sn[k] = H[k, k] / denom, hk1 / denom
            H[k, k] = denom
            H[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]
            iters += 1
            k += 1
            cycle.append(abs(g[k]) / bnorm)
            if hk1 <= 1e-14 * beta:
                # Krylov space is invariant: the cycle's iterate is the best available
                stalled = True
                break
            V[k] = wv / hk1
            if cycle[-1] <= config.rel_tol:
                break
        history.append(cycle)
        if stalled:
            # H may be rank deficient here; take the minimum-norm least-squares step
            y = np.linalg.lstsq(H[:k, :k], g[:k], rcond=1e-12)[0]
        else:
            y = _upper_solve(H[:k, :k], g[:k])
        basis = Z if Z is not None else V
        for j in range(k):
            x = x + y[j] * basis[j]
        r = b - matvec(A, x)
        rel = _norm(r) / bnorm
        if stalled and rel > config.rel_tol:
            breakdown = True

    return x, SolveReport(iters, rel, rel <= config.rel_tol, time.perf_counter() - start, breakdown, history)


def _upper_solve(R: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = R.shape[0]
    y = np.zeros(k)
    for i in range(k - 1, -1, -1):
        if R[i, i] == 0.0:
            y[i] = 0.0
            continue
        y[i] = (g[i] - _dot(R[i, i + 1:], y[i + 1:])) / R[i, i]
    return y
