import itertools

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from evflow.assembly import (CORNER, FACE0, FACE1, FACE2, INTERIOR, ModeMismatch, assemble, classify_rows,
                             dump_coo, el_residual, unknown_index)
from evflow.geometry import build_atlas
from evflow.model import Grid3, GridTooSmall
from evflow.variational import ElCoefficients, RegParams, data_derivatives, el_coefficients

from fixtures import random_coefficients
from oracles import horn_schunck_system


def surface_coefficients(grid, lambda0=0.2):
    t, x1, x2 = grid.mesh()
    atlas = build_atlas(0.3 * np.sin(2 * x1 + t) * np.cos(3 * x2 - t), grid)
    df = data_derivatives(np.cos(3 * x1 - t) * np.sin(2 * x2 + t), grid)
    return el_coefficients(atlas, df, RegParams(lambda0, 0.1))


def constant_coefficients(grid, d=None):
    sh = grid.shape
    d = -np.eye(3) if d is None else d
    return ElCoefficients(grid, RegParams(1.0, 1.0), np.zeros(sh + (2,)), np.zeros(sh + (2, 2)),
                          np.zeros(sh + (3, 2, 2)), np.broadcast_to(d, sh + (3, 3)).copy(),
                          np.zeros(sh + (3, 2, 2)), np.broadcast_to(-d, sh + (3, 3)).copy())


def test_unknown_index_is_bijective():
    g = Grid3.unit_cube(2, 3, 3)
    seen = {unknown_index(g, m, t, i, j) for m, t, i, j in itertools.product((1, 2), range(2), range(3), range(3))}
    assert seen == set(range(2 * g.size))
    assert unknown_index(g, 2, 1, 2, 0) == ((1 * 9 + 2 * 3 + 0) * 2 + 1)


def test_row_classification_precedence():
    g = Grid3.unit_cube(3, 4, 4)
    kind = classify_rows(random_coefficients(g, 0))
    assert kind[1, 1, 1] == INTERIOR
    assert kind[0, 1, 1] == FACE0 and kind[2, 2, 2] == FACE0
    assert kind[0, 0, 1] == FACE1 and kind[1, 3, 2] == FACE1
    assert kind[0, 1, 0] == FACE2
    assert kind[0, 0, 0] == CORNER and kind[1, 3, 0] == CORNER
    # a vanishing temporal condition leaves the interior equation in place
    kind0 = classify_rows(random_coefficients(g, 0, lambda0=0.0))
    assert kind0[0, 1, 1] == INTERIOR


@pytest.mark.parametrize("shape", [(1, 3, 3), (2, 3, 3), (3, 4, 5), (4, 6, 6), (2, 6, 3)])
@pytest.mark.parametrize("seed", [0, 1])
def test_sparse_equals_loop_oracle(shape, seed):
    g = Grid3(*shape, 0.5, 0.2, 0.2)
    cf = random_coefficients(g, seed, lambda0=0.0 if shape[0] == 1 else 0.3)
    A = assemble(cf)
    w = np.random.default_rng(seed + 10).standard_normal(g.shape + (2,))
    sparse = A.matrix @ w.reshape(-1) - A.rhs
    dense = el_residual(w, cf)
    scale = np.abs(A.matrix).max() * np.abs(w).max()
    assert np.abs(sparse - dense).max() <= 1e-14 * scale


@given(st.integers(0, 10_000))
def test_sparse_equals_loop_oracle_random(seed):
    r = np.random.default_rng(seed)
    g = Grid3(int(r.integers(2, 5)), int(r.integers(3, 7)), int(r.integers(3, 7)), 0.3, 0.25, 0.25)
    cf = random_coefficients(g, seed)
    A = assemble(cf)
    w = r.standard_normal(g.shape + (2,))
    diff = np.abs(A.matrix @ w.reshape(-1) - A.rhs - el_residual(w, cf)).max()
    assert diff <= 1e-14 * np.abs(A.matrix).max() * np.abs(w).max()


def test_structure_invariants():
    g = Grid3.unit_cube(4, 6, 6)
    cf = surface_coefficients(g)
    A = assemble(cf).matrix
    assert np.all(np.diff(A.indptr) >= 1)
    for r in range(A.shape[0]):
        cols = A.indices[A.indptr[r]:A.indptr[r + 1]]
        assert np.all(np.diff(cols) > 0)
    kind = np.repeat(classify_rows(cf).reshape(-1), 2)
    nnz = np.diff(A.indptr)
    assert nnz[kind == INTERIOR].max() <= 22
    assert np.all(np.asarray(abs(A).sum(axis=0)).ravel() > 0), "a column is untouched"


def test_laplacian_rows_sum_to_zero():
    g = Grid3.unit_cube(3, 5, 5)
    A = assemble(constant_coefficients(g)).matrix
    kind = np.repeat(classify_rows(constant_coefficients(g)).reshape(-1), 2)
    sums = np.asarray(A.sum(axis=1)).ravel()
    assert np.abs(sums[kind == INTERIOR]).max() < 1e-12
    assert np.abs(sums).max() < 1e-12  # boundary rows are differences too


def test_horn_schunck_small(rng):
    n = 8
    g2 = Grid3.unit_cube(2, n, n)
    _, x1, x2 = g2.mesh()
    f = np.sin(4 * x1 + 0.3) * np.cos(3 * x2) + 0.1 * rng.standard_normal(g2.shape)
    atlas = build_atlas(np.zeros(g2.shape), g2)
    cf = el_coefficients(atlas, data_derivatives(f, g2), RegParams(0.0, 0.05))
    ours = assemble(cf, "framewise", 0)
    A, b = horn_schunck_system(f[0], f[1], g2.h1, g2.h0, 0.05)
    assert abs(ours.matrix - A).max() <= 1e-14 * abs(A).max()
    assert np.abs(ours.rhs - b).max() <= 1e-14 * max(1.0, np.abs(b).max())


def test_framewise_blocks_equal_spatiotemporal():
    g = Grid3.unit_cube(3, 5, 5)
    _, x1, x2 = g.mesh()
    t = g.mesh()[0]
    atlas = build_atlas(0.2 * np.sin(3 * x1 + t) * x2, g)
    cf = el_coefficients(atlas, data_derivatives(np.cos(2 * x1 - t) * x2, g), RegParams(0.0, 0.1))
    full = assemble(cf)
    blocks = [assemble(cf, "framewise", k) for k in range(g.n0)]
    diag = sp.block_diag([b.matrix for b in blocks], format="csr")
    assert abs(full.matrix - diag).max() == 0
    assert np.array_equal(full.rhs, np.concatenate([b.rhs for b in blocks]))


def test_mode_errors():
    g = Grid3.unit_cube(2, 4, 4)
    cf = random_coefficients(g, 0)
    with pytest.raises(ModeMismatch):
        assemble(cf, "framewise", 0)
    with pytest.raises(ModeMismatch):
        assemble(random_coefficients(g, 0, 0.0), "framewise", 5)
    with pytest.raises(ModeMismatch):
        assemble(cf, "sideways")
    with pytest.raises(GridTooSmall):
        assemble(random_coefficients(Grid3(1, 4, 4, 1, 0.25, 0.25), 0))


def test_zero_coefficients_zero_residual(rng):
    g = Grid3.unit_cube(2, 4, 4)
    cf = constant_coefficients(g, d=np.zeros((3, 3)))
    w = rng.standard_normal(g.shape + (2,))
    assert not np.any(el_residual(w, cf))


def test_dump_coo(tmp_path):
    A = sp.csr_matrix(np.array([[1.0, 0], [1 / 3, -2.5]]))
    path = tmp_path / "a.coo"
    dump_coo(A, path)
    lines = path.read_text().splitlines()
    assert lines == ["0 0 1", "1 0 0.33333333333333331", "1 1 -2.5"]
    assert float(lines[1].split()[2]) == 1 / 3
