import copy

import numpy as np
import pytest
import scipy.sparse as sp

from tubehm.clustering import (DENSE, INNER, LOW_RANK, build_block_tree,
                               build_tube_tree, permute_system)
from tubehm.fem import ProblemSpec, SparseSystem, assemble
from tubehm.flow import CONST
from tubehm.hmatrix import (FactorizationError, HMatrix, compression, densify,
                            dump_structure, err_metric, from_sparse, h_lu,
                            h_lu_solve, lu_dense_factors, matvec,
                            multiply_update, solve_lower_into,
                            solve_upper_right_into, structure_json,
                            _solve_lower, _solve_upper_t)
from tubehm.linalg import LowRank, dense_lu, lu_solve, zero_lowrank


def grid_system(n=8, eps=1.0, field=CONST, bc="dirichlet"):
    m = build_structured_mesh(n)
    return assemble(m, ProblemSpec(eps, 2.0, field, bc))


from tubehm.mesh import build_structured_mesh  # noqa: E402


def tube_pipeline(n=8, eps=1.0, field=CONST, n_min=2, eta=1.0, tol=1e-6):
    s = grid_system(n, eps, field)
    pts = s.dof_points
    svals = pts[:, 1] if field is CONST else None
    assert svals is not None, "test helper only supports the constant field"
    tree = build_tube_tree(pts, svals, pts[:, 0], n_min)
    sperm = permute_system(s, tree)
    bt = build_block_tree(tree, tree, eta)
    H = from_sparse(sperm, bt, tol)
    return sperm, tree, bt, H


def identity_pipeline(n_points=30, n_min=3, tol=1e-6):
    pts = np.column_stack([np.zeros(n_points), np.linspace(-1, 1, n_points)])
    tree = build_tube_tree(pts, pts[:, 1], pts[:, 0], n_min)
    s = SparseSystem(sp.eye(n_points, format="csr"), pts)
    sperm = permute_system(s, tree)
    bt = build_block_tree(tree, tree, 1.0)
    return sperm, from_sparse(sperm, bt, tol)


def single_leaf_h(A, tol=1e-12):
    n = A.shape[0]
    pts = np.column_stack([np.zeros(n), np.arange(n, dtype=float)])
    tree = build_tube_tree(pts, pts[:, 1], pts[:, 0], n)
    s = SparseSystem(sp.csr_matrix(A), pts)
    bt = build_block_tree(tree, tree, 1.0)
    return s, from_sparse(s, bt, tol)


# --- construction ------------------------------------------------------------

def test_from_sparse_matvec_oracle():
    sperm, tree, bt, H = tube_pipeline(n=8)
    rng = np.random.default_rng(0)
    for _ in range(5):
        x = rng.standard_normal(sperm.n_dof)
        assert np.linalg.norm(matvec(H, x) - sperm.A @ x) <= 1e-12 * np.linalg.norm(x)


def test_from_sparse_far_blocks_rank_zero():
    sperm, tree, bt, H = tube_pipeline(n=8)
    h = 2.0 / 8

    def walk(node):
        if node.kind == INNER:
            for row in node.children:
                for ch in row:
                    walk(ch)
        elif node.kind == LOW_RANK:
            gap = max(node.row.t_interval[0] - node.col.t_interval[1],
                      node.col.t_interval[0] - node.row.t_interval[1], 0.0)
            if gap > h + 1e-12:  # beyond the one-ring stencil: exactly zero
                assert node.lr.rank == 0

    walk(H)


def test_single_leaf_tree_is_dense_copy():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((7, 7))
    s, H = single_leaf_h(A)
    assert H.kind == DENSE
    assert np.allclose(H.dense, A)


def test_identity_from_sparse_and_matvec():
    sperm, H = identity_pipeline()
    x = np.arange(30.0)
    assert np.allclose(matvec(H, x), x)
    assert np.allclose(matvec(H, np.zeros(30)), 0.0)


def test_matvec_linearity():
    sperm, tree, bt, H = tube_pipeline(n=8)
    rng = np.random.default_rng(2)
    x, y = rng.standard_normal((2, sperm.n_dof))
    lhs = matvec(H, 2.5 * x - 1.5 * y)
    rhs = 2.5 * matvec(H, x) - 1.5 * matvec(H, y)
    assert np.linalg.norm(lhs - rhs) <= 1e-12 * (np.linalg.norm(x) + np.linalg.norm(y))


# --- multiply_update ---------------------------------------------------------

def test_multiply_update_rank_zero_noop():
    sperm, tree, bt, H = tube_pipeline(n=8)
    before = densify(H).copy()
    z = zero_lowrank(sperm.n_dof, sperm.n_dof)
    multiply_update(H, z, densify(H).copy(), 1e-6)
    multiply_update(H, densify(H).copy(), z, 1e-6)
    assert np.array_equal(densify(H), before)


def test_multiply_update_dense_gemm_oracle():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((6, 6))
    s, H = single_leaf_h(A)
    X = rng.standard_normal((6, 6))
    Y = rng.standard_normal((6, 6))
    multiply_update(H, X, Y, 1e-12)
    assert np.linalg.norm(densify(H) - (A - X @ Y)) < 1e-13


def test_multiply_update_identity_times_self():
    sperm, tree, bt, H = tube_pipeline(n=8, tol=1e-8)
    Iperm, HI = identity_like(H, sperm)
    C = copy.deepcopy(H)
    dense_before = densify(C).copy()
    multiply_update(C, HI, H, 1e-8)
    resid = np.linalg.norm(densify(C))
    assert resid <= 10.0 * 1e-8 * np.linalg.norm(dense_before)


def identity_like(H, sperm):
    eye = SparseSystem(sp.eye(sperm.n_dof, format="csr"), sperm.dof_points)
    HI = from_sparse_same_structure(H, eye)
    return eye, HI


def from_sparse_same_structure(H, s):
    # rebuild an H-matrix with H's exact structure from another sparse matrix
    from tubehm.hmatrix import _compress_dense

    def build(node):
        out = HMatrix(node.row, node.col, node.kind)
        if node.kind == INNER:
            out.children = [[build(ch) for ch in row] for row in node.children]
        else:
            block = s.A[node.row.lo:node.row.hi, node.col.lo:node.col.hi].toarray()
            if node.kind == DENSE:
                out.dense = block
            else:
                out.lr = _compress_dense(block, 1e-12)
        return out

    return build(H)


# --- triangular solves -------------------------------------------------------

def test_solve_lower_upper_against_dense_oracle():
    sperm, tree, bt, H = tube_pipeline(n=8, tol=1e-12)
    factors = h_lu(H, 1e-12)
    L, U = lu_dense_factors(factors)
    rng = np.random.default_rng(4)
    M = rng.standard_normal((sperm.n_dof, 3))
    assert np.linalg.norm(_solve_lower(factors.matrix, M)
                          - np.linalg.solve(L, M)) < 1e-9
    assert np.linalg.norm(_solve_upper_t(factors.matrix, M)
                          - np.linalg.solve(U.T, M)) < 1e-9


def test_solve_identity_leaves_b_unchanged():
    sperm, H = identity_pipeline(tol=1e-12)
    factors = h_lu(H, 1e-12)
    rng = np.random.default_rng(5)
    lrU, lrV = rng.standard_normal((30, 2)), rng.standard_normal((30, 2))
    B = HMatrix(factors.matrix.row, factors.matrix.col, LOW_RANK,
                lr=LowRank(lrU.copy(), lrV.copy()))
    solve_lower_into(factors.matrix, B, 1e-12)
    assert np.allclose(B.lr.U, lrU, atol=1e-14)
    assert B.lr.V is not lrV or np.array_equal(B.lr.V, lrV)
    solve_upper_right_into(factors.matrix, B, 1e-12)
    assert np.allclose(B.lr.V, lrV, atol=1e-14)


def test_solve_lowrank_contract_untouched_factors():
    sperm, tree, bt, H = tube_pipeline(n=8, tol=1e-12)
    factors = h_lu(H, 1e-12)
    L, U = lu_dense_factors(factors)
    rng = np.random.default_rng(6)
    lr = LowRank(rng.standard_normal((sperm.n_dof, 2)),
                 rng.standard_normal((sperm.n_dof, 2)))
    B = HMatrix(factors.matrix.row, factors.matrix.col, LOW_RANK,
                lr=LowRank(lr.U.copy(), lr.V.copy()))
    solve_lower_into(factors.matrix, B, 1e-12)
    # V factor bit-identical, U factor forward-substituted
    assert np.array_equal(B.lr.V, lr.V)
    assert np.linalg.norm(B.lr.U - np.linalg.solve(L, lr.U)) < 1e-9

    B2 = HMatrix(factors.matrix.row, factors.matrix.col, LOW_RANK,
                 lr=LowRank(lr.U.copy(), lr.V.copy()))
    solve_upper_right_into(factors.matrix, B2, 1e-12)
    assert np.array_equal(B2.lr.U, lr.U)
    assert np.linalg.norm(B2.lr.V - np.linalg.solve(U.T, lr.V)) < 1e-9


# --- factorization -----------------------------------------------------------

def test_h_lu_single_leaf_equals_dense_lu():
    rng = np.random.default_rng(7)
    A = rng.standard_normal((9, 9)) + 9 * np.eye(9)
    s, H = single_leaf_h(A)
    factors = h_lu(H, 1e-12)
    b = rng.standard_normal(9)
    assert np.allclose(h_lu_solve(factors, b), lu_solve(dense_lu(A), b), atol=1e-12)


def test_h_lu_identity_structure():
    sperm, H = identity_pipeline(tol=1e-12)
    factors = h_lu(H, 1e-12)

    def walk(node):
        if node.kind == INNER:
            for row in node.children:
                for ch in row:
                    walk(ch)
        elif node.kind == LOW_RANK:
            assert node.lr.rank == 0
        elif node.lu is not None:  # factored diagonal leaf: L = U = I
            assert np.allclose(node.lu.lu, np.eye(node.shape[0]))
        else:  # off-diagonal dense leaf of the identity: zero block
            assert np.allclose(node.dense, 0.0)

    walk(factors.matrix)
    b = np.linspace(0, 1, 30)
    assert np.allclose(h_lu_solve(factors, b), b)


def test_h_lu_matches_dense_solve():
    sperm, tree, bt, H = tube_pipeline(n=8, tol=1e-12)
    dense = sperm.A.toarray()
    factors = h_lu(H, 1e-12)
    rng = np.random.default_rng(8)
    for _ in range(3):
        b = rng.standard_normal(sperm.n_dof)
        x_h = h_lu_solve(factors, b)
        x_d = np.linalg.solve(dense, b)
        assert np.linalg.norm(x_h - x_d) <= 1e-9 * np.linalg.norm(x_d)


def test_h_lu_structure_preserved():
    sperm, tree, bt, H = tube_pipeline(n=8, tol=1e-6)
    before = [(n.kind, n.shape) for n in _walk(H)]
    factors = h_lu(H, 1e-6)
    after = [(n.kind, n.shape) for n in _walk(factors.matrix)]
    assert before == after


def _walk(node):
    yield node
    if node.kind == INNER:
        for row in node.children:
            for ch in row:
                yield from _walk(ch)


def test_h_lu_reconstruction():
    sperm, tree, bt, H = tube_pipeline(n=8, tol=1e-12)
    dense = sperm.A.toarray()
    factors = h_lu(H, 1e-12)
    L, U = lu_dense_factors(factors)
    err = np.linalg.norm(L @ U - dense) / np.linalg.norm(dense)
    assert err <= 1e-8


def test_h_lu_singular_leaf_reports_path():
    s, H = single_leaf_h(np.zeros((4, 4)))
    with pytest.raises(FactorizationError, match="root"):
        h_lu(H, 1e-6)


def test_h_lu_solve_convection_dominated():
    sperm, tree, bt, H = tube_pipeline(n=8, eps=1e-6, tol=1e-10)
    factors = h_lu(H, 1e-10)
    rng = np.random.default_rng(9)
    x = rng.standard_normal(sperm.n_dof)
    x /= np.linalg.norm(x)
    assert err_metric(factors, sperm, x) <= 1e-6


# --- metrics -----------------------------------------------------------------

def test_compression_single_dense_leaf():
    s, H = single_leaf_h(np.eye(6))
    assert compression(H) == 0.0


def test_compression_single_lowrank_leaf():
    m, n, k = 12, 8, 2
    pts = np.column_stack([np.zeros(max(m, n)), np.arange(max(m, n), dtype=float)])
    tree = build_tube_tree(pts[:m], pts[:m, 1], pts[:m, 0], m)
    tree2 = build_tube_tree(pts[:n], pts[:n, 1] + 100.0, pts[:n, 0], n)
    node = HMatrix(tree.root, tree2.root, LOW_RANK,
                   lr=LowRank(np.ones((m, k)), np.ones((n, k))))
    assert compression(node) == pytest.approx(1.0 - k * (m + n) / (m * n))


def test_compression_half():
    # two dense d x d diagonal blocks, rank-0 off-diagonal blocks, N = 2d;
    # the two point groups sit far apart so the off-diagonals are admissible
    d = 5
    ys = np.concatenate([np.arange(float(d)), 1000.0 + np.arange(float(d))])
    pts = np.column_stack([np.zeros(2 * d), ys])
    tree = build_tube_tree(pts, pts[:, 1], pts[:, 0], d)
    A = sp.eye(2 * d, format="csr")
    bt = build_block_tree(tree, tree, 1.0)
    H = from_sparse(SparseSystem(A, pts), bt, 1e-6)
    kinds = sorted(l.kind for l in _walk(H) if l.kind != INNER)
    assert kinds == [DENSE, DENSE, LOW_RANK, LOW_RANK]
    assert compression(H) == pytest.approx(0.5)


def test_err_metric_identity_and_guard():
    sperm, H = identity_pipeline(tol=1e-12)
    factors = h_lu(H, 1e-12)
    e1 = np.zeros(30)
    e1[0] = 1.0
    assert err_metric(factors, sperm, e1) == 0.0
    with pytest.raises(ValueError):
        err_metric(factors, sperm, np.zeros(30))


def test_err_metric_exact_factors():
    sperm, tree, bt, H = tube_pipeline(n=6, tol=1e-14)
    factors = h_lu(H, 1e-14)
    rng = np.random.default_rng(10)
    x = rng.standard_normal(sperm.n_dof)
    x /= np.linalg.norm(x)
    assert err_metric(factors, sperm, x) <= 1e-10


def test_structure_json(tmp_path):
    sperm, tree, bt, H = tube_pipeline(n=4, n_min=3)
    d = structure_json(H)
    assert d["kind"] == INNER and d["rows"] == [0, sperm.n_dof]
    path = tmp_path / "structure.json"
    dump_structure(H, str(path))
    import json
    loaded = json.loads(path.read_text())
    assert loaded["cols"] == [0, sperm.n_dof]
