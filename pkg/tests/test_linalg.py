import numpy as np
import pytest

from tubehm.linalg import (LowRank, SingularMatrixError, aca, dense_lu,
                           lowrank_add, lu_solve, numerical_rank, svd,
                           truncate, zero_lowrank)


# --- dense LU ----------------------------------------------------------------

def test_lu_identity():
    f = dense_lu(np.eye(3))
    assert np.allclose(f.lu, np.eye(3))
    assert np.array_equal(f.perm, [0, 1, 2])


def test_lu_single_swap():
    f = dense_lu(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert np.array_equal(f.perm, [1, 0])
    assert np.allclose(np.tril(f.lu, -1), 0.0)
    assert np.allclose(np.triu(f.lu), np.eye(2))


def test_lu_reconstruction_random():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((20, 20))
    f = dense_lu(A)
    L = np.tril(f.lu, -1) + np.eye(20)
    U = np.triu(f.lu)
    err = np.linalg.norm(A[f.perm] - L @ U) / np.linalg.norm(A)
    assert err < 1e-13


def test_lu_rejects_nonsquare_and_singular():
    with pytest.raises(ValueError):
        dense_lu(np.ones((2, 3)))
    with pytest.raises(SingularMatrixError):
        dense_lu(np.zeros((3, 3)))


def test_lu_solve_identity_and_scaling():
    b = np.array([1.0, -2.0, 3.0])
    assert np.allclose(lu_solve(dense_lu(np.eye(3)), b), b)
    assert np.allclose(lu_solve(dense_lu(2.0 * np.eye(3)), b), b / 2.0)


def test_lu_solve_residual_spd():
    rng = np.random.default_rng(1)
    B = rng.standard_normal((30, 30))
    A = B @ B.T + 30.0 * np.eye(30)
    b = rng.standard_normal(30)
    x = lu_solve(dense_lu(A), b)
    assert np.linalg.norm(A @ x - b) / np.linalg.norm(b) < 1e-11


def test_lu_solve_size_mismatch():
    with pytest.raises(ValueError):
        lu_solve(dense_lu(np.eye(2)), np.ones(3))


# --- SVD and rank ------------------------------------------------------------

def test_svd_diagonal():
    U, s, V = svd(np.diag([3.0, 1.0]))
    assert np.allclose(s, [3.0, 1.0])


def test_svd_rank_one():
    u = np.array([1.0, 2.0, -1.0])
    v = np.array([0.5, -1.5])
    U, s, V = svd(np.outer(u, v))
    assert s[0] == pytest.approx(np.linalg.norm(u) * np.linalg.norm(v), rel=1e-13)
    assert s[1] == pytest.approx(0.0, abs=1e-13)


def test_svd_contracts_random_shapes():
    rng = np.random.default_rng(2)
    for m, n in ((15, 7), (7, 15), (20, 20), (64, 33)):
        A = rng.standard_normal((m, n))
        U, s, V = svd(A)
        assert np.all(np.diff(s) <= 0) and np.all(s >= 0)
        err = np.linalg.norm(A - U @ np.diag(s) @ V.T) / np.linalg.norm(A)
        assert err < 1e-12
        # eigen-oracle: singular values vs sqrt eigenvalues of A^T A
        ev = np.sort(np.linalg.eigvalsh(A.T @ A))[::-1]
        k = min(m, n)
        assert np.allclose(s**2, ev[:k], atol=1e-10 * max(1.0, ev[0]))


def test_numerical_rank_cases():
    assert numerical_rank(np.zeros((4, 5)), 1e-6) == 0
    assert numerical_rank(np.diag([1.0, 1e-3, 1e-9]), 1e-6) == 2
    with pytest.raises(ValueError):
        numerical_rank(np.eye(2), 2.0)


def test_numerical_rank_monotone_in_tol():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((12, 9)) @ np.diag(10.0 ** -np.arange(9)) \
        @ rng.standard_normal((9, 9))
    tols = (1e-9, 1e-6, 1e-3, 1e-1)
    ranks = [numerical_rank(A, t) for t in tols]
    assert all(r1 >= r2 for r1, r2 in zip(ranks, ranks[1:]))


# --- ACA ---------------------------------------------------------------------

def test_aca_exact_rank_one():
    u = np.arange(1.0, 7.0)
    v = np.array([2.0, -1.0, 0.5])
    lr = aca(np.outer(u, v), 6, 3, 1e-6)
    assert lr.rank == 1 and lr.converged
    assert np.linalg.norm(lr.todense() - np.outer(u, v)) < 1e-14


def test_aca_zero_matrix():
    lr = aca(np.zeros((5, 4)), 5, 4, 1e-6)
    assert lr.rank == 0 and lr.converged


def test_aca_entry_evaluator():
    lr = aca(lambda i, j: float((i + 1) * (j + 2)), 4, 3, 1e-8)
    assert lr.rank == 1
    assert np.allclose(lr.todense(), np.outer(np.arange(1.0, 5.0), np.arange(2.0, 5.0)))


def test_aca_synthetic_rank_five():
    rng = np.random.default_rng(4)
    A = rng.standard_normal((40, 5)) @ rng.standard_normal((5, 30))
    lr = aca(A, 40, 30, 1e-6, max_rank=15)
    assert lr.rank == 5
    assert np.linalg.norm(lr.todense() - A) <= 1e-5 * np.linalg.norm(A)


def test_aca_max_rank_flag():
    rng = np.random.default_rng(5)
    A = rng.standard_normal((20, 20))  # full rank
    lr = aca(A, 20, 20, 1e-12, max_rank=3)
    assert lr.rank == 3 and not lr.converged


def test_aca_corpus_error_bound():
    # 100 random low-rank-plus-noise matrices; relative error <= 10 * tol
    rng = np.random.default_rng(6)
    tol = 1e-6
    for _ in range(100):
        m = int(rng.integers(5, 50))
        n = int(rng.integers(5, 50))
        k = int(rng.integers(1, min(m, n) // 2 + 1))
        A = rng.standard_normal((m, k)) @ rng.standard_normal((k, n))
        A += 1e-9 * np.linalg.norm(A) / np.sqrt(m * n) * rng.standard_normal((m, n))
        lr = aca(A, m, n, tol, max_rank=min(m, n))
        assert np.linalg.norm(lr.todense() - A) <= 10.0 * tol * np.linalg.norm(A)


# --- truncation --------------------------------------------------------------

def test_truncate_rank_zero():
    lr = truncate(zero_lowrank(4, 3), 1e-6)
    assert lr.rank == 0 and lr.shape == (4, 3)


def test_truncate_duplicated_columns():
    rng = np.random.default_rng(7)
    U = rng.standard_normal((10, 3))
    V = rng.standard_normal((8, 3))
    dup = LowRank(np.hstack([U, U]), np.hstack([V, V]))
    out = truncate(dup, 1e-10)
    assert out.rank == 3
    assert np.linalg.norm(out.todense() - 2.0 * U @ V.T) < 1e-12 * np.linalg.norm(U @ V.T)


def test_truncate_error_bound_and_rank_monotone():
    rng = np.random.default_rng(8)
    a = LowRank(rng.standard_normal((20, 3)), rng.standard_normal((15, 3)))
    b = LowRank(rng.standard_normal((20, 3)), rng.standard_normal((15, 3)))
    merged = LowRank(np.hstack([a.U, b.U]), np.hstack([a.V, b.V]))
    for tol in (1e-10, 1e-4, 1e-1):
        out = truncate(merged, tol)
        assert out.rank <= merged.rank
        dense = merged.todense()
        assert np.linalg.norm(out.todense() - dense) <= tol * np.linalg.norm(dense) + 1e-15


def test_truncate_lossless_at_tiny_tol():
    rng = np.random.default_rng(9)
    lr = LowRank(rng.standard_normal((12, 4)), rng.standard_normal((9, 4)))
    out = truncate(lr, 1e-15)
    assert np.linalg.norm(out.todense() - lr.todense()) < 1e-12 * np.linalg.norm(lr.todense())


# --- low-rank addition -------------------------------------------------------

def test_lowrank_add_zero():
    rng = np.random.default_rng(10)
    a = LowRank(rng.standard_normal((6, 2)), rng.standard_normal((5, 2)))
    out = lowrank_add(a, zero_lowrank(6, 5), 1e-8)
    assert np.linalg.norm(out.todense() - a.todense()) < 1e-12


def test_lowrank_add_cancellation():
    rng = np.random.default_rng(11)
    a = LowRank(rng.standard_normal((7, 3)), rng.standard_normal((6, 3)))
    neg = LowRank(-a.U, a.V)
    for tol in (1e-12, 1e-8, 1e-3):
        assert lowrank_add(a, neg, tol).rank == 0


def test_lowrank_add_oracle():
    rng = np.random.default_rng(12)
    a = LowRank(rng.standard_normal((20, 2)), rng.standard_normal((14, 2)))
    b = LowRank(rng.standard_normal((20, 3)), rng.standard_normal((14, 3)))
    tol = 1e-9
    out = lowrank_add(a, b, tol)
    dense = a.todense() + b.todense()
    assert out.rank <= 5
    assert np.linalg.norm(out.todense() - dense) <= 10.0 * tol * np.linalg.norm(dense)


def test_lowrank_add_shape_mismatch():
    with pytest.raises(ValueError):
        lowrank_add(zero_lowrank(3, 3), zero_lowrank(4, 3), 1e-6)
