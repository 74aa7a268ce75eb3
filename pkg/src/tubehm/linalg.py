"""Dense kernels and low-rank machinery: LU, SVD, ACA, truncation.

Dense factorizations defer to LAPACK through scipy; the adaptive cross
approximation and the recompression used by the formatted hierarchical
arithmetic are implemented here.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla


@dataclass
class LowRank:
    """Rank-k factorization U @ V.T with U (m,k) and V (n,k). k = 0 is a zero block."""

    U: np.ndarray
    V: np.ndarray
    converged: bool = True

    @property
    def shape(self) -> tuple[int, int]:
        return (self.U.shape[0], self.V.shape[0])

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    def todense(self) -> np.ndarray:
        return self.U @ self.V.T


def zero_lowrank(m: int, n: int) -> LowRank:
    return LowRank(np.zeros((m, 0)), np.zeros((n, 0)))


class SingularMatrixError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class PivotedLU:
    """Packed L\\U factors with the row permutation p such that A[p] = L @ U."""

    lu: np.ndarray
    perm: np.ndarray

    @property
    def n(self) -> int:
        return self.lu.shape[0]


def _perm_from_lapack(piv: np.ndarray) -> np.ndarray:
    p = np.arange(piv.shape[0])
    for i, pi in enumerate(piv):
        p[i], p[pi] = p[pi], p[i]
    return p


def dense_lu(A: np.ndarray) -> PivotedLU:
    """Partial-pivoting LU of a square matrix."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(A, check_finite=False)
    if A.shape[0] and np.min(np.abs(np.diag(lu))) == 0.0:
        raise SingularMatrixError("zero pivot: matrix is singular to working precision")
    return PivotedLU(lu, _perm_from_lapack(piv))


def lu_solve(f: PivotedLU, b: np.ndarray) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    if b.shape[0] != f.n:
        raise ValueError(f"rhs length {b.shape[0]} != {f.n}")
    y = sla.solve_triangular(f.lu, b[f.perm], lower=True, unit_diagonal=True,
                             check_finite=False)
    return sla.solve_triangular(f.lu, y, lower=False, check_finite=False)


def svd(A: np.ndarray):
    """Thin SVD (U, sigma, V) with A ~= U @ diag(sigma) @ V.T."""
    U, s, Vt = np.linalg.svd(np.asarray(A, dtype=float), full_matrices=False)
    return U, s, Vt.T


def numerical_rank(A: np.ndarray, tol_rel: float) -> int:
    """Number of singular values above tol_rel * sigma_1 (0 for A = 0)."""
    if not 0.0 < tol_rel < 1.0:
        raise ValueError("tol_rel must lie in (0, 1)")
    s = np.linalg.svd(np.asarray(A, dtype=float), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > tol_rel * s[0]))


def aca(block, m: int, n: int, tol_rel: float, max_rank: int | None = None,
        anchor: float = np.inf) -> LowRank:
    """Fully-pivoted adaptive cross approximation of an explicit block.

    `block` is either an (m, n) array or an entry evaluator (i, j) -> float.
    Crosses are subtracted at the residual's largest-magnitude entry until
    max|R| * sqrt(m*n) <= tol_rel * ||accumulated||_F, or the rank cap is
    hit (the result is then flagged converged=False, not an error).

    `anchor` caps the norm the tolerance is relative to: blocks whose norm
    exceeds it are resolved down to tol_rel * anchor, which keeps the
    truncation error of oversized factor blocks bounded on the scale of
    the original operator.
    """
    if tol_rel <= 0.0:
        raise ValueError("tol_rel must be positive")
    if callable(block):
        R = np.array([[float(block(i, j)) for j in range(n)] for i in range(m)])
    else:
        R = np.array(block, dtype=float)
        if R.shape != (m, n):
            raise ValueError(f"block shape {R.shape} != ({m}, {n})")
    if max_rank is None:
        max_rank = max(1, min(m, n) // 2)
    if max_rank < 1:
        raise ValueError("max_rank must be >= 1")

    scale = np.sqrt(m * n)
    us: list[np.ndarray] = []
    vs: list[np.ndarray] = []
    acc_sq = 0.0  # ||sum_k u_k v_k^T||_F^2, updated incrementally
    converged = True

    def _tol_scale():
        return min(np.sqrt(acc_sq), anchor)

    while True:
        flat = np.argmax(np.abs(R))
        i, j = divmod(int(flat), n)
        pivot = R[i, j]
        if abs(pivot) * scale <= tol_rel * _tol_scale():
            break
        u = R[:, j].copy()
        v = R[i, :] / pivot
        R -= np.outer(u, v)
        acc_sq += (u @ u) * (v @ v)
        for up, vp in zip(us, vs):
            acc_sq += 2.0 * (u @ up) * (v @ vp)
        us.append(u)
        vs.append(v)
        if len(us) >= max_rank:
            flat = np.argmax(np.abs(R))
            i, j = divmod(int(flat), n)
            if abs(R[i, j]) * scale > tol_rel * _tol_scale():
                converged = False
            break
    if not us:
        return LowRank(np.zeros((m, 0)), np.zeros((n, 0)))
    return LowRank(np.column_stack(us), np.column_stack(vs), converged)


def _truncate_factors(U: np.ndarray, V: np.ndarray, tol_rel: float,
                      floor: float = 0.0, anchor: float = np.inf) -> LowRank:
    Qu, Ru = np.linalg.qr(U)
    Qv, Rv = np.linalg.qr(V)
    W, s, Zt = np.linalg.svd(Ru @ Rv.T)
    if s.size == 0:
        return zero_lowrank(U.shape[0], V.shape[0])
    threshold = tol_rel * min(max(s[0], floor), anchor)
    if s[0] <= threshold:
        return zero_lowrank(U.shape[0], V.shape[0])
    keep = int(np.sum(s > threshold))
    # On the plain recompression path, extend so the dropped Frobenius
    # tail stays within tol_rel * ||s||_2; an addition's floor instead
    # licenses dropping cancellation noise outright.
    if floor == 0.0 and not np.isfinite(anchor):
        total = np.linalg.norm(s)
        tails = np.sqrt(np.cumsum(s[::-1] ** 2))[::-1]  # tails[k] = ||s[k:]||
        while keep < s.size and tails[keep] > tol_rel * total:
            keep += 1
    return LowRank(Qu @ W[:, :keep] * s[:keep], Qv @ Zt[:keep].T)


def truncate(lr: LowRank, tol_rel: float) -> LowRank:
    """Recompress: QR both factors, SVD the core, keep sigma_i > tol_rel * sigma_1."""
    if lr.rank == 0:
        return LowRank(lr.U.copy(), lr.V.copy())
    return _truncate_factors(lr.U, lr.V, tol_rel)


def lowrank_add(a: LowRank, b: LowRank, tol_rel: float,
                anchor: float = np.inf) -> LowRank:
    """Truncated sum a + b.

    The truncation threshold is floored at tol_rel * max(||a||, ||b||) so
    that exact cancellations collapse to rank 0 instead of keeping noise,
    and capped at tol_rel * anchor so blocks larger than the anchor scale
    are still resolved down to it.
    """
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if b.rank == 0:
        return truncate(a, tol_rel)
    if a.rank == 0:
        return truncate(b, tol_rel)
    U = np.hstack([a.U, b.U])
    V = np.hstack([a.V, b.V])
    return _truncate_factors(U, V, tol_rel, floor=max(_frob(a), _frob(b)),
                             anchor=anchor)


def _frob(lr: LowRank) -> float:
    if lr.rank == 0:
        return 0.0
    return float(np.sqrt(np.abs(np.sum((lr.U.T @ lr.U) * (lr.V.T @ lr.V)))))
