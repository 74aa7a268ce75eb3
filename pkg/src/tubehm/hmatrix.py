"""Hierarchical matrices over a block tree: storage, arithmetic, H-LU.

An HMatrix mirrors its BlockNode: dense leaves, low-rank leaves (U V^T),
or a 2x2 grid of children. Formatted arithmetic keeps that structure
fixed; products and Schur updates landing on a low-rank leaf are
truncated back to tolerance. The LU factorization is done in place
("L\\U" storage) with pivoting confined to dense diagonal leaves.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from threadpoolctl import threadpool_limits

from .clustering import BlockNode, ClusterNode, DENSE, INNER, LOW_RANK
from .fem import SparseSystem
from .linalg import (LowRank, PivotedLU, SingularMatrixError, aca, dense_lu,
                     lowrank_add, zero_lowrank)


class StructureError(ValueError):
    pass


class FactorizationError(RuntimeError):
    pass


@dataclass
class HMatrix:
    row: ClusterNode
    col: ClusterNode
    kind: str
    dense: np.ndarray | None = None
    lr: LowRank | None = None
    children: list[list["HMatrix"]] | None = None
    lu: PivotedLU | None = None
    # inverses of the packed triangular leaf factors, cached at
    # factorization time so leaf solves become small matrix products
    linv: np.ndarray | None = None
    uinv: np.ndarray | None = None
    tol_rel: float | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return (self.row.size, self.col.size)


def _compress_dense(D: np.ndarray, tol_rel: float,
                    anchor: float = np.inf) -> LowRank:
    m, n = D.shape
    if not np.any(D):
        return zero_lowrank(m, n)
    # Full rank cap: a far block that is not actually low rank must still
    # be represented to tolerance or the factorization error leaks.
    return aca(D, m, n, tol_rel, max_rank=min(m, n), anchor=anchor)


def from_sparse(A: SparseSystem, bt: BlockNode, tol_rel: float) -> HMatrix:
    """Populate the block-tree structure from a permuted sparse operator."""
    if bt.row.size != A.n_dof or bt.col.size != A.n_dof:
        raise StructureError(
            f"block tree is {bt.row.size}x{bt.col.size}, system has {A.n_dof} dofs"
        )
    csr = A.A

    def build(node: BlockNode) -> HMatrix:
        r, c = node.row, node.col
        if node.kind == INNER:
            kids = [[build(child) for child in row] for row in node.children]
            return HMatrix(r, c, INNER, children=kids)
        sub = csr[r.lo:r.hi, c.lo:c.hi]
        if node.kind == DENSE:
            return HMatrix(r, c, DENSE, dense=sub.toarray())
        if sub.nnz == 0:
            return HMatrix(r, c, LOW_RANK, lr=zero_lowrank(r.size, c.size))
        return HMatrix(r, c, LOW_RANK, lr=_compress_dense(sub.toarray(), tol_rel))

    # leaf-sized kernels dominate: threaded BLAS only adds dispatch cost
    with threadpool_limits(limits=1):
        H = build(bt)
    H.tol_rel = tol_rel
    return H


# ---------------------------------------------------------------------------
# application and densification


def _apply(node, M: np.ndarray) -> np.ndarray:
    """node @ M with M shaped (node cols, k); node may be HMatrix, LowRank, array."""
    if isinstance(node, np.ndarray):
        return node @ M
    if isinstance(node, LowRank):
        return node.U @ (node.V.T @ M)
    if node.kind == DENSE:
        return node.dense @ M
    if node.kind == LOW_RANK:
        return node.lr.U @ (node.lr.V.T @ M)
    split = node.children[0][0].col.size
    M1, M2 = M[:split], M[split:]
    c = node.children
    top = _apply(c[0][0], M1) + _apply(c[0][1], M2)
    bot = _apply(c[1][0], M1) + _apply(c[1][1], M2)
    return np.vstack([top, bot])


def _apply_t(node, M: np.ndarray) -> np.ndarray:
    """node.T @ M with M shaped (node rows, k)."""
    if isinstance(node, np.ndarray):
        return node.T @ M
    if isinstance(node, LowRank):
        return node.V @ (node.U.T @ M)
    if node.kind == DENSE:
        return node.dense.T @ M
    if node.kind == LOW_RANK:
        return node.lr.V @ (node.lr.U.T @ M)
    split = node.children[0][0].row.size
    M1, M2 = M[:split], M[split:]
    c = node.children
    top = _apply_t(c[0][0], M1) + _apply_t(c[1][0], M2)
    bot = _apply_t(c[0][1], M1) + _apply_t(c[1][1], M2)
    return np.vstack([top, bot])


def matvec(H: HMatrix, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[0] != H.col.size:
        raise ValueError(f"vector length {x.shape[0]} != {H.col.size}")
    return _apply(H, x.reshape(-1, 1)).ravel()


def densify(node) -> np.ndarray:
    if isinstance(node, np.ndarray):
        return node
    if isinstance(node, LowRank):
        return node.todense()
    if node.kind == DENSE:
        if node.lu is not None:
            raise StructureError("cannot densify a factored diagonal leaf")
        return node.dense
    if node.kind == LOW_RANK:
        return node.lr.todense()
    c = node.children
    return np.block([[densify(c[0][0]), densify(c[0][1])],
                     [densify(c[1][0]), densify(c[1][1])]])


# ---------------------------------------------------------------------------
# formatted subtraction


def _negate(lr: LowRank) -> LowRank:
    return LowRank(-lr.U, lr.V)


def _skip_floor(tol: float, anchor: float) -> float:
    # Updates below this absolute size are dropped on the anchored path;
    # the accumulated skip error stays far below the tol * anchor level
    # committed by every regular truncation.
    return 1e-3 * tol * anchor if np.isfinite(anchor) else 0.0


def _subtract_lowrank(C: HMatrix, lr: LowRank, tol: float,
                      anchor: float = np.inf) -> None:
    """C <- C - lr, truncating where C stores a low-rank leaf."""
    if lr.rank == 0:
        return
    floor = _skip_floor(tol, anchor)
    if floor > 0.0 and np.linalg.norm(lr.U) * np.linalg.norm(lr.V) <= floor:
        return
    if C.kind == DENSE:
        C.dense -= lr.todense()
    elif C.kind == LOW_RANK:
        C.lr = lowrank_add(C.lr, _negate(lr), tol, anchor=anchor)
    else:
        r0, c0 = C.row.lo, C.col.lo
        for row in C.children:
            for child in row:
                sub = LowRank(lr.U[child.row.lo - r0:child.row.hi - r0],
                              lr.V[child.col.lo - c0:child.col.hi - c0])
                _subtract_lowrank(child, sub, tol, anchor)


def _subtract_dense(C: HMatrix, D: np.ndarray, tol: float,
                    anchor: float = np.inf) -> None:
    if C.kind == DENSE:
        C.dense -= D
    elif C.kind == LOW_RANK:
        if np.linalg.norm(D) <= _skip_floor(tol, anchor):
            return
        C.lr = _compress_dense(C.lr.todense() - D, tol, anchor=anchor)
    else:
        r0, c0 = C.row.lo, C.col.lo
        for row in C.children:
            for child in row:
                _subtract_dense(child, D[child.row.lo - r0:child.row.hi - r0,
                                         child.col.lo - c0:child.col.hi - c0],
                                tol, anchor)


def _payload(op):
    if isinstance(op, HMatrix) and op.kind == LOW_RANK:
        return op.lr
    if isinstance(op, HMatrix) and op.kind == DENSE:
        return op.dense
    return op


def multiply_update(C: HMatrix, X, Y, tol: float,
                    anchor: float = np.inf) -> None:
    """C <- C - X @ Y, formatted into C's structure.

    Low-rank operands propagate through the other factor; inner-times-
    inner recurses blockwise; the remaining mixed cases fall back to a
    dense product of the (small) operands.
    """
    X, Y = _payload(X), _payload(Y)
    if isinstance(X, LowRank):
        if X.rank:
            _subtract_lowrank(C, LowRank(X.U, _apply_t(Y, X.V)), tol, anchor)
        return
    if isinstance(Y, LowRank):
        if Y.rank:
            _subtract_lowrank(C, LowRank(_apply(X, Y.U), Y.V), tol, anchor)
        return
    if C.kind == INNER and isinstance(X, HMatrix) and isinstance(Y, HMatrix):
        for i in (0, 1):
            for j in (0, 1):
                for k in (0, 1):
                    multiply_update(C.children[i][j], X.children[i][k],
                                    Y.children[k][j], tol, anchor)
        return
    _subtract_dense(C, _apply(X, densify(Y)), tol, anchor)


# ---------------------------------------------------------------------------
# triangular solves on the in-place factors


def _solve_lower(L: HMatrix, M: np.ndarray) -> np.ndarray:
    """L^-1 M where L is the unit-lower part of the factored node."""
    if L.kind == DENSE:
        if L.lu is None:
            raise StructureError("diagonal leaf is not factored")
        return L.linv @ M[L.lu.perm]
    c = L.children
    split = c[0][0].row.size
    M1 = _solve_lower(c[0][0], M[:split])
    M2 = _solve_lower(c[1][1], M[split:] - _apply(c[1][0], M1))
    return np.vstack([M1, M2])


def _solve_upper(U: HMatrix, M: np.ndarray) -> np.ndarray:
    """U^-1 M on the upper part of the factored node."""
    if U.kind == DENSE:
        return U.uinv @ M
    c = U.children
    split = c[0][0].row.size
    M2 = _solve_upper(c[1][1], M[split:])
    M1 = _solve_upper(c[0][0], M[:split] - _apply(c[0][1], M2))
    return np.vstack([M1, M2])


def _solve_upper_t(U: HMatrix, M: np.ndarray) -> np.ndarray:
    """U^-T M; lets right-solves act on the V factor of low-rank blocks."""
    if U.kind == DENSE:
        return U.uinv.T @ M
    c = U.children
    split = c[0][0].row.size
    M1 = _solve_upper_t(c[0][0], M[:split])
    M2 = _solve_upper_t(c[1][1], M[split:] - _apply_t(c[0][1], M1))
    return np.vstack([M1, M2])


def solve_lower_into(L: HMatrix, B: HMatrix, tol: float,
                     anchor: float = np.inf) -> None:
    """B <- L^-1 B. Low-rank B: forward substitution on its U factor only."""
    if B.kind == LOW_RANK:
        if B.lr.rank:
            B.lr = LowRank(_solve_lower(L, B.lr.U), B.lr.V)
    elif B.kind == DENSE:
        B.dense = _solve_lower(L, B.dense)
    else:
        if L.kind != INNER:
            raise StructureError("row structure of B outruns L")
        c, b = L.children, B.children
        for j in (0, 1):
            solve_lower_into(c[0][0], b[0][j], tol, anchor)
        for j in (0, 1):
            multiply_update(b[1][j], c[1][0], b[0][j], tol, anchor)
        for j in (0, 1):
            solve_lower_into(c[1][1], b[1][j], tol, anchor)


def solve_upper_right_into(U: HMatrix, B: HMatrix, tol: float,
                           anchor: float = np.inf) -> None:
    """B <- B U^-1. Low-rank B: U^-T acts on the V factor, U untouched."""
    if B.kind == LOW_RANK:
        if B.lr.rank:
            B.lr = LowRank(B.lr.U, _solve_upper_t(U, B.lr.V))
    elif B.kind == DENSE:
        B.dense = _solve_upper_t(U, B.dense.T).T
    else:
        if U.kind != INNER:
            raise StructureError("column structure of B outruns U")
        c, b = U.children, B.children
        for i in (0, 1):
            solve_upper_right_into(c[0][0], b[i][0], tol, anchor)
        for i in (0, 1):
            multiply_update(b[i][1], b[i][0], c[0][1], tol, anchor)
        for i in (0, 1):
            solve_upper_right_into(c[1][1], b[i][1], tol, anchor)


# ---------------------------------------------------------------------------
# factorization


@dataclass
class HLUFactors:
    matrix: HMatrix  # L\U stored in place
    tol_rel: float

    @property
    def n(self) -> int:
        return self.matrix.row.size


def frobenius(H: HMatrix) -> float:
    total = 0.0
    for leaf in _leaves(H):
        if leaf.kind == DENSE:
            total += float(np.sum(leaf.dense**2))
        elif leaf.lr.rank:
            total += float(np.sum((leaf.lr.U.T @ leaf.lr.U)
                                  * (leaf.lr.V.T @ leaf.lr.V)))
    return float(np.sqrt(max(total, 0.0)))


def h_lu(H: HMatrix, tol_rel: float | None = None) -> HLUFactors:
    """In-place recursive block LU; pivoting only inside dense diagonal leaves.

    All truncations inside the factorization are anchored to the norm of
    the input operator: factor blocks whose norms grow past it are still
    resolved down to tol * ||A||_F, which keeps the factorization backward
    error on the scale of the operator even for ill-conditioned systems.
    """
    if H.row.size != H.col.size:
        raise StructureError("factorization needs a square H-matrix")
    tol = H.tol_rel if tol_rel is None else tol_rel
    if tol is None:
        raise ValueError("no tolerance given and none stored on the matrix")
    anchor = frobenius(H)

    def factor(node: HMatrix, path: str) -> None:
        if node.kind == DENSE:
            try:
                node.lu = dense_lu(node.dense)
            except SingularMatrixError as exc:
                raise FactorizationError(
                    f"singular diagonal leaf at cluster path {path or 'root'}"
                ) from exc
            eye = np.eye(node.lu.n)
            node.linv = sla.solve_triangular(node.lu.lu, eye, lower=True,
                                             unit_diagonal=True,
                                             check_finite=False)
            node.uinv = sla.solve_triangular(node.lu.lu, eye, lower=False,
                                             check_finite=False)
            node.dense = None
            return
        if node.kind != INNER:
            raise StructureError("low-rank leaf on the diagonal cannot be factored")
        c = node.children
        factor(c[0][0], path + "0")
        solve_lower_into(c[0][0], c[0][1], tol, anchor)
        solve_upper_right_into(c[0][0], c[1][0], tol, anchor)
        multiply_update(c[1][1], c[1][0], c[0][1], tol, anchor)
        factor(c[1][1], path + "1")

    with threadpool_limits(limits=1):
        factor(H, "")
    return HLUFactors(H, tol)


def h_lu_solve(f: HLUFactors, b: np.ndarray) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    if b.shape[0] != f.n:
        raise ValueError(f"rhs length {b.shape[0]} != {f.n}")
    y = _solve_lower(f.matrix, b.reshape(-1, 1))
    return _solve_upper(f.matrix, y).ravel()


def lu_dense_factors(f: HLUFactors) -> tuple[np.ndarray, np.ndarray]:
    """Densified (L, U) with L @ U reconstructing the compressed operator."""

    def walk(node: HMatrix) -> tuple[np.ndarray, np.ndarray]:
        if node.kind == DENSE:
            lu = node.lu.lu
            L = np.tril(lu, -1) + np.eye(lu.shape[0])
            Lf = np.empty_like(L)
            Lf[node.lu.perm] = L  # undo the leaf pivoting
            return Lf, np.triu(lu)
        c = node.children
        L11, U11 = walk(c[0][0])
        L22, U22 = walk(c[1][1])
        z = np.zeros((c[0][0].row.size, c[1][1].col.size))
        L = np.block([[L11, z], [densify(c[1][0]), L22]])
        U = np.block([[U11, densify(c[0][1])], [z.T, U22]])
        return L, U

    return walk(f.matrix)


# ---------------------------------------------------------------------------
# metrics


def _leaves(node: HMatrix):
    if node.kind == INNER:
        for row in node.children:
            for child in row:
                yield from _leaves(child)
    else:
        yield node


def compression(H: HMatrix) -> float:
    """1 - (stored entries) / (dense entries), the low-rank leaf fraction."""
    stored = 0
    for leaf in _leaves(H):
        m, n = leaf.shape
        if leaf.kind == LOW_RANK:
            stored += leaf.lr.rank * (m + n)
        else:
            stored += m * n
    return 1.0 - stored / (H.row.size * H.col.size)


def err_metric(f: HLUFactors, A: SparseSystem, x: np.ndarray) -> float:
    """||x - solve(LU, A x)|| / ||x|| for a system consistent with the factors."""
    x = np.asarray(x, dtype=float)
    nx = np.linalg.norm(x)
    if nx == 0.0:
        raise ValueError("err metric needs a nonzero reference vector")
    return float(np.linalg.norm(x - h_lu_solve(f, A.A @ x)) / nx)


def structure_json(H: HMatrix) -> dict:
    def walk(node: HMatrix) -> dict:
        d = {"rows": [node.row.lo, node.row.hi],
             "cols": [node.col.lo, node.col.hi],
             "kind": node.kind}
        if node.kind == LOW_RANK:
            d["rank"] = node.lr.rank
        elif node.kind == INNER:
            d["children"] = [walk(ch) for row in node.children for ch in row]
        return d

    return walk(H)


def dump_structure(H: HMatrix, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(structure_json(H), fh)
