"""Cluster trees over dof point sets and the admissible block partition.

Two tree flavours share one node type:

* tube trees split on a transverse coordinate (the streamline-section
  projection), so every node is a bundle of whole streamline segments;
* geometric trees split on the longest bounding-box axis and ignore the
  flow entirely (the baseline).

Both use a cardinality median split, so leaves enumerated left to right
cover the permuted index range contiguously.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .fem import SparseSystem

TRANSVERSE = "transverse"
FULL_SPACE = "fullspace"


@dataclass
class ClusterNode:
    lo: int  # half-open position range in the permuted ordering
    hi: int
    bbox: np.ndarray  # [[xmin, ymin], [xmax, ymax]]
    t_interval: tuple[float, float]
    children: list["ClusterNode"] = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.hi - self.lo

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass
class ClusterTree:
    root: ClusterNode
    perm: np.ndarray  # old dof index -> permuted position
    order: np.ndarray  # permuted position -> old dof index
    n_min: int
    kind: str  # "tube" | "geometric"

    @property
    def n(self) -> int:
        return self.order.shape[0]


def _make_node(points, svals, order, lo, hi) -> ClusterNode:
    idx = order[lo:hi]
    p = points[idx]
    s = svals[idx]
    bbox = np.array([p.min(axis=0), p.max(axis=0)])
    return ClusterNode(lo, hi, bbox, (float(s.min()), float(s.max())))


def _split_median(lo: int, hi: int) -> int:
    return lo + (hi - lo + 1) // 2  # left child gets ceil(k/2)


def build_tube_tree(points, s, along, n_min: int) -> ClusterTree:
    """Median-split tree on the transverse coordinate s.

    Ties are broken by the along-flow coordinate, then by original index,
    so sub-streamline leaves are deterministic. For a constant field s is
    just the y-coordinate; otherwise it comes from streamline projection.
    """
    points = np.asarray(points, dtype=float)
    s = np.asarray(s, dtype=float)
    along = np.asarray(along, dtype=float)
    if not (len(points) == len(s) == len(along)) or len(points) == 0:
        raise ValueError("points, s, along must be equally sized and non-empty")
    if n_min < 1:
        raise ValueError("n_min must be >= 1")

    order = np.lexsort((np.arange(len(s)), along, s))

    def build(lo, hi):
        node = _make_node(points, s, order, lo, hi)
        if hi - lo > n_min:
            mid = _split_median(lo, hi)
            node.children = [build(lo, mid), build(mid, hi)]
        return node

    root = build(0, len(s))
    perm = np.empty_like(order)
    perm[order] = np.arange(len(order))
    return ClusterTree(root, perm, order, n_min, "tube")


def build_geometric_tree(points, n_min: int) -> ClusterTree:
    """Median-split tree on the longest bounding-box axis (ties pick x)."""
    points = np.asarray(points, dtype=float)
    if len(points) == 0:
        raise ValueError("points must be non-empty")
    if n_min < 1:
        raise ValueError("n_min must be >= 1")
    order = np.arange(len(points))

    def build(lo, hi):
        idx = order[lo:hi]
        p = points[idx]
        ext = p.max(axis=0) - p.min(axis=0)
        axis = 0 if ext[0] >= ext[1] else 1
        sub = np.lexsort((idx, p[:, 1 - axis], p[:, axis]))
        order[lo:hi] = idx[sub]
        node = _make_node(points, points[:, 1], order, lo, hi)
        if hi - lo > n_min:
            mid = _split_median(lo, hi)
            node.children = [build(lo, mid), build(mid, hi)]
        return node

    root = build(0, len(points))
    perm = np.empty_like(order)
    perm[order] = np.arange(len(order))
    return ClusterTree(root, perm, order, n_min, "geometric")


def _interval_gap(a: tuple[float, float], b: tuple[float, float]) -> float:
    return max(a[0] - b[1], b[0] - a[1], 0.0)


def _bbox_diam(bbox: np.ndarray) -> float:
    return float(np.linalg.norm(bbox[1] - bbox[0]))


def _bbox_dist(a: np.ndarray, b: np.ndarray) -> float:
    gap = np.maximum(a[0] - b[1], b[0] - a[1])
    return float(np.linalg.norm(np.maximum(gap, 0.0)))


def admissible(row: ClusterNode, col: ClusterNode, eta: float,
               metric: str = TRANSVERSE, one_sided: bool = False) -> bool:
    """Separation test diam <= 2 * eta * dist.

    The transverse metric measures widths and gaps of the projected
    coordinate intervals; the full-space metric uses bounding boxes. The
    default is two-sided (min of the two diameters) so block trees stay
    symmetric; one_sided uses the row diameter alone.
    """
    if eta <= 0.0:
        raise ValueError("eta must be positive")
    if metric == TRANSVERSE:
        wr = row.t_interval[1] - row.t_interval[0]
        wc = col.t_interval[1] - col.t_interval[0]
        diam = wr if one_sided else min(wr, wc)
        dist = _interval_gap(row.t_interval, col.t_interval)
    elif metric == FULL_SPACE:
        dr, dc = _bbox_diam(row.bbox), _bbox_diam(col.bbox)
        diam = dr if one_sided else min(dr, dc)
        dist = _bbox_dist(row.bbox, col.bbox)
    else:
        raise ValueError(f"unknown admissibility metric {metric!r}")
    return dist > 0.0 and diam <= 2.0 * eta * dist


LOW_RANK = "lowrank"
DENSE = "dense"
INNER = "inner"


@dataclass
class BlockNode:
    row: ClusterNode
    col: ClusterNode
    kind: str
    children: list[list["BlockNode"]] | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return (self.row.size, self.col.size)


def default_metric(kind: str) -> str:
    return TRANSVERSE if kind == "tube" else FULL_SPACE


def build_block_tree(rows: ClusterTree, cols: ClusterTree, eta: float,
                     metric: str | None = None) -> BlockNode:
    """Admissible pairs become low-rank leaves, leaf-bounded pairs dense ones."""
    if rows.n != cols.n:
        raise ValueError("row and column trees cover different dof sets")
    if metric is None:
        metric = default_metric(rows.kind)

    def build(r: ClusterNode, c: ClusterNode) -> BlockNode:
        if admissible(r, c, eta, metric):
            return BlockNode(r, c, LOW_RANK)
        if r.is_leaf or c.is_leaf:
            return BlockNode(r, c, DENSE)
        kids = [[build(rc, cc) for cc in c.children] for rc in r.children]
        return BlockNode(r, c, INNER, kids)

    return build(rows.root, cols.root)


def block_leaves(bt: BlockNode):
    if bt.kind == INNER:
        for row in bt.children:
            for child in row:
                yield from block_leaves(child)
    else:
        yield bt


def default_nmin(n_side: int, bc: str = "dirichlet") -> int:
    """Leaf bound: a fifth of the points per streamline, floored at 8."""
    per_line = n_side + 1 if bc == "neumann" else n_side - 1
    return max(8, -(-per_line // 5))


def permute_system(s: SparseSystem, tree: ClusterTree) -> SparseSystem:
    """Reorder the system as P A P^T following the tree's dof permutation."""
    if tree.n != s.n_dof:
        raise ValueError(f"tree covers {tree.n} dofs but system has {s.n_dof}")
    A = s.A[tree.order][:, tree.order].tocsr()
    A.sort_indices()
    return SparseSystem(A, s.dof_points[tree.order])


def _node_json(node: ClusterNode) -> dict:
    d = {
        "range": [node.lo, node.hi],
        "t_interval": list(node.t_interval),
        "bbox": node.bbox.tolist(),
    }
    if node.children:
        d["children"] = [_node_json(c) for c in node.children]
    return d


def tree_json(tree: ClusterTree) -> dict:
    return {
        "kind": tree.kind,
        "n_min": tree.n_min,
        "perm": tree.perm.tolist(),
        "root": _node_json(tree.root),
    }


def dump_tree(tree: ClusterTree, path: str) -> None:
    with open(path, "w") as f:
        json.dump(tree_json(tree), f)
