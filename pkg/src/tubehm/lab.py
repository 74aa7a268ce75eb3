"""Dense oracles and the experiment harness.

Everything quantitative lives here: the dense-inverse rank studies that
probe low-rank approximability of far blocks, the interior-estimate and
cell-mean approximation oracles, and the benchmark sweep that assembles,
clusters, compresses, factors and scores each configuration.
"""

from __future__ import annotations

import csv
import time
import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .clustering import (BlockNode, ClusterTree, LOW_RANK, build_block_tree,
                         build_geometric_tree, build_tube_tree, default_nmin,
                         permute_system)
from .fem import ProblemSpec, SparseSystem, assemble
from .flow import Field, get_field, project_all
from .hmatrix import compression, err_metric, from_sparse, h_lu
from .linalg import numerical_rank
from .mesh import Mesh, all_p1_gradients, build_structured_mesh, triangle_areas

DENSE_GUARD = 5000
EPS_SWEEP = (1.0, 1e-2, 1e-4, 1e-6)


def dense_inverse(s: SparseSystem) -> np.ndarray:
    """A^-1 by dense LU column solves; guarded to desk-scale systems."""
    n = s.n_dof
    if n > DENSE_GUARD:
        raise ValueError(f"dense inverse guarded to {DENSE_GUARD} dofs, got {n}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(s.A.toarray())
    if n and np.min(np.abs(np.diag(lu))) == 0.0:
        raise np.linalg.LinAlgError("operator is singular to working precision")
    return sla.lu_solve((lu, piv), np.eye(n))


def build_cluster_tree(s: SparseSystem, f: Field, kind: str, n_min: int,
                       delta: float) -> ClusterTree:
    """Tube tree (transverse split on projected coordinates) or geometric tree."""
    pts = s.dof_points
    if kind == "tube":
        if f.name == "const":
            svals = pts[:, 1]  # projection along (1,0) is the y-coordinate
        else:
            svals = project_all(pts, f, delta)
        return build_tube_tree(pts, svals, pts[:, 0], n_min)
    if kind == "geometric":
        return build_geometric_tree(pts, n_min)
    raise ValueError(f"unknown clustering {kind!r}")


# ---------------------------------------------------------------------------
# rank studies


@dataclass(frozen=True)
class RankStudyRow:
    epsilon: float
    clustering: str
    row_range: tuple[int, int]
    col_range: tuple[int, int]
    gap: float
    rank: int


def shallowest_admissible_pairs(bt: BlockNode) -> list[BlockNode]:
    """All low-rank leaves at the first depth where any appear."""
    level = [bt]
    while level:
        found = [b for b in level if b.kind == LOW_RANK]
        if found:
            return found
        level = [ch for b in level if b.children for row in b.children for ch in row]
    return []


def study_pair(bt: BlockNode) -> BlockNode:
    """Largest-area admissible pair at the shallowest admissible depth."""
    pairs = shallowest_admissible_pairs(bt)
    if not pairs:
        raise ValueError("block tree has no admissible leaves")
    return max(pairs, key=lambda b: b.row.size * b.col.size)


def _pair_gap(b: BlockNode, kind: str) -> float:
    if kind == "tube":
        r, c = b.row.t_interval, b.col.t_interval
        return max(r[0] - c[1], c[0] - r[1], 0.0)
    gap = np.maximum(b.row.bbox[0] - b.col.bbox[1], b.col.bbox[0] - b.row.bbox[1])
    return float(np.linalg.norm(np.maximum(gap, 0.0)))


def rank_study(n_side: int, field_name: str, bc: str, clustering: str,
               eta: float = 1.0, tol: float = 1e-6,
               eps_list=EPS_SWEEP, n_min: int | None = None,
               delta: float | None = None, beta: float = 2.0) -> list[RankStudyRow]:
    """Ranks of dense-inverse sub-blocks for every shallowest admissible pair.

    The system is reassembled per epsilon on a fixed mesh; the cluster
    tree depends only on the dof geometry so the studied blocks are the
    same across the sweep.
    """
    m = build_structured_mesh(n_side)
    f = get_field(field_name)
    if n_min is None:
        n_min = default_nmin(n_side, bc)
    if delta is None:
        delta = m.h / 2.0

    base = assemble(m, ProblemSpec(eps_list[0], beta, f, bc))
    tree = build_cluster_tree(base, f, clustering, n_min, delta)
    bt = build_block_tree(tree, tree, eta)
    pairs = shallowest_admissible_pairs(bt)
    if not pairs:
        raise ValueError("no admissible pairs; lower n_min or raise eta")

    rows = []
    for eps in eps_list:
        s = permute_system(assemble(m, ProblemSpec(eps, beta, f, bc)), tree)
        inv = dense_inverse(s)
        for b in pairs:
            block = inv[b.row.lo:b.row.hi, b.col.lo:b.col.hi]
            rows.append(RankStudyRow(eps, clustering,
                                     (b.row.lo, b.row.hi), (b.col.lo, b.col.hi),
                                     _pair_gap(b, clustering),
                                     numerical_rank(block, tol)))
    return rows


def write_rank_rows(rows: list[RankStudyRow], path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["eps", "clustering", "row_lo", "row_hi", "col_lo", "col_hi",
                    "gap", "rank"])
        for r in rows:
            w.writerow([repr(r.epsilon), r.clustering, *r.row_range, *r.col_range,
                        repr(r.gap), r.rank])


# ---------------------------------------------------------------------------
# interior and approximation oracles


def _quadrature(m: Mesh, nodal: np.ndarray):
    """Edge-midpoint quadrature points, weights, values and per-point gradients."""
    u = np.asarray(nodal, dtype=float)
    p = m.vertices[m.triangles]
    ut = u[m.triangles]
    w = np.repeat(triangle_areas(m) / 3.0, 3)
    pts = 0.5 * np.stack(
        [p[:, 0] + p[:, 1], p[:, 1] + p[:, 2], p[:, 2] + p[:, 0]], axis=1
    ).reshape(-1, 2)
    vals = 0.5 * np.stack(
        [ut[:, 0] + ut[:, 1], ut[:, 1] + ut[:, 2], ut[:, 2] + ut[:, 0]], axis=1
    ).ravel()
    grads = np.repeat(all_p1_gradients(m, u), 3, axis=0)
    return pts, w, vals, grads


def poincare_oracle(m: Mesh, nodal: np.ndarray, region, ell: int) -> tuple[float, float]:
    """Cell-mean approximation error vs the gradient bound on a box region.

    The region box is subdivided into ell x ell equal cells; the
    approximant is the per-cell quadrature mean. Membership is decided per
    triangle (centroid inside the box), so grid-aligned regions are
    integrated exactly. Returns
    (||u - Pi(u)||_L2(region), (sqrt(2)/pi) * (diam(region)/ell) * ||grad u||_L2(region)).
    """
    if ell < 1:
        raise ValueError("ell must be >= 1")
    xmin, xmax, ymin, ymax = (float(v) for v in region)
    if xmax <= xmin or ymax <= ymin:
        raise ValueError("region must have positive area")
    centroids = m.vertices[m.triangles].mean(axis=1)
    keep = ((centroids[:, 0] >= xmin) & (centroids[:, 0] <= xmax)
            & (centroids[:, 1] >= ymin) & (centroids[:, 1] <= ymax))
    if not np.any(keep):
        raise ValueError("region contains no triangles")
    pts, w, vals, grads = _quadrature(m, nodal)
    inside = np.repeat(keep, 3)
    pts, w, vals, grads = pts[inside], w[inside], vals[inside], grads[inside]

    ix = np.clip(((pts[:, 0] - xmin) / (xmax - xmin) * ell).astype(int), 0, ell - 1)
    iy = np.clip(((pts[:, 1] - ymin) / (ymax - ymin) * ell).astype(int), 0, ell - 1)
    cell = ix * ell + iy
    wsum = np.bincount(cell, weights=w, minlength=ell * ell)
    usum = np.bincount(cell, weights=w * vals, minlength=ell * ell)
    means = np.divide(usum, wsum, out=np.zeros_like(usum), where=wsum > 0)

    lhs = float(np.sqrt(np.sum(w * (vals - means[cell]) ** 2)))
    grad_norm = float(np.sqrt(np.sum(w * np.sum(grads**2, axis=1))))
    diam = float(np.hypot(xmax - xmin, ymax - ymin))
    rhs = (np.sqrt(2.0) / np.pi) * (diam / ell) * grad_norm
    return lhs, rhs


def caccioppoli_check(n_side: int, field_name: str, delta: float,
                      eps_list=EPS_SWEEP, omega: tuple[float, float] = (-0.25, 0.25),
                      source_min_y: float = 0.75, beta: float = 2.0) -> list[float]:
    """Interior-gradient-to-norm ratios of discretely harmonic samples, per epsilon.

    For each epsilon the Dirichlet system is solved with unit loads on
    all dofs above source_min_y, giving (A u)_i = 0 on every dof interior
    to the inflated band omega_delta. The reported ratio is
    delta * ||grad u||_L2(omega) / ||u||_L2(omega_delta), the epsilon-free
    quantity the tube estimate controls.
    """
    lo, hi = omega
    if source_min_y <= hi + delta:
        raise ValueError("source region must stay strictly above the inflated band")
    m = build_structured_mesh(n_side)
    f = get_field(field_name)
    areas = triangle_areas(m)
    cy = m.vertices[m.triangles].mean(axis=1)[:, 1]
    in_omega = (cy >= lo) & (cy <= hi)
    in_omega_d = (cy >= lo - delta) & (cy <= hi + delta)

    ratios = []
    for eps in eps_list:
        s = assemble(m, ProblemSpec(eps, beta, f, "dirichlet"))
        rhs = (s.dof_points[:, 1] >= source_min_y).astype(float)
        if not np.any(rhs):
            raise ValueError("empty source region")
        u = spla.spsolve(s.A.tocsc(), rhs)
        nodal = np.zeros(m.n_vertices)
        nodal[~m.boundary_mask] = u

        grads = all_p1_gradients(m, nodal)
        grad_sq = float(np.sum(areas[in_omega] * np.sum(grads[in_omega] ** 2, axis=1)))
        ut = nodal[m.triangles[in_omega_d]]
        mass_sq = float(np.sum(areas[in_omega_d] / 6.0 * (
            np.sum(ut**2, axis=1)
            + ut[:, 0] * ut[:, 1] + ut[:, 0] * ut[:, 2] + ut[:, 1] * ut[:, 2])))
        if mass_sq <= 0.0:
            raise ValueError("harmonic sample vanishes on the inflated band")
        ratios.append(delta * np.sqrt(grad_sq) / np.sqrt(mass_sq))
    return ratios


# ---------------------------------------------------------------------------
# benchmark sweep


@dataclass(frozen=True)
class ExperimentRecord:
    N: int
    eps: float
    field: str
    bc: str
    clustering: str
    t_tree: float
    t_compress: float
    t_lu: float
    compression: float
    err: float


CSV_HEADER = ["N", "eps", "field", "bc", "clustering",
              "t_tree_s", "t_compress_s", "t_lu_s", "compression", "err"]


@dataclass
class BenchConfig:
    n_sides: tuple[int, ...] = (16,)
    eps_list: tuple[float, ...] = EPS_SWEEP
    fields: tuple[str, ...] = ("const", "cos", "exp")
    bcs: tuple[str, ...] = ("dirichlet", "neumann")
    clusterings: tuple[str, ...] = ("tube", "geometric")
    eta: float = 1.0
    tol: float = 1e-6
    beta: float = 2.0
    n_min: int | None = None
    delta: float | None = None
    seed: int = 42
    n_err_vectors: int = 5
    out: str | None = None


@dataclass
class CellResult:
    record: ExperimentRecord
    factors: object = dc_field(default=None, repr=False)
    mesh: Mesh | None = dc_field(default=None, repr=False)
    tree: ClusterTree | None = dc_field(default=None, repr=False)
    system: SparseSystem | None = dc_field(default=None, repr=False)  # permuted


def run_cell(n_side: int, eps: float, field_name: str, bc: str, clustering: str,
             eta: float = 1.0, tol: float = 1e-6, beta: float = 2.0,
             n_min: int | None = None, delta: float | None = None,
             seed: int = 42, n_err_vectors: int = 5,
             keep_factors: bool = False) -> CellResult:
    """Assemble, cluster, compress, factor, and score one configuration."""
    m = build_structured_mesh(n_side)
    f = get_field(field_name)
    if n_min is None:
        n_min = default_nmin(n_side, bc)
    if delta is None:
        delta = m.h / 2.0
    s = assemble(m, ProblemSpec(eps, beta, f, bc))

    t0 = time.perf_counter()
    tree = build_cluster_tree(s, f, clustering, n_min, delta)
    bt = build_block_tree(tree, tree, eta)
    t_tree = time.perf_counter() - t0

    sp = permute_system(s, tree)
    t0 = time.perf_counter()
    H = from_sparse(sp, bt, tol)
    t_compress = time.perf_counter() - t0

    t0 = time.perf_counter()
    factors = h_lu(H, tol)
    t_lu = time.perf_counter() - t0

    rng = np.random.default_rng(seed)
    err = 0.0
    for _ in range(n_err_vectors):
        x = rng.standard_normal(sp.n_dof)
        x /= np.linalg.norm(x)
        err = max(err, err_metric(factors, sp, x))

    rec = ExperimentRecord(sp.n_dof, eps, field_name, bc, clustering,
                           t_tree, t_compress, t_lu,
                           compression(factors.matrix), err)
    if keep_factors:
        return CellResult(rec, factors, m, tree, sp)
    return CellResult(rec)


def bench(config: BenchConfig) -> list[ExperimentRecord]:
    """Full sweep; per-cell failures are recorded as NaN rows, not raised."""
    records = []
    for n_side in config.n_sides:
        for field_name in config.fields:
            for bc in config.bcs:
                for clustering in config.clusterings:
                    for eps in config.eps_list:
                        try:
                            rec = run_cell(
                                n_side, eps, field_name, bc, clustering,
                                config.eta, config.tol, config.beta,
                                config.n_min, config.delta, config.seed,
                                config.n_err_vectors).record
                        except Exception:
                            n_dof = ((n_side + 1) ** 2 if bc == "neumann"
                                     else (n_side - 1) ** 2)
                            rec = ExperimentRecord(
                                n_dof, eps, field_name, bc, clustering,
                                float("nan"), float("nan"), float("nan"),
                                float("nan"), float("nan"))
                        records.append(rec)
    if config.out:
        write_records(records, config.out)
    return records


def write_records(records: list[ExperimentRecord], path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for r in records:
            w.writerow([r.N, repr(r.eps), r.field, r.bc, r.clustering,
                        repr(r.t_tree), repr(r.t_compress), repr(r.t_lu),
                        repr(r.compression), repr(r.err)])


def read_records(path: str) -> list[ExperimentRecord]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            out.append(ExperimentRecord(
                int(row["N"]), float(row["eps"]), row["field"], row["bc"],
                row["clustering"], float(row["t_tree_s"]),
                float(row["t_compress_s"]), float(row["t_lu_s"]),
                float(row["compression"]), float(row["err"])))
    return out
