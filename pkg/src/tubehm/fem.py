"""P1 Lagrange assembly of the advection-diffusion-reaction form.

The bilinear form is  eps * grad(u).grad(v) + v b.grad(u) + beta u v
integrated over [-1,1]^2. Stiffness and mass contributions use exact P1
element integrals; the convection coefficient b is evaluated once per
triangle at the centroid, which is exact for constant fields.

Dirichlet problems eliminate boundary rows and columns and keep the plain
convection term. Neumann problems use the symmetrized formulation: the
convection term in skew form plus the reaction shifted to beta - div(b)/2.
On functions vanishing at the boundary the two forms coincide; on the full
space the symmetrized one stays uniformly coercive as eps -> 0, where the
plain form loses control of the inflow boundary and its conditioning
degenerates like 1/eps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .flow import Field, check_condition
from .mesh import Mesh, interior_indices, triangle_areas


@dataclass(frozen=True)
class ProblemSpec:
    epsilon: float
    beta: float
    field: Field
    bc: str  # "dirichlet" | "neumann"

    def __post_init__(self):
        if self.epsilon < 0.0:
            raise ValueError("diffusion coefficient must be non-negative")
        if self.bc not in ("dirichlet", "neumann"):
            raise ValueError(f"unknown boundary condition {self.bc!r}")


class CoercivityError(ValueError):
    """The setup violates sup(div(b)/2 - beta) <= 0; assembly refused."""


@dataclass(frozen=True)
class SparseSystem:
    """Assembled operator with the coordinates of its retained dofs."""

    A: sp.csr_matrix
    dof_points: np.ndarray

    @property
    def n_dof(self) -> int:
        return self.A.shape[0]


def _element_matrices(m: Mesh, spec: ProblemSpec):
    """Per-triangle 3x3 element contributions, vectorized over triangles."""
    p = m.vertices[m.triangles]  # (nt, 3, 2)
    area = triangle_areas(m)  # (nt,)

    # Gradients of the three barycentric basis functions:
    # grad(lambda_k) = perp(opposite edge) / (2 * area).
    e0 = p[:, 2] - p[:, 1]
    e1 = p[:, 0] - p[:, 2]
    e2 = p[:, 1] - p[:, 0]
    edges = np.stack([e0, e1, e2], axis=1)  # (nt, 3, 2)
    grads = np.empty_like(edges)
    grads[:, :, 0] = -edges[:, :, 1]
    grads[:, :, 1] = edges[:, :, 0]
    grads /= (2.0 * area)[:, None, None]

    stiff = np.einsum("tid,tjd->tij", grads, grads) * area[:, None, None]

    centroid = p.mean(axis=1)
    b = spec.field.velocity(centroid)  # (nt, 2)
    bgrad = np.einsum("td,tjd->tj", b, grads)  # b.grad(phi_j) at centroid
    conv = np.broadcast_to(
        (bgrad * (area / 3.0)[:, None])[:, None, :], stiff.shape
    ).copy()

    mass_ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    mass = area[:, None, None] * mass_ref[None]

    if spec.bc == "neumann":
        # Symmetrized formulation: skew convection, div-shifted reaction.
        conv = 0.5 * (conv - conv.transpose(0, 2, 1))
        react = spec.beta - 0.5 * spec.field.divergence(centroid)
        return spec.epsilon * stiff + conv + react[:, None, None] * mass

    return spec.epsilon * stiff + conv + spec.beta * mass


def assemble(m: Mesh, spec: ProblemSpec) -> SparseSystem:
    """Assemble the operator; Dirichlet drops boundary rows and columns.

    Refuses setups whose coercivity margin sup(div(b)/2 - beta) is
    strictly positive (marginal margin-0 cases such as the pure Laplace
    or mass matrix remain assemblable).
    """
    ok, margin = check_condition(spec.field, spec.beta)
    if margin > 0.0:
        raise CoercivityError(
            f"div(b)/2 - beta reaches {margin:.3g} > 0; form is not coercive"
        )
    elem = _element_matrices(m, spec)

    tri = m.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    vals = elem.ravel()
    nv = m.n_vertices
    A = sp.coo_matrix((vals, (rows, cols)), shape=(nv, nv)).tocsr()
    A.sum_duplicates()

    if spec.bc == "dirichlet":
        keep = interior_indices(m)
        A = A[keep][:, keep].tocsr()
        pts = m.vertices[keep]
    else:
        pts = m.vertices.copy()
    A.sort_indices()
    return SparseSystem(A, pts)


def load_function(p: np.ndarray) -> np.ndarray:
    """Source term f(x, y) = (1 - |x|)(1 - |y|)."""
    return (1.0 - np.abs(p[..., 0])) * (1.0 - np.abs(p[..., 1]))


def assemble_rhs(m: Mesh, bc: str) -> np.ndarray:
    """Load vector for f = (1-|x|)(1-|y|) by 3-point edge-midpoint quadrature."""
    p = m.vertices[m.triangles]
    area = triangle_areas(m)
    # Edge midpoints; phi_i equals 1/2 on the two midpoints adjacent to i.
    mids = 0.5 * np.stack([p[:, 0] + p[:, 1], p[:, 1] + p[:, 2], p[:, 2] + p[:, 0]], axis=1)
    fm = load_function(mids)  # (nt, 3)
    w = area / 3.0
    contrib = np.empty((m.n_triangles, 3))
    contrib[:, 0] = 0.5 * (fm[:, 0] + fm[:, 2]) * w
    contrib[:, 1] = 0.5 * (fm[:, 0] + fm[:, 1]) * w
    contrib[:, 2] = 0.5 * (fm[:, 1] + fm[:, 2]) * w

    ell = np.zeros(m.n_vertices)
    np.add.at(ell, m.triangles.ravel(), contrib.ravel())
    if bc == "dirichlet":
        return ell[interior_indices(m)]
    return ell


def apply_operator(s: SparseSystem, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[0] != s.n_dof:
        raise ValueError(f"vector length {x.shape[0]} != n_dof {s.n_dof}")
    return s.A @ x


def discrete_coercivity_probe(s: SparseSystem, trials: int, seed: int = 42) -> float:
    """Minimum of v^T A v over `trials` random unit vectors."""
    if trials < 1:
        raise ValueError("need at least one trial")
    rng = np.random.default_rng(seed)
    best = np.inf
    for _ in range(trials):
        v = rng.standard_normal(s.n_dof)
        v /= np.linalg.norm(v)
        best = min(best, float(v @ (s.A @ v)))
    return best


def export_coo(s: SparseSystem, path: str) -> None:
    """Coordinate-format text export: one '0-based i j value' row per entry."""
    coo = s.A.tocoo()
    with open(path, "w") as f:
        for i, j, v in zip(coo.row, coo.col, coo.data):
            f.write(f"{i} {j} {float(v)!r}\n")
