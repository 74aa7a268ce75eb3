"""Structured triangulation of the square [-1,1]^2 and P1 point queries.

The mesh is a deterministic diagonal-split grid: n x n cells, each cut
along the lower-left -> upper-right diagonal, giving 2*n^2 congruent
right triangles. Vertex ordering is row major with x fastest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Mesh:
    """Triangulation of [-1,1]^2.

    vertices: (nv, 2) float array, nv = (n+1)^2
    triangles: (nt, 3) int array of vertex indices, nt = 2*n^2, CCW
    boundary_mask: (nv,) bool, True on |x| = 1 or |y| = 1
    side_count: subdivisions per side
    h: grid spacing 2/n
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_mask: np.ndarray
    side_count: int
    h: float

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]


def build_structured_mesh(n: int) -> Mesh:
    """Triangulate [-1,1]^2 with n subdivisions per side.

    Every cell is split along the same lower-left to upper-right
    diagonal so stencils are stable across the grid.
    """
    if n < 1:
        raise ValueError(f"side count must be >= 1, got {n}")
    coords = -1.0 + 2.0 * np.arange(n + 1) / n
    xg, yg = np.meshgrid(coords, coords, indexing="xy")
    vertices = np.column_stack([xg.ravel(), yg.ravel()])

    def vid(i: int, j: int) -> int:
        return j * (n + 1) + i

    tris = np.empty((2 * n * n, 3), dtype=np.int64)
    k = 0
    for j in range(n):
        for i in range(n):
            ll, lr = vid(i, j), vid(i + 1, j)
            ul, ur = vid(i, j + 1), vid(i + 1, j + 1)
            tris[k] = (ll, lr, ur)
            tris[k + 1] = (ll, ur, ul)
            k += 2

    ii, jj = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="xy")
    on_edge = (ii == 0) | (ii == n) | (jj == 0) | (jj == n)
    return Mesh(vertices, tris, on_edge.ravel(), n, 2.0 / n)


def interior_indices(m: Mesh) -> np.ndarray:
    """Sorted indices of vertices not on the boundary ((n-1)^2 of them)."""
    return np.flatnonzero(~m.boundary_mask)


def triangle_areas(m: Mesh) -> np.ndarray:
    """Signed areas of all triangles (positive for this mesh)."""
    p = m.vertices[m.triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def p1_gradient(m: Mesh, t: int, nodal: np.ndarray) -> np.ndarray:
    """Constant gradient of the P1 interpolant of `nodal` on triangle t."""
    idx = m.triangles[t]
    p0, p1, p2 = m.vertices[idx]
    u = np.asarray(nodal, dtype=float)
    e = np.array([p1 - p0, p2 - p0])
    det = e[0, 0] * e[1, 1] - e[0, 1] * e[1, 0]
    if det == 0.0:
        raise ValueError(f"degenerate triangle {t}")
    rhs = np.array([u[1] - u[0], u[2] - u[0]])
    return np.array(
        [
            (e[1, 1] * rhs[0] - e[0, 1] * rhs[1]) / det,
            (-e[1, 0] * rhs[0] + e[0, 0] * rhs[1]) / det,
        ]
    )


def all_p1_gradients(m: Mesh, nodal: np.ndarray) -> np.ndarray:
    """Per-triangle gradients of a nodal function, shape (nt, 2). Vectorized."""
    u = np.asarray(nodal, dtype=float)[m.triangles]
    p = m.vertices[m.triangles]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    r1 = u[:, 1] - u[:, 0]
    r2 = u[:, 2] - u[:, 0]
    gx = (e2[:, 1] * r1 - e1[:, 1] * r2) / det
    gy = (-e2[:, 0] * r1 + e1[:, 0] * r2) / det
    return np.column_stack([gx, gy])


def dump_mesh(m: Mesh, path: str) -> None:
    """Plain-text dump: one 'v x y' row per vertex, one 't i j k' per triangle."""
    with open(path, "w") as f:
        for x, y in m.vertices:
            f.write(f"v {x!r} {y!r}\n")
        for i, j, k in m.triangles:
            f.write(f"t {i} {j} {k}\n")
