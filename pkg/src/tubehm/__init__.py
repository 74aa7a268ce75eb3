"""Hierarchical LU with convection-aligned tube cluster trees.

Pipeline: build a structured mesh, assemble the P1 advection-diffusion
operator, project dofs along streamlines onto the inflow section, build
a transverse median-split cluster tree, compress the permuted operator
into an H-matrix and factor it with truncated block LU.
"""

from .clustering import (admissible, build_block_tree, build_geometric_tree,
                         build_tube_tree, default_nmin, permute_system)
from .fem import ProblemSpec, SparseSystem, assemble, assemble_rhs
from .flow import CONST, COS_SHEAR, EXP_SHEAR, check_condition, get_field, project_all
from .hmatrix import (HMatrix, compression, err_metric, from_sparse, h_lu,
                      h_lu_solve, matvec)
from .linalg import LowRank, aca, dense_lu, lowrank_add, lu_solve, numerical_rank, svd, truncate
from .mesh import Mesh, build_structured_mesh, interior_indices, p1_gradient

__all__ = [
    "CONST", "COS_SHEAR", "EXP_SHEAR", "HMatrix", "LowRank", "Mesh",
    "ProblemSpec", "SparseSystem", "aca", "admissible", "assemble",
    "assemble_rhs", "build_block_tree", "build_geometric_tree",
    "build_structured_mesh", "build_tube_tree", "check_condition",
    "compression", "default_nmin", "dense_lu", "err_metric", "from_sparse",
    "get_field", "h_lu", "h_lu_solve", "interior_indices", "lowrank_add",
    "lu_solve", "matvec", "numerical_rank", "p1_gradient", "permute_system",
    "project_all", "svd", "truncate",
]

__version__ = "0.1.0"
