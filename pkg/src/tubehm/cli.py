"""Command-line front end: mesh/assembly inspection, factorization, studies."""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import clustering, fem, flow, lab, mesh
from .hmatrix import FactorizationError, StructureError, h_lu_solve
from .linalg import SingularMatrixError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def _add_common(p, *names):
    if "n" in names:
        p.add_argument("--n", type=int, required=True, help="grid subdivisions per side")
    if "eps" in names:
        p.add_argument("--eps", type=float, default=1.0, help="diffusion coefficient")
    if "field" in names:
        p.add_argument("--field", choices=["const", "cos", "exp"], default="const")
    if "bc" in names:
        p.add_argument("--bc", choices=["dirichlet", "neumann"], default="dirichlet")
    if "clustering" in names:
        p.add_argument("--clustering", choices=["tube", "geometric"], default="tube")
    if "eta" in names:
        p.add_argument("--eta", type=float, default=1.0, help="admissibility parameter")
    if "tol" in names:
        p.add_argument("--tol", type=float, default=1e-6, help="compression tolerance")
    if "nmin" in names:
        p.add_argument("--nmin", type=int, default=None,
                       help="leaf size bound (default: fifth of a streamline)")
    if "delta" in names:
        p.add_argument("--delta", type=float, default=None,
                       help="tracing step (default h/2)")
    if "out" in names:
        p.add_argument("--out", default=None, help="output path")
    if "json-tree" in names:
        p.add_argument("--json-tree", default=None, help="cluster tree JSON dump path")
    if "seed" in names:
        p.add_argument("--seed", type=int, default=42)


def build_parser() -> _Parser:
    ap = _Parser(prog="tubehm",
                 description="H-LU experiments with flow-aligned cluster trees")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mesh", help="build the structured mesh")
    _add_common(p, "n", "out")

    p = sub.add_parser("assemble", help="assemble and optionally export the matrix")
    _add_common(p, "n", "eps", "field", "bc", "out")

    p = sub.add_parser("factor", help="compress + H-LU one configuration")
    _add_common(p, "n", "eps", "field", "bc", "clustering", "eta", "tol",
                "nmin", "delta", "json-tree", "seed")

    p = sub.add_parser("solve", help="factor and solve with the model load vector")
    _add_common(p, "n", "eps", "field", "bc", "clustering", "eta", "tol",
                "nmin", "delta", "seed")

    p = sub.add_parser("rankstudy", help="dense-inverse ranks of admissible blocks")
    _add_common(p, "n", "field", "bc", "clustering", "eta", "tol", "nmin",
                "delta", "out")

    p = sub.add_parser("poincare", help="cell-mean approximation oracle corpus")
    _add_common(p, "n")

    p = sub.add_parser("caccioppoli", help="interior-estimate ratios across epsilon")
    _add_common(p, "n", "field")
    p.add_argument("--delta", type=float, default=0.25,
                   help="transverse inflation width of the control band")

    p = sub.add_parser("bench", help="full benchmark sweep, CSV output")
    _add_common(p, "n", "eta", "tol", "nmin", "delta", "out", "seed")

    return ap


def _cmd_mesh(args) -> int:
    m = mesh.build_structured_mesh(args.n)
    if args.out:
        mesh.dump_mesh(m, args.out)
    print(f"vertices {m.n_vertices} triangles {m.n_triangles} "
          f"interior {len(mesh.interior_indices(m))} h {m.h}")
    return 0


def _cmd_assemble(args) -> int:
    m = mesh.build_structured_mesh(args.n)
    f = flow.get_field(args.field)
    s = fem.assemble(m, fem.ProblemSpec(args.eps, 2.0, f, args.bc))
    _, margin = flow.check_condition(f, 2.0)
    if args.out:
        fem.export_coo(s, args.out)
    print(f"n_dof {s.n_dof} nnz {s.A.nnz} condition_margin {margin}")
    return 0


def _factor(args, keep=True):
    res = lab.run_cell(args.n, args.eps, args.field, args.bc, args.clustering,
                       args.eta, args.tol, n_min=args.nmin, delta=args.delta,
                       seed=args.seed, keep_factors=keep)
    return res


def _cmd_factor(args) -> int:
    if args.json_tree:
        m = mesh.build_structured_mesh(args.n)
        f = flow.get_field(args.field)
        s = fem.assemble(m, fem.ProblemSpec(args.eps, 2.0, f, args.bc))
        n_min = args.nmin or clustering.default_nmin(args.n, args.bc)
        tree = lab.build_cluster_tree(s, f, args.clustering, n_min,
                                      args.delta or m.h / 2.0)
        clustering.dump_tree(tree, args.json_tree)
    rec = _factor(args, keep=False).record
    print(f"N {rec.N} compression {rec.compression} err {rec.err}")
    return 0


def _cmd_solve(args) -> int:
    res = _factor(args, keep=True)
    rhs = fem.assemble_rhs(res.mesh, args.bc)[res.tree.order]
    x = h_lu_solve(res.factors, rhs)
    resid = np.linalg.norm(res.system.A @ x - rhs) / np.linalg.norm(rhs)
    print(f"N {res.record.N} residual {resid} err {res.record.err}")
    return 0


def _cmd_rankstudy(args) -> int:
    rows = lab.rank_study(args.n, args.field, args.bc, args.clustering,
                          args.eta, args.tol, n_min=args.nmin, delta=args.delta)
    if args.out:
        lab.write_rank_rows(rows, args.out)
    for r in rows:
        print(f"eps {r.epsilon:g} rows {r.row_range} cols {r.col_range} "
              f"gap {r.gap:.4g} rank {r.rank}")
    return 0


def _cmd_poincare(args) -> int:
    m = mesh.build_structured_mesh(args.n)
    pts = m.vertices
    cases = {
        "constant": np.ones(m.n_vertices),
        "linear_x": pts[:, 0],
        "sin_product": np.sin(np.pi * pts[:, 0]) * np.sin(np.pi * pts[:, 1]),
    }
    region = (0.0, 1.0, 0.0, 1.0)
    ok = True
    for name, u in cases.items():
        for ell in (1, 2, 4):
            lhs, rhs = lab.poincare_oracle(m, u, region, ell)
            holds = lhs <= rhs + 1e-12
            ok &= holds
            print(f"{name} ell {ell}: lhs {lhs:.6g} rhs {rhs:.6g} "
                  f"{'ok' if holds else 'VIOLATED'}")
    return 0 if ok else 2


def _cmd_caccioppoli(args) -> int:
    ratios = lab.caccioppoli_check(args.n, args.field, args.delta)
    for eps, r in zip(lab.EPS_SWEEP, ratios):
        print(f"eps {eps:g} ratio {r:.6g}")
    return 0


def _cmd_bench(args) -> int:
    cfg = lab.BenchConfig(n_sides=(args.n,), eta=args.eta, tol=args.tol,
                          n_min=args.nmin, delta=args.delta, seed=args.seed,
                          out=args.out)
    records = lab.bench(cfg)
    for r in records:
        print(f"N {r.N} eps {r.eps:g} {r.field} {r.bc} {r.clustering} "
              f"compression {r.compression:.4f} err {r.err:.3g} t_lu {r.t_lu:.3f}s")
    return 0


_COMMANDS = {
    "mesh": _cmd_mesh,
    "assemble": _cmd_assemble,
    "factor": _cmd_factor,
    "solve": _cmd_solve,
    "rankstudy": _cmd_rankstudy,
    "poincare": _cmd_poincare,
    "caccioppoli": _cmd_caccioppoli,
    "bench": _cmd_bench,
}

_NUMERICAL_ERRORS = (fem.CoercivityError, flow.TraceError, FactorizationError,
                     StructureError, SingularMatrixError, np.linalg.LinAlgError,
                     ValueError)


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
