"""Convection fields, the coercivity-condition check, and streamline projection.

All bundled fields have first component identically 1, so every streamline
crosses the inflow edge {x = -1} exactly once. That edge is the section
onto which points are projected: two points share a projection iff they
lie on the same (discrete) streamline.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class Field:
    """Analytic convection field with closed-form divergence.

    velocity / divergence act on arrays of points with shape (..., 2).
    """

    name: str
    velocity: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    divergence: Callable[[np.ndarray], np.ndarray] = field(repr=False)


def _const_v(p: np.ndarray) -> np.ndarray:
    out = np.zeros_like(p, dtype=float)
    out[..., 0] = 1.0
    return out


def _cos_shear_v(p: np.ndarray) -> np.ndarray:
    out = np.empty_like(p, dtype=float)
    out[..., 0] = 1.0
    out[..., 1] = (0.5 - p[..., 1]) * np.cos(4.0 * np.pi * p[..., 0])
    return out


def _exp_shear_v(p: np.ndarray) -> np.ndarray:
    out = np.empty_like(p, dtype=float)
    out[..., 0] = 1.0
    out[..., 1] = 0.5 * (p[..., 1] + 0.8) * np.exp(p[..., 0])
    return out


CONST = Field("const", _const_v, lambda p: np.zeros(p.shape[:-1]))
COS_SHEAR = Field("cos", _cos_shear_v, lambda p: -np.cos(4.0 * np.pi * p[..., 0]))
EXP_SHEAR = Field("exp", _exp_shear_v, lambda p: 0.5 * np.exp(p[..., 0]))

# Pure diffusion-reaction probe; not traceable, so not in the CLI registry.
ZERO = Field("zero", lambda p: np.zeros_like(p, dtype=float),
             lambda p: np.zeros(p.shape[:-1]))

FIELDS = {f.name: f for f in (CONST, COS_SHEAR, EXP_SHEAR)}


def get_field(name: str) -> Field:
    try:
        return FIELDS[name]
    except KeyError:
        raise KeyError(f"unknown field {name!r}, expected one of {sorted(FIELDS)}")


def eval_field(f: Field, p) -> np.ndarray:
    """Velocity at a single point or an array of points."""
    return f.velocity(np.asarray(p, dtype=float))


def check_condition(f: Field, beta: float, samples: int = 101) -> tuple[bool, float]:
    """Check sup(div(b)/2 - beta) < 0 on a samples x samples grid of [-1,1]^2.

    Returns (condition holds, margin) where margin is the grid supremum;
    negative margin means the bilinear form is strongly coercive.
    """
    g = np.linspace(-1.0, 1.0, samples)
    xg, yg = np.meshgrid(g, g, indexing="xy")
    pts = np.stack([xg, yg], axis=-1)
    margin = float(np.max(f.divergence(pts) / 2.0 - beta))
    return margin < 0.0, margin


class TraceError(RuntimeError):
    """Streamline tracing failed (iteration cap or non-finite state)."""


def project_all(points: np.ndarray, f: Field, delta: float) -> np.ndarray:
    """Project points onto the section {x = -1} along backward streamlines.

    Integrates p <- p - delta * b(p) until x <= -1, then linearly
    interpolates the final step so the crossing lands on x = -1 exactly.
    Returns the y-coordinates of the crossings, aligned with the input.
    """
    if delta <= 0.0:
        raise ValueError("tracing step must be positive")
    pts = np.array(points, dtype=float).reshape(-1, 2)
    out = np.full(pts.shape[0], np.nan)

    done = pts[:, 0] <= -1.0
    out[done] = pts[done, 1]
    active = np.flatnonzero(~done)

    max_steps = int(np.ceil(16.0 / delta))
    cur = pts[active].copy()
    for _ in range(max_steps):
        if active.size == 0:
            break
        vel = f.velocity(cur)
        nxt = cur - delta * vel
        if not np.all(np.isfinite(nxt)):
            bad = active[~np.all(np.isfinite(nxt), axis=1)][0]
            raise TraceError(f"non-finite state while tracing point {bad}")
        crossed = nxt[:, 0] <= -1.0
        if np.any(crossed):
            c, nx = cur[crossed], nxt[crossed]
            t = (c[:, 0] + 1.0) / (c[:, 0] - nx[:, 0])
            out[active[crossed]] = c[:, 1] + t * (nx[:, 1] - c[:, 1])
            active = active[~crossed]
            nxt = nxt[~crossed]
        cur = nxt
    if active.size > 0:
        raise TraceError(
            f"iteration cap {max_steps} exceeded for point {active[0]} "
            f"(field {f.name}, delta {delta})"
        )
    return out


def trace_to_section(p, f: Field, delta: float) -> float:
    """Section coordinate of a single point (see project_all)."""
    return float(project_all(np.asarray(p, dtype=float).reshape(1, 2), f, delta)[0])


def dump_projections(path: str, points: np.ndarray, f: Field, delta: float) -> None:
    """CSV dump 'index,y_section' of the projections of `points`."""
    proj = project_all(points, f, delta)
    with open(path, "w") as fh:
        fh.write("index,y_section\n")
        for i, s in enumerate(proj):
            fh.write(f"{i},{float(s)!r}\n")
