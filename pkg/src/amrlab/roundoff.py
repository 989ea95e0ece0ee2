"""Round-off error measurement and the power-law fit E_R = alpha * N^beta.

The u = 1 manufactured solution lies in every Lagrange space, so its exact-L2
error is pure accumulated round-off.  Two measurement scenarios mirror the
ways adaptivity can interact with round-off: sweeping the marking fraction on
a fixed mesh, and refining repeatedly with one constant fraction.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import fem, metrics
from .mesh import QuadMesh, make_initial_mesh, refine_cells, refine_regular
from .problems import ProblemSpec, constant_problem
from .refine import mark_fixed_fraction

# fits drop sub-resolution points below 10 eps * ||u|| (||u||_L2 = 1 for u = 1)
FIT_FLOOR = 10.0 * np.finfo(float).eps


@dataclass(frozen=True)
class RoundoffFit:
    """Least-squares power law through (N, E) points in log-log space."""

    alpha_R: float
    beta_R: float
    residual: float
    points_used: int

    def predict(self, N: float) -> float:
        return self.alpha_R * N ** self.beta_R


def fit_roundoff(points: list[tuple[float, float]], *,
                 floor: float = 0.0) -> RoundoffFit:
    """Fit E = alpha * N^beta by least squares on (log N, log E).

    Points with E <= 0 are rejected; points with E below ``floor`` are
    excluded as sub-resolution noise (measured series pass the 10-eps floor,
    see fit_records; synthetic data fits everything by default).  The fit is
    order-independent.
    """
    if any(e <= 0 for _, e in points):
        raise ValueError("round-off fit requires positive errors")
    if len(points) < 2:
        raise ValueError(f"round-off fit requires >= 2 points, got {len(points)}")
    usable = sorted((n, e) for n, e in points if e >= floor)
    if len(usable) < 2:
        raise ValueError(
            f"only {len(usable)} points above the noise floor {floor:g}"
        )
    logn = np.log([n for n, _ in usable])
    loge = np.log([e for _, e in usable])
    beta, logalpha = np.polyfit(logn, loge, 1)
    resid = loge - (logalpha + beta * logn)
    rms = math.sqrt(float(np.mean(resid * resid)))
    return RoundoffFit(alpha_R=float(math.exp(logalpha)), beta_R=float(beta),
                       residual=rms, points_used=len(usable))


def measure_roundoff_series(p: int, mesh_schedule: list[tuple[str, float, QuadMesh]],
                            ) -> tuple[list[tuple[int, float]], list[metrics.ConvergenceRecord]]:
    """Solve u = 1 with degree p on every mesh of the schedule.

    ``mesh_schedule`` holds (strategy, pct, mesh) triples; returns the (N, E)
    points together with the per-mesh records (kind = roundoff).
    """
    problem = constant_problem(p)
    points: list[tuple[int, float]] = []
    records: list[metrics.ConvergenceRecord] = []
    for strategy, pct, mesh in mesh_schedule:
        t0 = time.perf_counter()
        sol = fem.solve_poisson(problem, mesh)
        err = metrics.l2_error_exact(problem, mesh, sol)
        points.append((sol.dofmap.N, err))
        records.append(metrics.ConvergenceRecord(
            strategy=strategy, R=mesh.generation, pct=pct,
            h_min=mesh.min_cell_size(), N=sol.dofmap.N, E=err,
            wall_time=time.perf_counter() - t0, kind="roundoff",
        ))
    return points, records


def reg_schedule(n0: int, levels: int) -> list[tuple[str, float, QuadMesh]]:
    """Regular refinements R = 0..levels of the n0 x n0 mesh."""
    out = []
    mesh = make_initial_mesh(n0)
    for _ in range(levels + 1):
        out.append((metrics.REG, 1.0, mesh))
        mesh = refine_regular(mesh)
    return out


def _noise_marked(problem: ProblemSpec, mesh: QuadMesh, pct: float) -> QuadMesh:
    """One fixed-fraction refinement driven by the (noise-level) indicators."""
    sol = fem.solve_poisson(problem, mesh)
    ind = metrics.kelly_indicators(problem, mesh, sol)
    marked = mark_fixed_fraction(ind, pct, ids=np.array(mesh.active_ids()))
    return refine_cells(mesh, marked)


def scenario_a(p: int, base_levels: list[int], pcts: list[float], n0: int = 4,
               ) -> dict[int, list[metrics.ConvergenceRecord]]:
    """Sweep the marking fraction on fixed base meshes.

    For each regular level R in ``base_levels``, one adaptive refinement is
    run per fraction in ``pcts`` (marking ranks the round-off-noise
    indicators; the ranking is deterministic).  Returns records per base
    level, ordered by pct; a trailing pct = 1.0 entry reproduces the next
    regular level.
    """
    problem = constant_problem(p)
    mesh = make_initial_mesh(n0)
    by_level: dict[int, QuadMesh] = {0: mesh}
    for r in range(1, max(base_levels) + 1):
        mesh = refine_regular(mesh)
        by_level[r] = mesh

    out: dict[int, list[metrics.ConvergenceRecord]] = {}
    for r in base_levels:
        base = by_level[r]
        schedule = [(metrics.AMR, pct, _noise_marked(problem, base, pct))
                    for pct in pcts]
        schedule.append((metrics.AMR, 1.0, _noise_marked(problem, base, 1.0)))
        _, records = measure_roundoff_series(p, schedule)
        out[r] = records
    return out


def scenario_b(p: int, pct: float, base_level: int, steps: int, n0: int = 4,
               ) -> tuple[list[metrics.ConvergenceRecord], list[metrics.ConvergenceRecord]]:
    """Refine with one constant fraction and compare against regular refinement.

    Returns (amr_records, reg_records): the AMR series starts from the
    regular mesh of ``base_level`` and applies ``steps`` fixed-fraction
    refinements; the REG series spans levels reaching a comparable dof count.
    """
    problem = constant_problem(p)
    base = make_initial_mesh(n0)
    for _ in range(base_level):
        base = refine_regular(base)

    amr_schedule = [(metrics.AMR, pct, base)]
    mesh = base
    for _ in range(steps):
        mesh = _noise_marked(problem, mesh, pct)
        amr_schedule.append((metrics.AMR, pct, mesh))
    _, amr_records = measure_roundoff_series(p, amr_schedule)

    target_n = amr_records[-1].N
    reg_sched = reg_schedule(n0, base_level)
    mesh = reg_sched[-1][2]
    while True:
        dm_n = fem.build_dof_map(mesh, p).N
        if dm_n >= target_n:
            break
        mesh = refine_regular(mesh)
        reg_sched.append((metrics.REG, 1.0, mesh))
    _, reg_records = measure_roundoff_series(p, reg_sched)
    return amr_records, reg_records


def fit_records(records: list[metrics.ConvergenceRecord], *,
                floor: float = FIT_FLOOR) -> RoundoffFit:
    return fit_roundoff([(r.N, r.E) for r in records], floor=floor)
