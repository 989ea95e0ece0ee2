"""Marking strategies and the E_ref-oriented adaptive refinement (EOAMR) driver.

One EOAMR step refines the current mesh M0 so that the adaptive error matches
the error E_ref of a regular refinement of M0, using as small a marking
fraction as possible: trial fractions escalate from pct_init in steps of 10%
until the trial error is within a relative slack delta of E_ref, falling back
to regular refinement at 95%.  An accepted fraction above 85% signals a
permanent switch to regular refinement.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import fem, metrics
from .mesh import QuadMesh, refine_cells, refine_regular
from .problems import ProblemSpec

PCT_FLOOR = 0.05
PCT_STEP = 0.10
PCT_REG_FALLBACK = 0.95
PCT_REG_SWITCH = 0.85
PCT_SHRINK = 0.7
DEFAULT_DELTA = 0.10


def mark_fixed_fraction(indicators: np.ndarray, pct: float,
                        ids: np.ndarray | None = None) -> list[int]:
    """Ids of the ceil(pct * n) cells with the largest indicators.

    Ties are broken toward the smaller cell id.  ``ids`` defaults to the
    positions 0..n-1; pass the mesh's active ids when marking a mesh.
    """
    indicators = np.asarray(indicators, dtype=float)
    if indicators.size == 0:
        raise ValueError("cannot mark an empty indicator list")
    if not 0.0 < pct <= 1.0:
        raise ValueError(f"pct must be in (0, 1], got {pct}")
    if ids is None:
        ids = np.arange(indicators.size)
    else:
        ids = np.asarray(ids)
    n_mark = math.ceil(pct * indicators.size)
    order = np.lexsort((ids, -indicators))
    return sorted(int(i) for i in ids[order[:n_mark]])


def pct_init_rule(pct_prev: float | None) -> float:
    """First trial fraction: 5% initially, 0.7 * pct_prev afterwards.

    The estimator distribution flattens with each adaptive refinement, so
    later rounds start slightly below the previously accepted fraction,
    clamped below at 5%.
    """
    if pct_prev is None:
        return PCT_FLOOR
    return max(PCT_FLOOR, PCT_SHRINK * pct_prev)


@dataclass
class EoamrState:
    """Bookkeeping of one pct-seeking round."""

    M0: QuadMesh
    E_ref: float
    pct_prev: float | None
    pct_init: float
    pct_tst: float
    E_tst: float | None = None
    E_init: float | None = None


@dataclass
class RefinementOutcome:
    """Result of one EOAMR step (or one seek round).

    ``accepted_pct`` is the accepted marking fraction, or None when the step
    fell back (or switched) to regular refinement.  ``records`` logs every
    trial; ``accepted_record`` is the row for the accepted refinement.
    """

    mesh: QuadMesh
    accepted_pct: float | None
    records: list[metrics.ConvergenceRecord]
    accepted_record: metrics.ConvergenceRecord
    solution: fem.Solution
    E: float
    solves: int
    switch_to_reg: bool = False
    state: EoamrState | None = None


def _solve_and_measure(problem: ProblemSpec, mesh: QuadMesh,
                       strategy: str, pct: float) -> tuple[fem.Solution, metrics.ConvergenceRecord]:
    t0 = time.perf_counter()
    sol = fem.solve_poisson(problem, mesh)
    err = metrics.l2_error_exact(problem, mesh, sol)
    rec = metrics.ConvergenceRecord(
        strategy=strategy, R=mesh.generation, pct=pct,
        h_min=mesh.min_cell_size(), N=sol.dofmap.N, E=err,
        wall_time=time.perf_counter() - t0,
    )
    return sol, rec


def seek_pct_opt(problem: ProblemSpec, M0: QuadMesh, E_ref: float,
                 pct_prev: float | None, *, delta: float = DEFAULT_DELTA,
                 indicators: np.ndarray | None = None,
                 reg_mesh: QuadMesh | None = None,
                 reg_solution: fem.Solution | None = None,
                 reg_record: metrics.ConvergenceRecord | None = None) -> RefinementOutcome:
    """Escalate trial fractions on M0 until the error matches E_ref.

    Every trial refines a fresh copy of M0 with the fixed-fraction marking of
    the M0 Kelly indicators; acceptance is E_tst <= (1 + delta) * E_ref.
    Reaching 95% without acceptance returns the regular refinement instead.
    """
    solves = 0
    if indicators is None:
        base_sol = fem.solve_poisson(problem, M0)
        indicators = metrics.kelly_indicators(problem, M0, base_sol)
        solves += 1

    pct_init = pct_init_rule(pct_prev)
    state = EoamrState(M0=M0, E_ref=E_ref, pct_prev=pct_prev,
                       pct_init=pct_init, pct_tst=pct_init)
    records: list[metrics.ConvergenceRecord] = []
    active_ids = np.array(M0.active_ids())

    pct = pct_init
    while pct < PCT_REG_FALLBACK:
        state.pct_tst = pct
        marked = mark_fixed_fraction(indicators, pct, ids=active_ids)
        trial_mesh = refine_cells(M0, marked)
        sol, rec = _solve_and_measure(problem, trial_mesh, metrics.AMR, pct)
        solves += 1
        records.append(rec)
        state.E_tst = rec.E
        if state.E_init is None:
            state.E_init = rec.E
        if rec.E <= (1.0 + delta) * E_ref:
            return RefinementOutcome(
                mesh=trial_mesh, accepted_pct=pct, records=records,
                accepted_record=rec, solution=sol, E=rec.E, solves=solves,
                state=state,
            )
        pct = round(pct + PCT_STEP, 12)

    # move to the regular refinement
    if reg_mesh is None or reg_solution is None or reg_record is None:
        reg_mesh = refine_regular(M0)
        reg_solution, reg_record = _solve_and_measure(problem, reg_mesh,
                                                      metrics.REG, 1.0)
        solves += 1
    records.append(reg_record)
    return RefinementOutcome(
        mesh=reg_mesh, accepted_pct=None, records=records,
        accepted_record=reg_record, solution=reg_solution, E=reg_record.E,
        solves=solves, state=state,
    )


def eoamr_step(problem: ProblemSpec, M0: QuadMesh,
               pct_prev: float | None, *, delta: float = DEFAULT_DELTA,
               M0_solution: fem.Solution | None = None) -> RefinementOutcome:
    """One full EOAMR step: compute E_ref by an extra regular refinement of
    M0, then seek the smallest acceptable fraction.

    An accepted fraction above 85% (including the 95% fallback) indicates a
    smooth estimator distribution; the step then returns the regular
    refinement and flags a permanent switch to the REG strategy.
    """
    solves = 0
    if M0_solution is None:
        M0_solution = fem.solve_poisson(problem, M0)
        solves += 1
    indicators = metrics.kelly_indicators(problem, M0, M0_solution)

    reg_mesh = refine_regular(M0)
    reg_solution, reg_record = _solve_and_measure(problem, reg_mesh, metrics.REG, 1.0)
    solves += 1
    E_ref = reg_record.E

    out = seek_pct_opt(problem, M0, E_ref, pct_prev, delta=delta,
                       indicators=indicators, reg_mesh=reg_mesh,
                       reg_solution=reg_solution, reg_record=reg_record)
    out.solves += solves

    if out.accepted_pct is not None and out.accepted_pct > PCT_REG_SWITCH:
        out.records.append(reg_record)
        return RefinementOutcome(
            mesh=reg_mesh, accepted_pct=None, records=out.records,
            accepted_record=reg_record, solution=reg_solution,
            E=reg_record.E, solves=out.solves, switch_to_reg=True,
            state=out.state,
        )
    if out.accepted_pct is None:
        out.switch_to_reg = True
    return out
