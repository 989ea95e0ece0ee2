"""Error measurement: exact L2 norms, Richardson recovery, Kelly indicators,
observed convergence orders, and the per-refinement record/history model.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import fem
from .mesh import QuadMesh, refine_regular
from .problems import ProblemSpec

REG = "REG"
AMR = "AMR"

CSV_HEADER = "strategy,R,pct,h_min,N,E,q_h,wall_time"


@dataclass
class ConvergenceRecord:
    """One refinement step: strategy, level, marking fraction, and error.

    ``kind`` tags what E measures (total, truncation, roundoff); it is an
    in-memory annotation and not part of the CSV schema.
    """

    strategy: str
    R: int
    pct: float
    h_min: float
    N: int
    E: float
    q_h: float | None = None
    wall_time: float = 0.0
    kind: str = "total"

    def validate(self) -> None:
        if self.strategy not in (REG, AMR):
            raise ValueError(f"strategy must be REG or AMR, got {self.strategy!r}")
        if self.E < 0:
            raise ValueError(f"E must be >= 0, got {self.E}")
        if not 0.0 < self.pct <= 1.0:
            raise ValueError(f"pct must be in (0, 1], got {self.pct}")

    def to_csv_row(self) -> str:
        qh = "" if self.q_h is None else repr(self.q_h)
        return (f"{self.strategy},{self.R},{self.pct!r},{self.h_min!r},"
                f"{self.N},{self.E!r},{qh},{self.wall_time!r}")

    @classmethod
    def from_csv_row(cls, row: str) -> "ConvergenceRecord":
        parts = row.split(",")
        if len(parts) != 8:
            raise ValueError(f"expected 8 CSV fields, got {len(parts)}: {row!r}")
        rec = cls(
            strategy=parts[0],
            R=int(parts[1]),
            pct=float(parts[2]),
            h_min=float(parts[3]),
            N=int(parts[4]),
            E=float(parts[5]),
            q_h=None if parts[6] == "" else float(parts[6]),
            wall_time=float(parts[7]),
        )
        rec.validate()
        return rec


@dataclass
class History:
    """Ordered record log of one experiment run.

    EOAMR runs log every trial; the accepted step is the last row of each
    refinement level, so ``main_line`` recovers the accepted trajectory.
    """

    records: list[ConvergenceRecord] = field(default_factory=list)

    def append(self, rec: ConvergenceRecord) -> None:
        rec.validate()
        self.records.append(rec)

    def main_line(self) -> list[ConvergenceRecord]:
        by_level: dict[int, ConvergenceRecord] = {}
        for rec in self.records:
            by_level[rec.R] = rec
        return [by_level[r] for r in sorted(by_level)]

    def reg(self) -> list[ConvergenceRecord]:
        return [r for r in self.records if r.strategy == REG]

    def validate(self) -> None:
        for rec in self.records:
            rec.validate()
        line = self.main_line()
        for a, b in zip(line, line[1:]):
            if b.N <= a.N:
                raise ValueError(
                    f"N must increase along the accepted line: {a.N} -> {b.N}"
                )

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write(CSV_HEADER + "\n")
        for rec in self.records:
            out.write(rec.to_csv_row() + "\n")
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "History":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0] != CSV_HEADER:
            raise ValueError(f"bad history header: {lines[0] if lines else ''!r}")
        return cls([ConvergenceRecord.from_csv_row(ln) for ln in lines[1:]])


# -- norms ---------------------------------------------------------------------


def _cell_geometry(mesh: QuadMesh):
    cells = mesh.active_cells()
    s = np.array([c.side for c in cells])
    x0 = np.array([c.origin[0] for c in cells])
    y0 = np.array([c.origin[1] for c in cells])
    return s, x0, y0


def l2_norm_of_difference(solution: fem.Solution,
                          reference_fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
                          nq: int | None = None) -> float:
    """sqrt(sum_cells int (ref - u_h)^2) with p+3 quadrature points."""
    dm = solution.dofmap
    ref = fem.reference(dm.p, nq if nq is not None else dm.p + 3)
    s, x0, y0 = _cell_geometry(solution.mesh)
    X = x0[:, None] + s[:, None] * ref.qx[None, :]
    Y = y0[:, None] + s[:, None] * ref.qy[None, :]
    U = solution.values[dm.cell_dofs] @ ref.phi.T
    diff = reference_fn(X, Y) - U
    return math.sqrt(float(((diff * diff * ref.qw[None, :]).sum(axis=1) * s * s).sum()))


def l2_error_exact(problem: ProblemSpec, mesh: QuadMesh,
                   solution: fem.Solution, nq: int | None = None) -> float:
    """Exact-solution L2 error of the discrete solution."""
    return l2_norm_of_difference(solution, problem.exact, nq=nq)


def richardson_error(problem: ProblemSpec, mesh: QuadMesh,
                     solution: fem.Solution) -> float:
    """Recovery estimate ||u_{h/2} - u_h||_L2.

    The reference is the solution on the regular refinement of the current
    mesh; the coarse solution is injected into the fine space exactly (every
    fine cell is a child of a coarse active cell).
    """
    fine_mesh = refine_regular(mesh)
    fine_sol = fem.solve_poisson(problem, fine_mesh)
    dm = fine_sol.dofmap
    p = dm.p
    ref = fem.reference(p, p + 3)
    fine_cells = fine_mesh.active_cells()
    s, _, _ = _cell_geometry(fine_mesh)
    U_fine = fine_sol.values[dm.cell_dofs] @ ref.phi.T

    coarse_dm = solution.dofmap
    coarse_rows = np.empty(len(fine_cells), dtype=np.int64)
    quadrant = np.empty(len(fine_cells), dtype=np.int64)
    for k, c in enumerate(fine_cells):
        parent = mesh.cell_at((c.level - 1, c.i >> 1, c.j >> 1))
        assert parent is not None
        coarse_rows[k] = coarse_dm.cell_index[parent.id]
        quadrant[k] = (c.i & 1) + 2 * (c.j & 1)

    U_coarse = np.empty_like(U_fine)
    coarse_vals = solution.values[coarse_dm.cell_dofs]
    for quad in range(4):
        ci, cj = quad & 1, quad >> 1
        vx, _ = fem.lagrange_eval(p, (ci + ref.qx) / 2.0)
        vy, _ = fem.lagrange_eval(p, (cj + ref.qy) / 2.0)
        phi = np.einsum("qa,qb->qba", vx, vy).reshape(ref.qx.size, -1)
        rows = np.flatnonzero(quadrant == quad)
        U_coarse[rows] = coarse_vals[coarse_rows[rows]] @ phi.T

    diff = U_fine - U_coarse
    return math.sqrt(float(((diff * diff * ref.qw[None, :]).sum(axis=1) * s * s).sum()))


def observed_order(E_h: float, E_half: float) -> float:
    """Convergence order between errors at h and h/2.

    Positive when the error decreases under refinement; computed as
    log(E_h / E_{h/2}) / log 2 so that smooth problems give q -> p+1.
    """
    if E_h <= 0 or E_half <= 0:
        raise ValueError(f"errors must be positive, got {E_h}, {E_half}")
    return math.log(E_h / E_half) / math.log(2.0)


# -- Kelly indicators ----------------------------------------------------------

# face index -> outward normal (nx, ny); matches mesh face directions W,E,S,N
_FACE_NORMALS = ((-1.0, 0.0), (1.0, 0.0), (0.0, -1.0), (0.0, 1.0))


def kelly_indicators(problem: ProblemSpec, mesh: QuadMesh,
                     solution: fem.Solution, nq: int | None = None) -> np.ndarray:
    """Per-cell Kelly indicator eta_K, ordered like mesh.active_cells().

    eta_K^2 = sum over the faces F of K of (h_F/24) * int_F jump^2, where the
    jump is the normal-derivative jump on interior faces, (g_N - du/dn) on
    the Neumann boundary (x = 0, 1), and zero on the Dirichlet boundary.
    """
    dm = solution.dofmap
    p = dm.p
    nq = nq if nq is not None else p + 2
    tq, wq = fem.gauss_rule(nq)
    eta2 = np.zeros(len(mesh.active_cells()))
    vals = solution.values[dm.cell_dofs]

    for cell in mesh.active_cells():
        row = dm.cell_index[cell.id]
        h_f = cell.side
        for face in range(4):
            nbs = mesh.face_neighbors(cell, face)
            nx, ny = _FACE_NORMALS[face]
            if not nbs:
                if face in (2, 3):
                    continue  # Dirichlet boundary face
                # Neumann face: residual g_N - du/dn
                dn = _normal_derivative(dm, vals, row, cell, face, tq, nx, ny)
                xq, yq = _face_points(cell, face, tq)
                g = problem.neumann(xq, yq, nx)
                integral = cell.side * float(((g - dn) ** 2 * wq).sum())
                eta2[row] += (h_f / 24.0) * integral
                continue
            opposite = face ^ 1
            if len(nbs) == 1 and nbs[0].level == cell.level:
                nb = nbs[0]
                dn_self = _normal_derivative(dm, vals, row, cell, face, tq, nx, ny)
                dn_nb = _normal_derivative(dm, vals, dm.cell_index[nb.id], nb,
                                           opposite, tq, nx, ny)
                integral = cell.side * float(((dn_self - dn_nb) ** 2 * wq).sum())
                eta2[row] += (h_f / 24.0) * integral
            elif len(nbs) == 1:
                # neighbor is coarser: this face is half of the neighbor's
                nb = nbs[0]
                off = _sub_offset(cell, nb, face)
                dn_self = _normal_derivative(dm, vals, row, cell, face, tq, nx, ny)
                dn_nb = _normal_derivative(dm, vals, dm.cell_index[nb.id], nb,
                                           opposite, (off + tq) / 2.0, nx, ny)
                integral = cell.side * float(((dn_self - dn_nb) ** 2 * wq).sum())
                eta2[row] += (h_f / 24.0) * integral
            else:
                # two finer neighbors: integrate each half of this face
                for nb in nbs:
                    off = _sub_offset(nb, cell, opposite)
                    dn_self = _normal_derivative(dm, vals, row, cell, face,
                                                 (off + tq) / 2.0, nx, ny)
                    dn_nb = _normal_derivative(dm, vals, dm.cell_index[nb.id], nb,
                                               opposite, tq, nx, ny)
                    integral = nb.side * float(((dn_self - dn_nb) ** 2 * wq).sum())
                    eta2[row] += (h_f / 24.0) * integral
    return np.sqrt(eta2)


def _face_points(cell, face: int, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x0, y0 = cell.origin
    s = cell.side
    if face in (0, 1):
        x = np.full_like(t, x0 if face == 0 else x0 + s)
        return x, y0 + s * t
    y = np.full_like(t, y0 if face == 2 else y0 + s)
    return x0 + s * t, y


def _sub_offset(fine, coarse, fine_face: int) -> int:
    """Which half (0 or 1) of the coarse face the fine cell's face occupies."""
    if fine_face in (0, 1):
        return fine.j - 2 * coarse.j
    return fine.i - 2 * coarse.i


def _normal_derivative(dm: fem.DofMap, vals: np.ndarray, row: int, cell,
                       face: int, t: np.ndarray, nx: float, ny: float) -> np.ndarray:
    _, dphix, dphiy = fem.basis_on_face(dm.p, face, tuple(float(v) for v in t))
    dgrad = nx * dphix + ny * dphiy
    return (vals[row] @ dgrad.T) / cell.side
