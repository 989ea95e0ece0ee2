"""Quadtree quadrilateral meshes on the unit square.

Cells live in an implicit quadtree addressed by ``(level, i, j)``: the cell at
level L with indices i, j occupies ``[i*2^-L, (i+1)*2^-L] x [j*2^-L, (j+1)*2^-L]``.
All coordinates are dyadic rationals, so cell geometry is exact in binary
floating point and bitwise reproducible across runs.

Meshes are immutable: refinement builds and returns a new mesh.  2:1 balance
(face-adjacent active cells differ by at most one level) is enforced after
every refinement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence


class MeshError(ValueError):
    """Invalid argument to a mesh operation."""


# Child order within a split cell: SW, SE, NW, NE.
_CHILD_OFFSETS = ((0, 0), (1, 0), (0, 1), (1, 1))

# Face directions: west, east, south, north as (di, dj).
_FACE_DIRS = ((-1, 0), (1, 0), (0, -1), (0, 1))


@dataclass(frozen=True)
class Cell:
    """One quadtree cell.  Ids are stable and assigned in creation order."""

    id: int
    level: int
    i: int
    j: int
    active: bool
    children: tuple[int, int, int, int] | None = None

    @property
    def side(self) -> float:
        return math.ldexp(1.0, -self.level)

    @property
    def origin(self) -> tuple[float, float]:
        return (math.ldexp(self.i, -self.level), math.ldexp(self.j, -self.level))

    @property
    def center(self) -> tuple[float, float]:
        s = self.side
        x0, y0 = self.origin
        return (x0 + 0.5 * s, y0 + 0.5 * s)


class QuadMesh:
    """Quadtree mesh over [0,1]^2 with a refinement counter ``generation``.

    ``cells`` holds every cell ever created (active and inactive ancestors);
    active cells tile the unit square exactly.
    """

    def __init__(self, cells: Sequence[Cell], generation: int = 0):
        self.cells: tuple[Cell, ...] = tuple(cells)
        self.generation = generation
        self._active: dict[tuple[int, int, int], int] = {
            (c.level, c.i, c.j): c.id for c in self.cells if c.active
        }

    # -- basic queries -----------------------------------------------------

    def active_cells(self) -> list[Cell]:
        """Active cells ordered by id."""
        return [c for c in self.cells if c.active]

    def active_ids(self) -> list[int]:
        return [c.id for c in self.cells if c.active]

    def active_count(self) -> int:
        return len(self._active)

    def min_cell_size(self) -> float:
        return math.ldexp(1.0, -max(c.level for c in self.cells if c.active))

    def max_level(self) -> int:
        return max(c.level for c in self.cells if c.active)

    def cell_at(self, key: tuple[int, int, int]) -> Cell | None:
        """Active cell with tree address (level, i, j), if any."""
        cid = self._active.get(key)
        return None if cid is None else self.cells[cid]

    def containing_cell(self, level: int, i: int, j: int) -> Cell | None:
        """Active cell covering the region addressed by (level, i, j).

        Walks up the tree, so the result may be coarser than ``level``;
        returns None if the region is only covered by finer cells.
        """
        while level >= 0:
            c = self.cell_at((level, i, j))
            if c is not None:
                return c
            level, i, j = level - 1, i >> 1, j >> 1
        return None

    def locate_point(self, x: float, y: float) -> Cell:
        """Active cell containing the point (ties resolved toward +x/+y)."""
        if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
            raise MeshError(f"point ({x}, {y}) outside the unit square")
        level = self.max_level()
        n = 1 << level
        i = min(int(x * n), n - 1)
        j = min(int(y * n), n - 1)
        c = self.containing_cell(level, i, j)
        assert c is not None
        return c

    def face_neighbors(self, cell: Cell, direction: int) -> list[Cell]:
        """Active cells sharing the face of ``cell`` in ``direction``.

        Directions index ``(-1,0),(1,0),(0,-1),(0,1)`` = W, E, S, N.  Returns
        [] on the domain boundary; one cell for conforming or coarser
        neighbors; the list of finer cells touching the face otherwise.
        """
        di, dj = _FACE_DIRS[direction]
        n = 1 << cell.level
        i, j = cell.i + di, cell.j + dj
        if not (0 <= i < n and 0 <= j < n):
            return []
        same_or_coarser = self.containing_cell(cell.level, i, j)
        if same_or_coarser is not None:
            return [same_or_coarser]
        # Finer neighbors: descend into the region, keeping cells on the
        # shared face only.
        out: list[Cell] = []
        self._collect_face_children(cell.level, i, j, direction, out)
        return sorted(out, key=lambda c: c.id)

    def _collect_face_children(self, level: int, i: int, j: int, direction: int,
                               out: list[Cell]) -> None:
        c = self.cell_at((level, i, j))
        if c is not None:
            out.append(c)
            return
        # Children adjacent to the original cell lie on the near side of the
        # region: e.g. for direction east, the children with even local i.
        di, dj = _FACE_DIRS[direction]
        for ci, cj in _CHILD_OFFSETS:
            if di == 1 and ci != 0:
                continue
            if di == -1 and ci != 1:
                continue
            if dj == 1 and cj != 0:
                continue
            if dj == -1 and cj != 1:
                continue
            self._collect_face_children(level + 1, 2 * i + ci, 2 * j + cj,
                                        direction, out)

    # -- invariant checks (used by tests and debug paths) --------------------

    def check_tiling(self, tol: float = 1e-12) -> None:
        area = sum(c.side * c.side for c in self.active_cells())
        if abs(area - 1.0) > tol:
            raise AssertionError(f"active cells do not tile the square: area={area!r}")

    def check_balance(self) -> None:
        """Exhaustive scan: face-adjacent active cells differ by <= 1 level."""
        for c in self.active_cells():
            for d in range(4):
                for nb in self.face_neighbors(c, d):
                    if abs(nb.level - c.level) > 1:
                        raise AssertionError(
                            f"2:1 balance violated between cells {c.id} "
                            f"(level {c.level}) and {nb.id} (level {nb.level})"
                        )


# -- construction and refinement --------------------------------------------


class _Builder:
    """Mutable working state for mesh construction and refinement."""

    def __init__(self, cells: Iterable[Cell] = ()):
        self.cells: list[Cell] = list(cells)
        self.active: dict[tuple[int, int, int], int] = {
            (c.level, c.i, c.j): c.id for c in self.cells if c.active
        }

    def add(self, level: int, i: int, j: int) -> int:
        cid = len(self.cells)
        self.cells.append(Cell(cid, level, i, j, True))
        self.active[(level, i, j)] = cid
        return cid

    def split(self, cid: int) -> tuple[int, int, int, int]:
        cell = self.cells[cid]
        assert cell.active
        kids = tuple(
            self.add(cell.level + 1, 2 * cell.i + ci, 2 * cell.j + cj)
            for ci, cj in _CHILD_OFFSETS
        )
        self.cells[cid] = replace(cell, active=False, children=kids)
        del self.active[(cell.level, cell.i, cell.j)]
        return kids  # type: ignore[return-value]

    def coarser_face_neighbors(self, cid: int) -> list[int]:
        """Ids of active face neighbors strictly coarser than the cell."""
        cell = self.cells[cid]
        out = []
        n = 1 << cell.level
        for di, dj in _FACE_DIRS:
            i, j = cell.i + di, cell.j + dj
            if not (0 <= i < n and 0 <= j < n):
                continue
            level, ii, jj = cell.level, i, j
            while level >= 0:
                nb = self.active.get((level, ii, jj))
                if nb is not None:
                    if level < cell.level:
                        out.append(nb)
                    break
                level, ii, jj = level - 1, ii >> 1, jj >> 1
        return out

    def split_and_balance(self, ids: Iterable[int]) -> None:
        """Split all listed cells, then any cells needed for 2:1 balance."""
        queue = list(ids)
        k = 0
        while k < len(queue):
            cid = queue[k]
            k += 1
            if not self.cells[cid].active:
                continue
            kids = self.split(cid)
            for kid in kids:
                # children at level L+1 force neighbors at level < L to split
                for nb in self.coarser_face_neighbors(kid):
                    if self.cells[nb].level < self.cells[kid].level - 1:
                        queue.append(nb)


def make_initial_mesh(n0: int) -> QuadMesh:
    """Uniform n0 x n0 mesh of the unit square; n0 must be a power of two."""
    if n0 < 1 or (n0 & (n0 - 1)) != 0:
        raise MeshError(f"n0 must be a power of two >= 1, got {n0}")
    level = n0.bit_length() - 1
    b = _Builder()
    for j in range(n0):
        for i in range(n0):
            b.add(level, i, j)
    return QuadMesh(b.cells, generation=0)


def make_graded_initial_mesh(n0: int, center: tuple[float, float],
                             depth: int) -> QuadMesh:
    """Initial mesh refined ``depth`` extra levels around ``center``.

    Starting from the uniform n0 x n0 mesh, the cell(s) containing ``center``
    are split repeatedly; a point on a cell boundary splits every incident
    cell, keeping the grading symmetric.  The result is 2:1 balanced and has
    generation 0.
    """
    if depth < 0:
        raise MeshError(f"depth must be >= 0, got {depth}")
    x, y = center
    if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
        raise MeshError(f"center ({x}, {y}) outside the unit square")
    mesh = make_initial_mesh(n0)
    b = _Builder(mesh.cells)
    for _ in range(depth):
        incident = _cells_incident_to_point(b, x, y)
        for cid in incident:
            if b.cells[cid].active:
                b.split(cid)
    # Grading may leave level jumps > 1; iterate balance splits to a fixpoint.
    # (The worklist in split_and_balance is only complete when the mesh was
    # balanced beforehand, which holds for refine_cells but not here.)
    while True:
        violators = _unbalanced_ids(b)
        if not violators:
            break
        b.split_and_balance(violators)
    return QuadMesh(b.cells, generation=0)


def _cells_incident_to_point(b: _Builder, x: float, y: float) -> list[int]:
    out = []
    for key, cid in b.active.items():
        level, i, j = key
        s = math.ldexp(1.0, -level)
        x0, y0 = math.ldexp(i, -level), math.ldexp(j, -level)
        if x0 <= x <= x0 + s and y0 <= y <= y0 + s:
            out.append(cid)
    return sorted(out)


def _unbalanced_ids(b: _Builder) -> list[int]:
    """Coarse cells adjacent to active cells more than one level finer."""
    out: set[int] = set()
    for cid in b.active.values():
        level = b.cells[cid].level
        for nb in b.coarser_face_neighbors(cid):
            if b.cells[nb].level < level - 1:
                out.add(nb)
    return sorted(out)


def refine_cells(mesh: QuadMesh, ids: Iterable[int]) -> QuadMesh:
    """Split the listed active cells (plus any 2:1 balancing splits).

    Returns a new mesh with generation incremented by one.
    """
    ids = sorted(set(ids))
    for cid in ids:
        if cid < 0 or cid >= len(mesh.cells) or not mesh.cells[cid].active:
            raise MeshError(f"cell id {cid} is not an active cell")
    b = _Builder(mesh.cells)
    b.split_and_balance(ids)
    return QuadMesh(b.cells, generation=mesh.generation + 1)


def refine_regular(mesh: QuadMesh) -> QuadMesh:
    """Split every active cell (the REG strategy)."""
    return refine_cells(mesh, mesh.active_ids())


# -- serialization -----------------------------------------------------------


def dump_mesh(mesh: QuadMesh) -> str:
    """Line-based text format: one cell per line ``id level x y side active``."""
    lines = []
    for c in mesh.cells:
        x, y = c.origin
        lines.append(f"{c.id} {c.level} {x!r} {y!r} {c.side!r} {int(c.active)}")
    return "\n".join(lines) + "\n"
