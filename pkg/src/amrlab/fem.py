"""Tensor-product Lagrange discretization of the Poisson problem.

Elements are degree-p Lagrange polynomials on equispaced nodes of the
reference square [0,1]^2, integrated with Gauss-Legendre quadrature.  Global
degrees of freedom are identified by exact integer node keys (coordinates
scaled by p * 2^level_max), so nodes shared between cells coincide exactly and
hanging nodes on 2:1 faces are found without floating-point tolerance.

Hanging dofs are constrained to the coarse-side trace and condensed into the
system together with Dirichlet elimination:

    x_all = T x_free + g,   A_free = T' A T,   b_free = T' (b - A g)

Assembly is sequential and vectorized over cells in a fixed chunk order, so
identical inputs give bitwise-identical systems.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .mesh import Cell, QuadMesh
from .problems import ProblemSpec

_ASSEMBLY_CHUNK = 4096


class ConfigurationError(ValueError):
    """Discretization parameters violate a hard requirement."""


# -- reference element -------------------------------------------------------


def lagrange_nodes(p: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, p + 1)


def lagrange_eval(p: int, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values and derivatives of the p+1 Lagrange basis functions at t.

    Returns arrays of shape (len(t), p+1).
    """
    nodes = lagrange_nodes(p)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    vals = np.empty((t.size, p + 1))
    ders = np.empty((t.size, p + 1))
    for k in range(p + 1):
        den = np.prod([nodes[k] - nodes[m] for m in range(p + 1) if m != k])
        num = np.ones_like(t)
        for m in range(p + 1):
            if m != k:
                num *= t - nodes[m]
        vals[:, k] = num / den
        dsum = np.zeros_like(t)
        for m in range(p + 1):
            if m == k:
                continue
            prod = np.ones_like(t)
            for l in range(p + 1):
                if l != k and l != m:
                    prod *= t - nodes[l]
            dsum += prod
        ders[:, k] = dsum / den
    return vals, ders


def gauss_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """n-point Gauss-Legendre rule on [0,1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@dataclass(frozen=True)
class Reference:
    """Tabulated reference-element data for degree p with nq^2 quadrature.

    Local node n = b*(p+1) + a sits at (a/p, b/p); quadrature point
    q = qb*nq + qa.  ``stiff`` is the reference stiffness matrix, which for
    the 2D Laplacian is independent of the physical cell size.
    """

    p: int
    nq: int
    qp1d: np.ndarray
    qw1d: np.ndarray
    qx: np.ndarray       # (Q,)
    qy: np.ndarray
    qw: np.ndarray
    phi: np.ndarray      # (Q, N)
    dphix: np.ndarray    # (Q, N), reference-coordinate derivative
    dphiy: np.ndarray
    stiff: np.ndarray    # (N, N)


@lru_cache(maxsize=None)
def reference(p: int, nq: int) -> Reference:
    if not 1 <= p <= 4:
        raise ConfigurationError(f"element degree must be in 1..4, got {p}")
    if nq < p + 1:
        raise ConfigurationError(
            f"quadrature needs at least p+1 = {p + 1} points per direction, got {nq}"
        )
    t, w = gauss_rule(nq)
    v1, d1 = lagrange_eval(p, t)
    # tensorize: q = qb*nq + qa, n = b*(p+1) + a
    phi = np.einsum("qa,rb->rqba", v1, v1).reshape(nq * nq, -1)
    dphix = np.einsum("qa,rb->rqba", d1, v1).reshape(nq * nq, -1)
    dphiy = np.einsum("qa,rb->rqba", v1, d1).reshape(nq * nq, -1)
    qx = np.tile(t, nq)
    qy = np.repeat(t, nq)
    qw = (w[:, None] * w[None, :]).reshape(-1)  # w_b * w_a, q = qb*nq+qa
    stiff = (dphix * qw[:, None]).T @ dphix + (dphiy * qw[:, None]).T @ dphiy
    return Reference(p, nq, t, w, qx, qy, qw, phi, dphix, dphiy, stiff)


# faces: 0 = west (x=0), 1 = east (x=1), 2 = south (y=0), 3 = north (y=1);
# matches mesh._FACE_DIRS ordering.
@lru_cache(maxsize=None)
def basis_on_face(p: int, face: int, tkey: tuple[float, ...]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Basis values and reference derivatives at parameters t along a face.

    Returns (phi, dphix, dphiy) of shape (len(t), (p+1)^2).
    """
    t = np.asarray(tkey, dtype=float)
    const = {0: 0.0, 1: 1.0, 2: 0.0, 3: 1.0}[face]
    vc, dc = lagrange_eval(p, np.array([const]))
    vt, dt = lagrange_eval(p, t)
    if face in (0, 1):  # x fixed, t runs along y
        va, da = np.repeat(vc, t.size, 0), np.repeat(dc, t.size, 0)
        vb, db = vt, dt
    else:               # y fixed, t runs along x
        va, da = vt, dt
        vb, db = np.repeat(vc, t.size, 0), np.repeat(dc, t.size, 0)
    phi = np.einsum("qa,qb->qba", va, vb).reshape(t.size, -1)
    dphix = np.einsum("qa,qb->qba", da, vb).reshape(t.size, -1)
    dphiy = np.einsum("qa,qb->qba", va, db).reshape(t.size, -1)
    return phi, dphix, dphiy


# -- degrees of freedom -------------------------------------------------------


@dataclass
class DofMap:
    """Global Lagrange dof numbering with hanging-node constraints.

    ``n_nodes`` counts every distinct node; hanging nodes carry constraint
    rows and are excluded from the reported dof count ``N = n_nodes -
    n_hanging``.  Dirichlet nodes (y = 0 or y = 1) are counted in N but
    eliminated from the solved system of dimension ``n_free``.
    """

    mesh: QuadMesh
    p: int
    cell_dofs: np.ndarray                  # (n_active, (p+1)^2) int32
    xy: np.ndarray                         # (n_nodes, 2) node coordinates
    dirichlet: np.ndarray                  # (n_nodes,) bool
    constraints: dict[int, list[tuple[int, float]]]  # hanging -> [(master, w)]
    cell_index: dict[int, int]             # mesh cell id -> row in cell_dofs

    @property
    def n_nodes(self) -> int:
        return self.xy.shape[0]

    @property
    def n_hanging(self) -> int:
        return len(self.constraints)

    @property
    def N(self) -> int:
        return self.n_nodes - self.n_hanging

    @property
    def n_free(self) -> int:
        # hanging nodes never lie on the Dirichlet boundary (asserted at build)
        return self.N - int(self.dirichlet.sum())


def dof_estimate(p: int, h: float) -> float:
    """Leading-order dof count (p/h)^2 for a uniform mesh of size h."""
    return (p / h) ** 2


def build_dof_map(mesh: QuadMesh, p: int) -> DofMap:
    """Number the Lagrange nodes of every active cell.

    Node identity uses exact integer keys (coordinates scaled by
    p * 2^level_max), so conforming faces share dofs exactly for any p.
    """
    if not 1 <= p <= 4:
        raise ConfigurationError(f"element degree must be in 1..4, got {p}")
    lmax = mesh.max_level()
    top = p << lmax
    active = mesh.active_cells()
    nloc = (p + 1) ** 2

    key_to_idx: dict[tuple[int, int], int] = {}
    keys: list[tuple[int, int]] = []
    cell_dofs = np.empty((len(active), nloc), dtype=np.int64)
    for row, cell in enumerate(active):
        shift = lmax - cell.level
        base_x = cell.i * p
        base_y = cell.j * p
        for b in range(p + 1):
            ky = (base_y + b) << shift
            for a in range(p + 1):
                kx = (base_x + a) << shift
                idx = key_to_idx.get((kx, ky))
                if idx is None:
                    idx = len(keys)
                    key_to_idx[(kx, ky)] = idx
                    keys.append((kx, ky))
                cell_dofs[row, b * (p + 1) + a] = idx

    scale = 1.0 / float(top)
    xy = np.array([(kx * scale, ky * scale) for kx, ky in keys], dtype=float)
    dirichlet = np.array([ky == 0 or ky == top for _, ky in keys], dtype=bool)

    constraints = _hanging_constraints(mesh, p, lmax, key_to_idx)
    assert not any(dirichlet[node] for node in constraints), \
        "hanging node on the Dirichlet boundary"
    cell_index = {cell.id: row for row, cell in enumerate(active)}
    return DofMap(mesh, p, cell_dofs, xy, dirichlet, constraints, cell_index)


def _hanging_constraints(mesh: QuadMesh, p: int, lmax: int,
                         key_to_idx: dict[tuple[int, int], int]) -> dict[int, list[tuple[int, float]]]:
    raw: dict[int, list[tuple[int, float]]] = {}
    for cell in mesh.active_cells():
        for direction in range(4):
            fine = mesh.face_neighbors(cell, direction)
            if len(fine) != 2:
                continue  # conforming, coarser, or boundary: no hanging nodes here
            shift = lmax - cell.level
            span = p << shift
            # master nodes: this cell's p+1 nodes along the nonconforming face
            masters = _face_node_keys(cell, p, shift, direction)
            master_idx = [key_to_idx[k] for k in masters]
            master_keys = set(masters)
            for nb in fine:
                opposite = direction ^ 1  # neighbor's face touching ours
                for key in _face_node_keys(nb, p, lmax - nb.level, opposite):
                    if key in master_keys:
                        continue
                    node = key_to_idx[key]
                    if node in raw:
                        continue
                    # parameter along the coarse edge, exact in rationals
                    if direction in (0, 1):
                        t = (key[1] - masters[0][1]) / span
                    else:
                        t = (key[0] - masters[0][0]) / span
                    w = lagrange_eval(p, np.array([t]))[0][0]
                    raw[node] = [(m, float(w[k])) for k, m in enumerate(master_idx)
                                 if w[k] != 0.0]
    return _resolve_transitive(raw)


def _face_node_keys(cell: Cell, p: int, shift: int, direction: int) -> list[tuple[int, int]]:
    """Global keys of the cell's nodes on one face, ordered along the face."""
    bx, by = cell.i * p, cell.j * p
    if direction == 0:   # west
        return [((bx) << shift, (by + b) << shift) for b in range(p + 1)]
    if direction == 1:   # east
        return [((bx + p) << shift, (by + b) << shift) for b in range(p + 1)]
    if direction == 2:   # south
        return [((bx + a) << shift, (by) << shift) for a in range(p + 1)]
    return [((bx + a) << shift, (by + p) << shift) for a in range(p + 1)]


def _resolve_transitive(raw: dict[int, list[tuple[int, float]]]) -> dict[int, list[tuple[int, float]]]:
    """Substitute constrained masters until every master is unconstrained.

    A hanging vertex can itself be a master of a finer face's constraints;
    masters always live on coarser edges, so the recursion terminates.
    """
    resolved: dict[int, list[tuple[int, float]]] = {}

    def resolve(node: int, guard: frozenset[int]) -> list[tuple[int, float]]:
        if node in resolved:
            return resolved[node]
        if node in guard:
            raise AssertionError(f"cyclic hanging-node constraint at dof {node}")
        acc: dict[int, float] = {}
        for master, w in raw[node]:
            if master in raw:
                for m2, w2 in resolve(master, guard | {node}):
                    acc[m2] = acc.get(m2, 0.0) + w * w2
            else:
                acc[master] = acc.get(master, 0.0) + w
        out = sorted(acc.items())
        resolved[node] = out
        return out

    for node in sorted(raw):
        resolve(node, frozenset())
    return resolved


# -- assembly -----------------------------------------------------------------


@dataclass
class LinearSystem:
    """Constrained sparse system A x = b of dimension n_free.

    ``transform`` (T) and ``lift`` (g) reconstruct the full nodal vector from
    a solution of the condensed system: x_all = T x + g.
    """

    A: sp.csr_matrix
    b: np.ndarray
    n_free: int
    transform: sp.csr_matrix
    lift: np.ndarray

    def expand(self, x_free: np.ndarray) -> np.ndarray:
        return self.transform @ x_free + self.lift


def assemble(problem: ProblemSpec, mesh: QuadMesh, dofmap: DofMap,
             nq: int | None = None) -> LinearSystem:
    """Stiffness, load, and Neumann terms with constraints condensed.

    Gauss-Legendre with p+2 points per direction by default; fewer than p+1
    points is rejected.  Dirichlet dofs are eliminated by substitution, which
    keeps the reduced matrix symmetric.
    """
    p = dofmap.p
    if nq is None:
        nq = p + 2
    ref = reference(p, nq)
    active = mesh.active_cells()
    n = dofmap.n_nodes
    nloc = (p + 1) ** 2

    sides = np.array([c.side for c in active])
    x0 = np.array([c.origin[0] for c in active])
    y0 = np.array([c.origin[1] for c in active])

    chunks: list[sp.csr_matrix] = []
    b = np.zeros(n)
    for lo in range(0, len(active), _ASSEMBLY_CHUNK):
        hi = min(lo + _ASSEMBLY_CHUNK, len(active))
        dofs = dofmap.cell_dofs[lo:hi]
        nc = hi - lo
        # reference stiffness is size-independent for the 2D Laplacian
        data = np.tile(ref.stiff.ravel(), nc)
        rows = np.repeat(dofs, nloc, axis=1).ravel()
        cols = np.tile(dofs, (1, nloc)).ravel()
        chunks.append(sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr())

        qx = x0[lo:hi, None] + sides[lo:hi, None] * ref.qx[None, :]
        qy = y0[lo:hi, None] + sides[lo:hi, None] * ref.qy[None, :]
        fvals = problem.source(qx, qy)
        bloc = (sides[lo:hi, None] ** 2) * ((fvals * ref.qw[None, :]) @ ref.phi)
        np.add.at(b, dofs.ravel(), bloc.ravel())

    # pairwise tree reduction: deterministic and avoids O(chunks * nnz) adds
    while len(chunks) > 1:
        chunks = [chunks[k] + chunks[k + 1] if k + 1 < len(chunks) else chunks[k]
                  for k in range(0, len(chunks), 2)]
    A = chunks[0]

    _add_neumann(problem, mesh, dofmap, ref, b)
    return _condense(problem, dofmap, A, b)


def _add_neumann(problem: ProblemSpec, mesh: QuadMesh, dofmap: DofMap,
                 ref: Reference, b: np.ndarray) -> None:
    p = dofmap.p
    edge_vals, _ = lagrange_eval(p, ref.qp1d)
    for cell in mesh.active_cells():
        nside = 1 << cell.level
        for face, i_edge, nx in ((0, 0, -1.0), (1, nside - 1, 1.0)):
            if cell.i != i_edge:
                continue
            row = dofmap.cell_index[cell.id]
            s = cell.side
            yq = cell.origin[1] + s * ref.qp1d
            xq = np.full_like(yq, 0.0 if face == 0 else 1.0)
            g = problem.neumann(xq, yq, nx)
            contrib = s * ((g * ref.qw1d)[:, None] * edge_vals).sum(axis=0)
            a_loc = 0 if face == 0 else p
            for bidx in range(p + 1):
                b[dofmap.cell_dofs[row, bidx * (p + 1) + a_loc]] += contrib[bidx]


def _condense(problem: ProblemSpec, dofmap: DofMap, A: sp.csr_matrix,
              b: np.ndarray) -> LinearSystem:
    n = dofmap.n_nodes
    free_col = np.full(n, -1, dtype=np.int64)
    col = 0
    for node in range(n):
        if node in dofmap.constraints or dofmap.dirichlet[node]:
            continue
        free_col[node] = col
        col += 1
    n_free = col

    lift = np.zeros(n)
    dir_nodes = np.flatnonzero(dofmap.dirichlet)
    if dir_nodes.size:
        lift[dir_nodes] = problem.dirichlet(dofmap.xy[dir_nodes, 0],
                                            dofmap.xy[dir_nodes, 1])

    rows, cols, data = [], [], []
    for node in range(n):
        if free_col[node] >= 0:
            rows.append(node)
            cols.append(free_col[node])
            data.append(1.0)
    for node, masters in dofmap.constraints.items():
        for master, w in masters:
            if free_col[master] >= 0:
                rows.append(node)
                cols.append(free_col[master])
                data.append(w)
            else:
                lift[node] += w * lift[master]
    T = sp.coo_matrix((data, (rows, cols)), shape=(n, n_free)).tocsr()

    A_ff = (T.T @ A @ T).tocsr()
    b_f = T.T @ (b - A @ lift)
    return LinearSystem(A_ff, b_f, n_free, T, lift)


# -- solution container -------------------------------------------------------


@dataclass
class Solution:
    """Discrete solution: full nodal values (hanging nodes resolved)."""

    problem: ProblemSpec
    mesh: QuadMesh
    dofmap: DofMap
    values: np.ndarray

    def cell_values_at(self, ref_pts: tuple[np.ndarray, np.ndarray]) -> np.ndarray:
        """u_h at the given reference points of every active cell.

        ``ref_pts`` are 1D arrays (rx, ry) of equal length Q in [0,1];
        returns an (n_active, Q) array, rows ordered like cell_dofs.
        """
        rx, ry = ref_pts
        vx, _ = lagrange_eval(self.dofmap.p, rx)
        vy, _ = lagrange_eval(self.dofmap.p, ry)
        phi = np.einsum("qa,qb->qba", vx, vy).reshape(rx.size, -1)
        return self.values[self.dofmap.cell_dofs] @ phi.T


def solve_poisson(problem: ProblemSpec, mesh: QuadMesh,
                  nq: int | None = None) -> Solution:
    """Build dofs, assemble, solve directly, and expand to nodal values."""
    from .linsolve import solve_direct

    dofmap = build_dof_map(mesh, problem.degree)
    system = assemble(problem, mesh, dofmap, nq=nq)
    if system.n_free == 0:
        values = system.lift.copy()
    else:
        values = system.expand(solve_direct(system))
    return Solution(problem, mesh, dofmap, values)
