"""Direct sparse solve of the constrained Poisson system.

A direct factorization (SuperLU through scipy, minimum-degree ordering on
A' + A, diagonal pivoting) is used so no iteration error enters the measured
errors; everything downstream of the round-off study depends on that.  The
ordering is deterministic and the factorization single-threaded, so identical
systems produce bitwise-identical solutions.
"""

from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

if TYPE_CHECKING:  # pragma: no cover
    from .fem import LinearSystem

# dense LDL' diagnosis of the failing pivot is affordable up to this size
_PIVOT_DIAGNOSIS_LIMIT = 4096


class FactorizationError(RuntimeError):
    """Direct factorization failed (singular or otherwise unusable matrix).

    ``pivot`` is the index of the first vanishing pivot when it could be
    determined (always for systems small enough to diagnose densely).
    """

    def __init__(self, message: str, pivot: int | None = None):
        super().__init__(message)
        self.pivot = pivot


def solve_direct(system: "LinearSystem") -> np.ndarray:
    """Solve the condensed system, returning the free-dof vector."""
    return solve_sparse(system.A, system.b)


def solve_sparse(A: sp.spmatrix, b: np.ndarray) -> np.ndarray:
    n = A.shape[0]
    if n == 0:
        return np.zeros(0)
    A = A.tocsc()
    try:
        lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A",
                       diag_pivot_thresh=0.0,
                       options={"SymmetricMode": True})
    except RuntimeError as exc:
        raise FactorizationError(str(exc), pivot=_diagnose_pivot(A)) from exc
    udiag = lu.U.diagonal()
    bad = np.flatnonzero(~np.isfinite(udiag) | (udiag == 0.0))
    if bad.size:
        raise FactorizationError(
            f"factorization produced a zero pivot at index {bad[0]}",
            pivot=int(bad[0]),
        )
    return lu.solve(np.asarray(b, dtype=float))


def _diagnose_pivot(A: sp.spmatrix) -> int | None:
    """Locate the first vanishing pivot of a failed factorization.

    Runs a dense LDL' when the system is small; for larger systems a zero
    row/column is reported if one exists, otherwise None.
    """
    n = A.shape[0]
    if n <= _PIVOT_DIAGNOSIS_LIMIT:
        dense = A.toarray()
        _, d, perm = scipy.linalg.ldl(dense)
        diag = np.abs(np.diag(d))
        scale = diag.max() if diag.size else 0.0
        bad = np.flatnonzero(diag <= 1e-14 * max(scale, 1.0))
        if bad.size:
            return int(perm[bad[0]])
        return None
    row_counts = np.diff(A.tocsr().indptr)
    empty = np.flatnonzero(row_counts == 0)
    return int(empty[0]) if empty.size else None
