"""Minimum-error prediction from fitted truncation and round-off power laws.

The total-error model in terms of the grid size h combines the truncation
law E_T = C_T * h^q (q = p+1) with the round-off law rewritten from dof count
to grid size through N ~ (p/h)^2:

    E(h) = C_T * h^q + C_R * h^{D_R},  C_R = alpha_R * p^{2 beta_R},
                                       D_R = -2 beta_R.

The interior minimum gives the smallest achievable error E_min at h_opt; a
tolerance is reachable iff tol >= E_min, and then h_tol inverts the
truncation law.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .metrics import ConvergenceRecord, observed_order
from .roundoff import RoundoffFit

DEFAULT_TOL_Q = 0.1


class ModelDegenerateError(ValueError):
    """The fitted model has no interior optimum (round-off does not grow)."""


@dataclass(frozen=True)
class RegimeSnapshot:
    """First refinement level at which the observed order matches q."""

    R_c: int
    E_c: float
    N_c: int
    h_c: float


def detect_regime(history: list[ConvergenceRecord], q_expected: float,
                  tol_q: float = DEFAULT_TOL_Q) -> RegimeSnapshot | None:
    """Scan consecutive regular-refinement records for |q_h - q| <= tol_q.

    Returns the snapshot at the earliest matching level, or None while the
    sequence is still pre-asymptotic.
    """
    regs = sorted((r for r in history if r.strategy == "REG"), key=lambda r: r.R)
    if len(regs) < 2:
        raise ValueError("regime detection needs at least 2 REG records")
    for prev, cur in zip(regs, regs[1:]):
        if prev.E <= 0 or cur.E <= 0:
            continue
        q_h = observed_order(prev.E, cur.E)
        if abs(q_h - q_expected) <= tol_q:
            return RegimeSnapshot(R_c=cur.R, E_c=cur.E, N_c=cur.N, h_c=cur.h_min)
    return None


def extract_CT(E_c: float, h_c: float, q: float) -> float:
    """Truncation coefficient C_T = E_c / h_c^q."""
    if E_c <= 0 or h_c <= 0 or q <= 0:
        raise ValueError(f"inputs must be positive: E_c={E_c}, h_c={h_c}, q={q}")
    return E_c / h_c ** q


@dataclass(frozen=True)
class ErrorModel:
    """Fitted coefficients of the total-error model for one element degree."""

    p: int
    C_T: float
    q: float
    alpha_R: float
    beta_R: float
    R_c: int | None = None
    E_c: float | None = None
    N_c: int | None = None
    h_c: float | None = None

    @property
    def C_R(self) -> float:
        return self.alpha_R * self.p ** (2.0 * self.beta_R)

    @property
    def D_R(self) -> float:
        return -2.0 * self.beta_R

    def total_error(self, h: float) -> float:
        return self.C_T * h ** self.q + self.C_R * h ** self.D_R


def build_model(p: int, snapshot: RegimeSnapshot, fit: RoundoffFit) -> ErrorModel:
    """Assemble the model from a regime snapshot and a round-off fit; q = p+1."""
    q = p + 1.0
    return ErrorModel(
        p=p, C_T=extract_CT(snapshot.E_c, snapshot.h_c, q), q=q,
        alpha_R=fit.alpha_R, beta_R=fit.beta_R,
        R_c=snapshot.R_c, E_c=snapshot.E_c, N_c=snapshot.N_c, h_c=snapshot.h_c,
    )


def predict_optimum(model: ErrorModel) -> tuple[float, float]:
    """Closed-form (h_opt, E_min) of the total-error model.

    h_opt = (-C_T q / (C_R D_R))^(1/(D_R - q)); E_min evaluates the model
    there.  Requires D_R < 0 < q and positive coefficients.
    """
    if model.C_T <= 0 or model.C_R <= 0 or model.q <= 0:
        raise ModelDegenerateError(
            f"coefficients must be positive: C_T={model.C_T}, C_R={model.C_R}, q={model.q}"
        )
    if model.D_R >= 0:
        raise ModelDegenerateError(
            f"round-off exponent D_R={model.D_R} is not negative; no interior optimum"
        )
    ratio = -(model.C_T * model.q) / (model.C_R * model.D_R)
    h_opt = ratio ** (1.0 / (model.D_R - model.q))
    return h_opt, model.total_error(h_opt)


@dataclass(frozen=True)
class Prediction:
    """Tolerance verdict: reachable iff tol >= E_min of the model."""

    h_opt: float
    E_min: float
    tol: float
    reachable: bool
    h_tol: float | None = None
    N_tol: float | None = None
    R_tol: int | None = None


def predict_h_tol(model: ErrorModel, tol: float,
                  h_current: float | None = None) -> Prediction:
    """Grid size needed for a tolerance, and whether it is achievable.

    When reachable, h_tol = (tol/C_T)^(1/q) inverts the truncation law,
    N_tol ~ (p/h_tol)^2, and R_tol counts the dyadic halvings from
    ``h_current`` (meshes only halve h, so the level count rounds up).
    """
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    h_opt, e_min = predict_optimum(model)
    if tol < e_min:
        return Prediction(h_opt=h_opt, E_min=e_min, tol=tol, reachable=False)
    h_tol = (tol / model.C_T) ** (1.0 / model.q)
    n_tol = (model.p / h_tol) ** 2
    r_tol = None
    if h_current is None:
        h_current = model.h_c
    if h_current is not None:
        r_tol = max(0, math.ceil(math.log2(h_current / h_tol)))
    return Prediction(h_opt=h_opt, E_min=e_min, tol=tol, reachable=True,
                      h_tol=h_tol, N_tol=n_tol, R_tol=r_tol)
