"""Manufactured Poisson problems on the unit square.

Each problem bundles a closed-form solution u with analytically derived data
for -laplace(u) = f, Dirichlet values on the top/bottom boundaries (y = 0 and
y = 1) and Neumann fluxes on the left/right boundaries (x = 0 and x = 1).
All callables are vectorized over numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

Field2D = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ProblemSpec:
    """Poisson problem with known exact solution.

    ``neumann(x, y, nx)`` returns du/dn on a vertical boundary whose outward
    normal is (nx, 0); nx is -1 on x = 0 and +1 on x = 1.
    """

    name: str
    degree: int
    exact: Field2D
    source: Field2D
    dirichlet: Field2D
    neumann: Callable[[np.ndarray, np.ndarray, float], np.ndarray]
    params: dict = field(default_factory=dict)

    def exact_eval(self, point: tuple[float, float]) -> float:
        """Exact solution at a single point of [0,1]^2."""
        x, y = point
        return float(self.exact(np.asarray(x, dtype=float), np.asarray(y, dtype=float)))


def gaussian_problem(c: float, degree: int) -> ProblemSpec:
    """Gaussian bump u = exp(-((x-1/2)^2 + (y-1/2)^2)/c).

    Small c gives a sharp, localized bump; c = 1 is nearly flat.
    """
    if c <= 0:
        raise ValueError(f"sharpness c must be positive, got {c}")

    def exact(x, y):
        return np.exp(-(((x - 0.5) ** 2 + (y - 0.5) ** 2) / c))

    def source(x, y):
        # f = -laplace(u) = (4/c) * u * (1 - r^2/c)
        r2 = (x - 0.5) ** 2 + (y - 0.5) ** 2
        return (4.0 / c) * np.exp(-r2 / c) * (1.0 - r2 / c)

    def neumann(x, y, nx):
        # du/dn = nx * du/dx, with du/dx = -2(x-1/2)/c * u
        r2 = (x - 0.5) ** 2 + (y - 0.5) ** 2
        return nx * (-2.0 * (x - 0.5) / c) * np.exp(-r2 / c)

    return ProblemSpec(
        name="gaussian",
        degree=degree,
        exact=exact,
        source=source,
        dirichlet=exact,
        neumann=neumann,
        params={"c": c},
    )


def constant_problem(degree: int) -> ProblemSpec:
    """u = 1 everywhere: f = 0, g_D = 1, g_N = 0.

    The discrete solution is exactly representable for every degree, so any
    deviation of the computed solution from 1 is accumulated round-off.
    """

    def one(x, y):
        return np.ones_like(np.broadcast_arrays(np.asarray(x, dtype=float), y)[0])

    def zero(x, y):
        return np.zeros_like(np.broadcast_arrays(np.asarray(x, dtype=float), y)[0])

    return ProblemSpec(
        name="constant",
        degree=degree,
        exact=one,
        source=zero,
        dirichlet=one,
        neumann=lambda x, y, nx: zero(x, y),
    )


def linear_problem(degree: int) -> ProblemSpec:
    """u = y: in every tensor-product Lagrange space, so the patch test must
    reproduce it to round-off."""

    def exact(x, y):
        return np.broadcast_arrays(x, np.asarray(y, dtype=float))[1].astype(float)

    def zero(x, y):
        return np.zeros_like(np.broadcast_arrays(np.asarray(x, dtype=float), y)[0])

    return ProblemSpec(
        name="linear",
        degree=degree,
        exact=exact,
        source=zero,
        dirichlet=exact,
        neumann=lambda x, y, nx: zero(x, y),
    )


_FACTORIES = {"gaussian": gaussian_problem, "constant": constant_problem,
              "linear": linear_problem}


def make_problem(name: str, degree: int, c: float = 1.0) -> ProblemSpec:
    """Problem lookup used by the CLI: gaussian (uses c), constant, linear."""
    if name not in _FACTORIES:
        raise ValueError(f"unknown problem {name!r}; expected one of {sorted(_FACTORIES)}")
    if name == "gaussian":
        return gaussian_problem(c, degree)
    return _FACTORIES[name](degree)
