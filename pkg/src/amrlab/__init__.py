"""amrlab: a 2D adaptive finite-element laboratory on the unit square.

Quadtree meshes with hanging-node constraints, degree 1..4 Lagrange elements
for the Poisson problem, error-matched adaptive refinement, round-off error
measurement via manufactured solutions, and prediction of the minimum
achievable error from fitted power laws.
"""

from .fem import Solution, assemble, build_dof_map, solve_poisson
from .mesh import (QuadMesh, make_graded_initial_mesh, make_initial_mesh,
                   refine_cells, refine_regular)
from .metrics import (AMR, REG, ConvergenceRecord, History, kelly_indicators,
                      l2_error_exact, observed_order, richardson_error)
from .predict import (ErrorModel, Prediction, build_model, detect_regime,
                      extract_CT, predict_h_tol, predict_optimum)
from .problems import (ProblemSpec, constant_problem, gaussian_problem,
                       linear_problem, make_problem)
from .refine import (RefinementOutcome, eoamr_step, mark_fixed_fraction,
                     pct_init_rule, seek_pct_opt)
from .roundoff import RoundoffFit, fit_roundoff, measure_roundoff_series

__version__ = "0.1.0"
