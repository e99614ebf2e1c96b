"""Alternating Bregman-divergence minimization between an exponential
subfamily and a mixture subfamily, with rate-distortion solvers built
on top of the shared iteration engine.

The public surface groups into layers:

* :mod:`~bregman_em.core` -- Bregman geometries over natural/mixture
  coordinate pairs.
* :mod:`~bregman_em.convex` -- guaranteed-progress scalar minimization
  (bisection on the derivative, fixed-step gradient descent).
* :mod:`~bregman_em.families` -- exponential and mixture subfamilies
  and the two projections, including projection onto a closed convex
  set described by facets.
* :mod:`~bregman_em.em` -- the alternating minimization loop with its
  per-round records, convergence bounds, and CSV traces.
* :mod:`~bregman_em.classical` / :mod:`~bregman_em.rate_distortion` --
  probability simplices, channels, and the rate-distortion solvers.
* :mod:`~bregman_em.quantum` -- density-matrix geometry and the
  quantum rate-distortion solver.
"""

from .cli import BoundsReport, load_problem, verify_bounds
from .classical import (ConditionalSystem, FeasibilityReport, SimplexSystem,
                        canonical_simplex_system,
                        conditional_expectation_constraint,
                        conditional_system, distortion_feasibility,
                        floor_distribution, kl_divergence,
                        mutual_information, simplex_expectation_constraint,
                        simplex_system)
from .convex import (BisectionResult, bisect, bisect_to_tolerance,
                     expand_bracket, gradient_descent)
from .core import (DIVERGENCE_CLAMP, BregmanSystem, Chart, Point,
                   damped_newton, divergence, dual_system, hessian,
                   legendre_value, potential_value, reparametrize,
                   to_mixture, to_natural)
from .em import (EmIterate, EmOptions, EmTrace, convergence_bound,
                 exponential_bound, run_em, run_em_approx,
                 run_em_closed_convex, write_trace_csv)
from .errors import (ArgumentError, BracketError, BregmanEmError,
                     ConvergenceError, DimensionError, DomainError,
                     FormatError, InfeasibleError, NonMembershipError,
                     NotPositiveDefiniteError, OracleContractError,
                     RankError, SchemaError, SingularMatrixError,
                     SupportError, UnboundedError)
from .families import (ClosedConvexMixtureFamily, ClosedConvexProjection,
                       ExponentialSubfamily, LinearInequality,
                       MixtureSubfamily, MProjection, e_project, m_project,
                       m_project_closed_convex, pythagorean_residual)
from .quantum import (DensityMatrix, QrdFeasibility, QrdSolution,
                      QuantumSystem, gell_mann_basis, hermitian_function,
                      matrix_exp, matrix_log, partial_trace,
                      quantum_system, relative_entropy, solve_qrd,
                      theta_of_state)
from .rate_distortion import (DistortionConstraint, ExpConvergenceReport,
                              RateDistortionProblem, RdSolution,
                              check_exp_convergence, solve_rd,
                              solve_rd_bisection, solve_rd_fulldim,
                              solve_rd_multi, solve_rd_side_info)

__version__ = "0.1.0"

__all__ = [
    "ArgumentError", "BisectionResult", "BoundsReport", "BracketError",
    "BregmanEmError", "BregmanSystem", "Chart", "ClosedConvexMixtureFamily",
    "ClosedConvexProjection", "ConditionalSystem", "ConvergenceError",
    "DIVERGENCE_CLAMP", "DensityMatrix", "DimensionError",
    "DistortionConstraint", "DomainError", "EmIterate", "EmOptions",
    "EmTrace", "ExpConvergenceReport", "ExponentialSubfamily",
    "FeasibilityReport", "FormatError", "InfeasibleError",
    "LinearInequality", "MProjection", "MixtureSubfamily",
    "NonMembershipError", "NotPositiveDefiniteError",
    "OracleContractError", "Point", "QrdFeasibility", "QrdSolution",
    "QuantumSystem", "RankError", "RateDistortionProblem", "RdSolution",
    "SchemaError", "SimplexSystem", "SingularMatrixError", "SupportError",
    "UnboundedError", "bisect", "bisect_to_tolerance",
    "canonical_simplex_system", "check_exp_convergence",
    "conditional_expectation_constraint", "conditional_system",
    "convergence_bound", "damped_newton", "distortion_feasibility",
    "divergence", "dual_system", "e_project", "expand_bracket",
    "exponential_bound", "floor_distribution", "gell_mann_basis",
    "gradient_descent", "hermitian_function", "hessian", "kl_divergence",
    "legendre_value", "load_problem", "m_project",
    "m_project_closed_convex", "matrix_exp", "matrix_log",
    "mutual_information", "partial_trace", "potential_value",
    "pythagorean_residual", "quantum_system", "relative_entropy",
    "reparametrize", "run_em", "run_em_approx", "run_em_closed_convex",
    "simplex_expectation_constraint", "simplex_system", "solve_qrd",
    "solve_rd", "solve_rd_bisection", "solve_rd_fulldim", "solve_rd_multi",
    "solve_rd_side_info", "theta_of_state", "to_mixture", "to_natural",
    "verify_bounds", "write_trace_csv",
]
