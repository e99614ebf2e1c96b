"""Rate-distortion solvers built on alternating divergence minimization.

All solvers share one geometry: the exponential family of product (or
conditionally product) distributions meets the mixture family of joint
distributions with the source marginal and the prescribed mean
distortion.  The m-step tilts the current output distribution by an
exponential weight in the distortion and solves a one-dimensional
convex root-finding problem for the tilt parameter; the e-step
marginalizes.  Rates are reported in nats.

Variants: a budgeted solver whose m-step runs a fixed number of
bisection halvings and repairs the iterate by a two-point mixture, a
side-information solver over conditionally product families, a solver
for several simultaneous distortion ceilings (projection onto a closed
convex set through its facet cover), and a full-dimensional route that
runs the generic engine on the simplex of joint distributions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Union

import numpy as np

from .classical import (ConditionalSystem, FeasibilityReport,
                        _check_distribution, canonical_simplex_system,
                        conditional_expectation_constraint,
                        distortion_feasibility, kl_divergence,
                        mutual_information, simplex_expectation_constraint)
from .convex import bisect, bisect_to_tolerance, expand_bracket
from .em import (EmIterate, EmOptions, EmTrace, run_em, run_em_approx,
                 run_em_closed_convex)
from .errors import (ArgumentError, ConvergenceError, InfeasibleError,
                     RankError)
from .families import (ClosedConvexMixtureFamily, ExponentialSubfamily,
                       LinearInequality, MixtureSubfamily)

__all__ = [
    "DistortionConstraint",
    "ExpConvergenceReport",
    "MODES",
    "RateDistortionProblem",
    "RdSolution",
    "check_exp_convergence",
    "solve_rd",
    "solve_rd_bisection",
    "solve_rd_fulldim",
    "solve_rd_multi",
    "solve_rd_side_info",
]

MODES = ("equality", "inequality")

_FEAS_TOL = 1e-12
_ROOT_TOL = 1e-12


@dataclass(frozen=True)
class DistortionConstraint:
    """One distortion matrix (inputs as rows, outputs as columns) and
    its level."""

    matrix: np.ndarray
    level: float

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[1] < 2:
            raise ArgumentError("a distortion matrix needs two dimensions "
                                "and at least two outputs")
        if not np.all(np.isfinite(matrix)):
            raise ArgumentError("distortion entries must be finite")
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "level", float(self.level))


@dataclass(frozen=True)
class RateDistortionProblem:
    """Validated problem container: source, constraints, mode.

    A single constraint dispatches to :func:`solve_rd`; several
    constraints require inequality mode and dispatch to
    :func:`solve_rd_multi`.
    """

    p_x: np.ndarray
    constraints: tuple
    mode: str = "equality"

    def __post_init__(self):
        p_x = _check_distribution(np.asarray(self.p_x, dtype=float), "p_x")
        constraints = tuple(self.constraints)
        if not constraints:
            raise ArgumentError("at least one distortion constraint is "
                                "required")
        for c in constraints:
            if not isinstance(c, DistortionConstraint):
                raise ArgumentError("constraints must be "
                                    "DistortionConstraint instances")
            if c.matrix.shape[0] != p_x.size:
                raise ArgumentError("distortion rows must match the source "
                                    "alphabet")
        n_outputs = constraints[0].matrix.shape[1]
        for c in constraints[1:]:
            if c.matrix.shape[1] != n_outputs:
                raise ArgumentError("all constraints must share the output "
                                    "alphabet")
        _check_mode(self.mode)
        if len(constraints) > 1 and self.mode != "inequality":
            raise ArgumentError("several simultaneous constraints are "
                                "supported in inequality mode only")
        object.__setattr__(self, "p_x", p_x)
        object.__setattr__(self, "constraints", constraints)

    @property
    def n_inputs(self) -> int:
        return self.p_x.size

    @property
    def n_outputs(self) -> int:
        return self.constraints[0].matrix.shape[1]

    def solve(self, options: Optional[EmOptions] = None,
              eps: Optional[float] = None) -> "RdSolution":
        if len(self.constraints) == 1:
            c = self.constraints[0]
            if eps is not None:
                return solve_rd_bisection(self.p_x, c.matrix, c.level, eps,
                                          mode=self.mode, options=options)
            return solve_rd(self.p_x, c.matrix, c.level, mode=self.mode,
                            options=options)
        if eps is not None:
            raise ArgumentError("the budgeted bisection protocol handles a "
                                "single constraint")
        return solve_rd_multi(self.p_x,
                              [c.matrix for c in self.constraints],
                              [c.level for c in self.constraints],
                              options=options)


@dataclass
class RdSolution:
    """Solver output.

    ``channel`` is row-stochastic with inputs as rows (for the
    side-information solver it is indexed [s][x][y] and
    ``output_marginal`` is per-s).  ``rate`` is the mutual information
    of the returned channel in nats; ``tau`` is the exponential tilt of
    the final m-step (an array of facet coefficients for the
    multi-constraint solver).  ``guarantee`` is the certified objective
    value of the selected round for the budgeted protocol, None
    elsewhere.
    """

    rate: float
    channel: np.ndarray
    output_marginal: np.ndarray
    tau: Union[float, np.ndarray]
    distortion: Union[float, np.ndarray]
    constraint_residual: float
    iterations: int
    converged: bool
    mode: str
    trace: EmTrace
    feasibility: Optional[FeasibilityReport] = None
    guarantee: Optional[float] = None
    active_constraints: Optional[tuple] = None


@dataclass(frozen=True)
class ExpConvergenceReport:
    """Rank diagnostic for the geometric-rate precondition.

    The alternation contracts geometrically only when the channel's
    columns span the full output space; ``holds`` records whether the
    numerical rank reaches the number of outputs.
    """

    singular_values: np.ndarray
    rank: int
    required_rank: int
    threshold: float
    holds: bool


def check_exp_convergence(channel, rtol: float = 1e-10
                          ) -> ExpConvergenceReport:
    """Singular-value rank test of a candidate channel."""
    w = np.asarray(channel, dtype=float)
    if w.ndim != 2:
        raise ArgumentError("channel must be a matrix")
    if not np.all(np.isfinite(w)):
        raise ArgumentError("channel entries must be finite")
    svals = np.linalg.svd(w, compute_uv=False)
    threshold = rtol * float(svals[0]) if svals.size else 0.0
    rank = int(np.sum(svals > threshold))
    required = w.shape[1]
    return ExpConvergenceReport(singular_values=svals, rank=rank,
                                required_rank=required, threshold=threshold,
                                holds=rank >= required)


def _check_mode(mode: str):
    if mode not in MODES:
        raise ArgumentError(f"mode must be one of {MODES}")


def _check_matrix(d, n_inputs: int) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    if d.ndim != 2 or d.shape[0] != n_inputs or d.shape[1] < 2:
        raise ArgumentError("distortion must have one row per input symbol "
                            "and at least two outputs")
    if not np.all(np.isfinite(d)):
        raise ArgumentError("distortion entries must be finite")
    return d


def _solver_options(options: Optional[EmOptions],
                    default_iterations: int = 1000) -> EmOptions:
    if options is None:
        options = EmOptions(max_iterations=default_iterations)
    if options.max_iterations < 2:
        raise ArgumentError("max_iterations is the highest iterate index "
                            "and must be at least 2")
    if options.objective_tolerance < 0.0:
        raise ArgumentError("objective tolerance must be non-negative")
    return options


def _with_reference(options: EmOptions, value: Optional[float]) -> EmOptions:
    if options.reference_divergence is None and value is not None:
        return replace(options, reference_divergence=value)
    return options


def _zero_rate_marginal(report: FeasibilityReport,
                        level: float, mode: str) -> Optional[np.ndarray]:
    """Output distribution of a rate-zero solution, or None when the
    constraint forces dependence on the input.

    Inequality mode: the cheapest input-independent output works as
    soon as its distortion meets the ceiling.  Equality mode: a
    two-point mixture of the cheapest and dearest outputs interpolates
    any level inside the product-channel range.
    """
    per_output = report.per_output
    n = per_output.size
    y_lo = int(np.argmin(per_output))
    if mode == "inequality":
        if level >= report.min_product - _FEAS_TOL:
            q = np.zeros(n)
            q[y_lo] = 1.0
            return q
        return None
    if report.min_product - _FEAS_TOL <= level <= \
            report.max_product + _FEAS_TOL:
        y_hi = int(np.argmax(per_output))
        spread = report.max_product - report.min_product
        lam = 0.0 if spread <= _FEAS_TOL else float(
            np.clip((level - report.min_product) / spread, 0.0, 1.0))
        q = np.zeros(n)
        q[y_lo] += 1.0 - lam
        q[y_hi] += lam
        return q
    return None


def _check_level_feasible(report: FeasibilityReport, level: float,
                          mode: str):
    if mode == "inequality":
        if level < report.achievable_min - _FEAS_TOL:
            raise InfeasibleError(
                "no channel reaches mean distortion %.6g; the achievable "
                "minimum is %.6g" % (level, report.achievable_min))
    elif not (report.achievable_min - _FEAS_TOL <= level
              <= report.achievable_max + _FEAS_TOL):
        raise InfeasibleError(
            "mean distortion %.6g is outside the achievable range "
            "[%.6g, %.6g]" % (level, report.achievable_min,
                              report.achievable_max))


def _zero_rate_solution(p_x, d, q, level, mode, report,
                        engine_mode: str) -> RdSolution:
    w = np.tile(q, (p_x.size, 1))
    distortion = float(q @ report.per_output)
    return RdSolution(
        rate=0.0, channel=w, output_marginal=q, tau=0.0,
        distortion=distortion,
        constraint_residual=(abs(distortion - level)
                             if mode == "equality" else 0.0),
        iterations=0, converged=True, mode=mode,
        trace=EmTrace(records=[], final_index=0, final_theta=None,
                      converged=True, mode=engine_mode),
        feasibility=report)


def _tilted_channel(q, tau: float, d) -> np.ndarray:
    """Row-normalized q_y * exp(tau * d(x, y)), overflow-shifted."""
    a = tau * d
    a -= a.max(axis=1, keepdims=True)
    w = q * np.exp(a)
    return w / w.sum(axis=1, keepdims=True)


def _mean_distortion(p_x, w, d) -> float:
    return float(np.sum(p_x[:, None] * w * d))


def _joint_kl(p_x, w, q) -> float:
    """KL of the joint p_x(x) w(y|x) against the product p_x(x) q(y)."""
    joint = p_x[:, None] * w
    return kl_divergence(joint.ravel(), np.outer(p_x, q).ravel())


def _find_tilt(p_x, q, d, level, tau_start: float,
               step0: float) -> tuple[float, np.ndarray]:
    """Tilt parameter matching the mean distortion, plus the channel."""

    def g(tau):
        return _mean_distortion(p_x, _tilted_channel(q, tau, d), d) - level

    if abs(g(tau_start)) <= _ROOT_TOL:
        tau = tau_start
    else:
        a, b = expand_bracket(g, tau_start, step0)
        tau = bisect_to_tolerance(g, a, b, value_tolerance=_ROOT_TOL).x
    return tau, _tilted_channel(q, tau, d)


def solve_rd(p_x, distortion, level: float, mode: str = "equality",
             options: Optional[EmOptions] = None,
             initial_marginal=None) -> RdSolution:
    """Minimize mutual information under a mean-distortion constraint.

    Each round tilts the current output marginal exponentially in the
    distortion, solving for the tilt that meets the level exactly, and
    then replaces the marginal by the tilted channel's output
    distribution.  Monotone descent with gap bounded by
    log(n_outputs)/(t-1) from the uniform start.  Inequality mode
    returns a rate-zero product solution whenever the ceiling is slack;
    otherwise the constraint binds and the equality iteration runs.
    """
    p_x = _check_distribution(np.asarray(p_x, dtype=float), "p_x")
    d = _check_matrix(distortion, p_x.size)
    level = float(level)
    _check_mode(mode)
    options = _solver_options(options)
    report = distortion_feasibility(p_x, d, level)
    _check_level_feasible(report, level, mode)
    q0 = _zero_rate_marginal(report, level, mode)
    if q0 is not None:
        return _zero_rate_solution(p_x, d, q0, level, mode, report, "exact")

    n2 = d.shape[1]
    if initial_marginal is None:
        q = np.full(n2, 1.0 / n2)
        options = _with_reference(options, math.log(n2))
    else:
        q = _check_distribution(np.asarray(initial_marginal, dtype=float),
                                "initial_marginal")
        if q.size != n2:
            raise ArgumentError("initial_marginal must have one entry per "
                                "output")

    keep = not options.low_memory
    system = ConditionalSystem(p_x, n2) if keep else None
    records: list[EmIterate] = []
    converged = False
    tau = 0.0
    step0 = 1.0
    previous_objective = None
    w = None
    distortion_value = level
    for t in range(2, options.max_iterations + 1):
        new_tau, w = _find_tilt(p_x, q, d, level, tau, step0)
        step0 = max(1e-8, 4.0 * abs(new_tau - tau))
        tau = new_tau
        pre_e = _joint_kl(p_x, w, q)
        q_next = p_x @ w
        objective = _joint_kl(p_x, w, q_next)
        distortion_value = _mean_distortion(p_x, w, d)
        residual = abs(distortion_value - level)
        bound = (options.reference_divergence / (t - 1)
                 if options.reference_divergence is not None else math.nan)
        record = EmIterate(
            t=t, objective=objective, pre_e_objective=pre_e, bound=bound,
            tau=np.array([tau]), constraint_residual=residual,
            selection_value=pre_e,
            theta_m=system.theta_of_channel(w) if keep else None,
            theta_e=(system.theta_of_channel(np.tile(q_next, (p_x.size, 1)))
                     if keep else None))
        records.append(record)
        if options.iteration_hook is not None:
            options.iteration_hook(record)
        q = q_next
        if previous_objective is not None and abs(
                previous_objective - objective) \
                < options.objective_tolerance:
            converged = True
            break
        previous_objective = objective

    trace = EmTrace(records=records, final_index=records[-1].t,
                    final_theta=records[-1].theta_m, converged=converged,
                    mode="exact", selection_enabled=keep)
    return RdSolution(
        rate=records[-1].objective, channel=w, output_marginal=q,
        tau=tau, distortion=distortion_value,
        constraint_residual=records[-1].constraint_residual,
        iterations=records[-1].t, converged=converged, mode=mode,
        trace=trace, feasibility=report)


def _product_family(system: ConditionalSystem) -> ExponentialSubfamily:
    """Product channels inside a conditional system: every input row
    shares one output distribution."""
    k = system.n_outputs - 1
    anchor = np.zeros(system.n_inputs * k)
    generators = np.tile(np.eye(k), (system.n_inputs, 1))
    return ExponentialSubfamily(anchor, generators)


def solve_rd_bisection(p_x, distortion, level: float, eps: float,
                       mode: str = "equality", t1: Optional[int] = None,
                       zeta_minus: Optional[float] = None,
                       options: Optional[EmOptions] = None) -> RdSolution:
    """Budgeted solver with certified per-round m-step accuracy.

    The total slack ``eps`` is split in three: a per-round objective
    slack, a per-round repair slack, and the bisection value target.
    Each m-step brackets the tilt, runs a precomputed number of
    halvings k chosen from the bracket's endpoint derivatives, the
    squared distortion spread and a curvature floor (``zeta_minus``,
    estimated from 17 bracket samples when not supplied), keeps the
    right endpoint as the tilt, and repairs the constraint exactly by
    mixing the two endpoint channels.  The e-step consumes the tilted
    (unrepaired) channel; the returned estimate is the repaired channel
    of the round with the best certified value, and ``guarantee``
    carries that value, which exceeds the optimal rate by at most
    log(n_outputs)/(t1 - 1) plus the two slacks.
    """
    p_x = _check_distribution(np.asarray(p_x, dtype=float), "p_x")
    d = _check_matrix(distortion, p_x.size)
    level = float(level)
    _check_mode(mode)
    if not eps > 0.0:
        raise ArgumentError("eps must be positive")
    report = distortion_feasibility(p_x, d, level)
    _check_level_feasible(report, level, mode)
    q0 = _zero_rate_marginal(report, level, mode)
    if q0 is not None:
        return _zero_rate_solution(p_x, d, q0, level, mode, report,
                                   "approx_m_step")

    n2 = d.shape[1]
    eps_slack = eps / 3.0
    if t1 is None:
        t1 = math.ceil(3.0 * math.log(n2) / eps) + 1
    if t1 < 2:
        raise ArgumentError("the iteration budget must be at least 2")
    if options is None:
        options = EmOptions(max_iterations=t1)
    options = replace(options, max_iterations=t1, objective_tolerance=0.0,
                      objective_slack=eps_slack, divergence_slack=eps_slack,
                      mode=None)
    options = _with_reference(options, math.log(n2))

    system = ConditionalSystem(p_x, n2)
    exp_family = _product_family(system)
    direction, target = conditional_expectation_constraint(p_x, d, level)
    mix_family = MixtureSubfamily(direction[None, :], [target])

    excess = level - d
    zeta_plus = float(np.max(excess ** 2))
    state = {"tau": 0.0}

    def oracle(sys, family, theta, t):
        q = sys.channel(theta)[0]

        def g(tau):
            w = _tilted_channel(q, tau, excess)
            return float(np.sum(p_x[:, None] * w * excess))

        def curvature(tau):
            w = _tilted_channel(q, tau, excess)
            m1 = (w * excess).sum(axis=1)
            m2 = (w * excess ** 2).sum(axis=1)
            return float(p_x @ (m2 - m1 ** 2))

        a, b = expand_bracket(g, state["tau"], 1.0)
        if a == b:
            w_bar = _tilted_channel(q, a, excess)
            state["tau"] = a
            theta_bar = sys.theta_of_channel(w_bar)
            return theta_bar, theta_bar, np.array([-a])
        floor = zeta_minus
        if floor is None:
            samples = [curvature(x) for x in np.linspace(a, b, 17)]
            floor = min(samples)
        if not floor > 0.0:
            raise ConvergenceError(
                "the curvature floor on the bracket is not positive; "
                "supply zeta_minus")
        g_a, g_b = g(a), g(b)
        g0 = max(abs(g_a), abs(g_b))
        k = math.ceil(math.log2(g0 ** 2 * zeta_plus / floor ** 2)
                      - math.log2(eps_slack))
        k = max(1, min(k, 120))
        for _ in range(6):
            result = bisect(g, a, b, k)
            w_bar = _tilted_channel(q, result.b, excess)
            gb = result.derivative_at_b
            ga = g(result.a)
            if gb <= 0.0 or ga == gb:
                w_rep = w_bar
            else:
                kappa = gb / (gb - ga)
                w_rep = (1.0 - kappa) * w_bar \
                    + kappa * _tilted_channel(q, result.a, excess)
            repair = kl_divergence((p_x[:, None] * w_rep).ravel(),
                                   (p_x[:, None] * w_bar).ravel())
            if repair <= eps_slack:
                state["tau"] = result.b
                return (sys.theta_of_channel(w_bar),
                        sys.theta_of_channel(w_rep),
                        np.array([-result.b]))
            k += 4
        raise ConvergenceError("the repair distance stayed above the slack "
                               "after refining the bisection budget")

    trace = run_em_approx(system, exp_family, mix_family,
                          np.zeros(system.dim), oracle, options)
    theta_final = trace.final_theta
    w = system.channel(theta_final)
    q = p_x @ w
    rate = mutual_information(p_x[:, None] * w)
    distortion_value = _mean_distortion(p_x, w, d)
    final_record = trace.record_for(trace.final_index)
    return RdSolution(
        rate=rate, channel=w, output_marginal=q,
        tau=float(final_record.tau[0]), distortion=distortion_value,
        constraint_residual=abs(distortion_value - level),
        iterations=trace.records[-1].t, converged=True, mode=mode,
        trace=trace, feasibility=report,
        guarantee=float(final_record.selection_value))


def solve_rd_side_info(p_xs, distortion, level: float,
                       mode: str = "equality",
                       options: Optional[EmOptions] = None,
                       initial_marginal=None) -> RdSolution:
    """Rate distortion when the decoder observes side information.

    ``p_xs[x, s]`` is the joint source law; the channel may depend on
    both the input and the side symbol, while the rate is the
    conditional mutual information I(input; output | side).  One global
    tilt parameter couples the per-side subproblems because they share
    the distortion budget.
    """
    p_xs = np.asarray(p_xs, dtype=float)
    if p_xs.ndim != 2:
        raise ArgumentError("p_xs must be a joint matrix over input and "
                            "side symbols")
    _check_distribution(p_xs.ravel(), "p_xs")
    n1, ns = p_xs.shape
    d = _check_matrix(distortion, n1)
    n2 = d.shape[1]
    level = float(level)
    _check_mode(mode)
    options = _solver_options(options)

    p_s = p_xs.sum(axis=0)
    p_x_given_s = p_xs / p_s
    d_ys = p_x_given_s.T @ d
    min_product = float(p_s @ d_ys.min(axis=1))
    max_product = float(p_s @ d_ys.max(axis=1))
    achievable_min = float(p_xs.sum(axis=1) @ d.min(axis=1))
    achievable_max = float(p_xs.sum(axis=1) @ d.max(axis=1))
    report = FeasibilityReport(
        level=level, per_output=d_ys, min_product=min_product,
        max_product=max_product, product_feasible=min_product <= level,
        equality_achievable_by_product=min_product <= level <= max_product,
        achievable_min=achievable_min, achievable_max=achievable_max,
        equality_feasible=achievable_min <= level <= achievable_max)
    _check_level_feasible(report, level, mode)

    zero = _zero_rate_channel_side_info(report, d_ys, level, mode)
    if zero is not None:
        q = zero
        w = np.broadcast_to(q[:, None, :], (ns, n1, n2)).copy()
        distortion_value = float(np.einsum("xs,sxy,xy->", p_xs, w, d))
        return RdSolution(
            rate=0.0, channel=w, output_marginal=q, tau=0.0,
            distortion=distortion_value,
            constraint_residual=(abs(distortion_value - level)
                                 if mode == "equality" else 0.0),
            iterations=0, converged=True, mode=mode,
            trace=EmTrace(records=[], final_index=0, final_theta=None,
                          converged=True, mode="exact"),
            feasibility=report)

    if initial_marginal is None:
        q = np.full((ns, n2), 1.0 / n2)
        options = _with_reference(options, math.log(n2))
    else:
        q = np.asarray(initial_marginal, dtype=float)
        if q.shape != (ns, n2):
            raise ArgumentError("initial_marginal must be one distribution "
                                "per side symbol")
        for row in q:
            _check_distribution(row, "initial_marginal")

    def channel_at(tau, q_rows):
        a = tau * d
        a -= a.max(axis=1, keepdims=True)
        b = np.exp(a)
        w = q_rows[:, None, :] * b[None, :, :]
        return w / w.sum(axis=2, keepdims=True)

    def mean_distortion(w):
        return float(np.einsum("xs,sxy,xy->", p_xs, w, d))

    def joint_kl(w, q_rows):
        total = 0.0
        for s in range(ns):
            total += kl_divergence(
                (p_xs[:, s][:, None] * w[s]).ravel(),
                np.outer(p_xs[:, s], q_rows[s]).ravel())
        return 0.0 if total < 1e-14 else total

    records: list[EmIterate] = []
    converged = False
    tau = 0.0
    step0 = 1.0
    previous_objective = None
    w = None
    distortion_value = level
    for t in range(2, options.max_iterations + 1):
        def g(value):
            return mean_distortion(channel_at(value, q)) - level

        if abs(g(tau)) <= _ROOT_TOL:
            new_tau = tau
        else:
            a, b = expand_bracket(g, tau, step0)
            new_tau = bisect_to_tolerance(g, a, b,
                                          value_tolerance=_ROOT_TOL).x
        step0 = max(1e-8, 4.0 * abs(new_tau - tau))
        tau = new_tau
        w = channel_at(tau, q)
        pre_e = joint_kl(w, q)
        q_next = np.einsum("xs,sxy->sy", p_x_given_s, w)
        objective = joint_kl(w, q_next)
        distortion_value = mean_distortion(w)
        residual = abs(distortion_value - level)
        bound = (options.reference_divergence / (t - 1)
                 if options.reference_divergence is not None else math.nan)
        record = EmIterate(
            t=t, objective=objective, pre_e_objective=pre_e, bound=bound,
            tau=np.array([tau]), constraint_residual=residual,
            selection_value=pre_e)
        records.append(record)
        if options.iteration_hook is not None:
            options.iteration_hook(record)
        q = q_next
        if previous_objective is not None and abs(
                previous_objective - objective) \
                < options.objective_tolerance:
            converged = True
            break
        previous_objective = objective

    trace = EmTrace(records=records, final_index=records[-1].t,
                    final_theta=None, converged=converged, mode="exact",
                    selection_enabled=False)
    return RdSolution(
        rate=records[-1].objective, channel=w, output_marginal=q,
        tau=tau, distortion=distortion_value,
        constraint_residual=records[-1].constraint_residual,
        iterations=records[-1].t, converged=converged, mode=mode,
        trace=trace, feasibility=report)


def _zero_rate_channel_side_info(report: FeasibilityReport, d_ys, level,
                                 mode) -> Optional[np.ndarray]:
    """Per-side output distributions of a rate-zero solution."""
    ns, n2 = d_ys.shape
    lo_idx = np.argmin(d_ys, axis=1)
    if mode == "inequality":
        if level >= report.min_product - _FEAS_TOL:
            q = np.zeros((ns, n2))
            q[np.arange(ns), lo_idx] = 1.0
            return q
        return None
    if report.min_product - _FEAS_TOL <= level <= \
            report.max_product + _FEAS_TOL:
        hi_idx = np.argmax(d_ys, axis=1)
        spread = report.max_product - report.min_product
        lam = 0.0 if spread <= _FEAS_TOL else float(
            np.clip((level - report.min_product) / spread, 0.0, 1.0))
        q = np.zeros((ns, n2))
        q[np.arange(ns), lo_idx] += 1.0 - lam
        q[np.arange(ns), hi_idx] += lam
        return q
    return None


def solve_rd_multi(p_x, distortions: Sequence, levels: Sequence,
                   options: Optional[EmOptions] = None) -> RdSolution:
    """Several simultaneous distortion ceilings (inequality mode).

    The feasible joints form a closed convex mixture set; its
    m-projection enumerates the subsets of constraints as boundary
    facets (the empty subset first, then subsets in binary-counter
    order).  Subsets whose directions are linearly dependent cannot
    host a projection and are skipped at construction.
    """
    p_x = _check_distribution(np.asarray(p_x, dtype=float), "p_x")
    matrices = [_check_matrix(d, p_x.size) for d in distortions]
    m = len(matrices)
    if m == 0:
        raise ArgumentError("at least one constraint is required")
    if m != len(levels):
        raise ArgumentError("one level per distortion matrix")
    if m > 20:
        raise ArgumentError("at most 20 simultaneous constraints are "
                            "supported")
    n2 = matrices[0].shape[1]
    for d in matrices[1:]:
        if d.shape[1] != n2:
            raise ArgumentError("all constraints must share the output "
                                "alphabet")
    levels = [float(v) for v in levels]
    for d, level in zip(matrices, levels):
        achievable_min = float(p_x @ d.min(axis=1))
        if level < achievable_min - _FEAS_TOL:
            raise InfeasibleError(
                "no channel reaches mean distortion %.6g; the achievable "
                "minimum is %.6g" % (level, achievable_min))

    per_output = np.stack([p_x @ d for d in matrices])
    slack_columns = np.all(
        per_output <= np.asarray(levels)[:, None] + _FEAS_TOL, axis=0)
    if np.any(slack_columns):
        y = int(np.argmax(slack_columns))
        q = np.zeros(n2)
        q[y] = 1.0
        w = np.tile(q, (p_x.size, 1))
        distortion_value = per_output[:, y].copy()
        return RdSolution(
            rate=0.0, channel=w, output_marginal=q, tau=np.zeros(0),
            distortion=distortion_value, constraint_residual=0.0,
            iterations=0, converged=True, mode="inequality",
            trace=EmTrace(records=[], final_index=0, final_theta=None,
                          converged=True, mode="closed_convex"),
            active_constraints=())

    options = _solver_options(options)
    options = _with_reference(options, math.log(n2))
    system = ConditionalSystem(p_x, n2)
    exp_family = _product_family(system)
    pairs = [conditional_expectation_constraint(p_x, d, level)
             for d, level in zip(matrices, levels)]
    inequalities = tuple(LinearInequality(direction, target)
                         for direction, target in pairs)
    facets = []
    subsets: list[tuple] = [()]
    for mask in range(1, 2 ** m):
        active = tuple(i for i in range(m) if mask >> i & 1)
        try:
            base = MixtureSubfamily(
                np.stack([pairs[i][0] for i in active]),
                np.array([pairs[i][1] for i in active]))
        except RankError:
            continue
        facets.append(ClosedConvexMixtureFamily(
            base=base, label="{" + ",".join(map(str, active)) + "}"))
        subsets.append(active)
    family = ClosedConvexMixtureFamily(base=None, inequalities=inequalities,
                                       facets=tuple(facets), label="all")

    trace = run_em_closed_convex(system, exp_family, family,
                                 np.zeros(system.dim), options)
    theta_final = trace.final_theta
    w = system.channel(theta_final)
    q = p_x @ w
    rate = mutual_information(p_x[:, None] * w)
    distortion_value = np.array([_mean_distortion(p_x, w, d)
                                 for d in matrices])
    final_record = trace.record_for(trace.final_index)
    active = subsets[final_record.facet_index] \
        if final_record.facet_index is not None else None
    return RdSolution(
        rate=rate, channel=w, output_marginal=q, tau=final_record.tau,
        distortion=distortion_value,
        constraint_residual=final_record.constraint_residual,
        iterations=trace.records[-1].t, converged=trace.converged,
        mode="inequality", trace=trace, active_constraints=active)


def solve_rd_fulldim(p_x, distortion, level: float, mode: str = "equality",
                     options: Optional[EmOptions] = None) -> RdSolution:
    """Same problem as :func:`solve_rd` run through the generic engine
    on the full simplex of joint distributions.

    The mixture family pins the input marginal and the mean distortion;
    the exponential family holds the products of the source law with a
    free output distribution.  Useful as an independent cross-check of
    the specialized iteration.
    """
    p_x = _check_distribution(np.asarray(p_x, dtype=float), "p_x")
    d = _check_matrix(distortion, p_x.size)
    level = float(level)
    _check_mode(mode)
    options = _solver_options(options)
    report = distortion_feasibility(p_x, d, level)
    _check_level_feasible(report, level, mode)
    q0 = _zero_rate_marginal(report, level, mode)
    if q0 is not None:
        return _zero_rate_solution(p_x, d, q0, level, mode, report, "exact")

    n1, n2 = d.shape
    system = canonical_simplex_system(n1 * n2)
    directions = []
    targets = []
    for i in range(1, n1):
        indicator = np.zeros(n1 * n2)
        indicator[i * n2:(i + 1) * n2] = 1.0
        direction, target = simplex_expectation_constraint(indicator,
                                                           p_x[i])
        directions.append(direction)
        targets.append(target)
    direction, target = simplex_expectation_constraint(d.ravel(), level)
    directions.append(direction)
    targets.append(target)
    mix_family = MixtureSubfamily(np.stack(directions), np.array(targets))

    anchor = np.repeat(np.log(p_x / p_x[0]), n2)[1:]
    generators = np.tile(np.eye(n2)[:, 1:], (n1, 1))[1:, :]
    exp_family = ExponentialSubfamily(anchor, generators)

    trace = run_em(system, exp_family, mix_family, anchor, options)
    joint = system.distribution(trace.final_theta).reshape(n1, n2)
    w = joint / joint.sum(axis=1, keepdims=True)
    q = joint.sum(axis=0)
    rate = mutual_information(joint)
    distortion_value = float(np.sum(joint * d))
    final_record = trace.record_for(trace.final_index)
    return RdSolution(
        rate=rate, channel=w, output_marginal=q, tau=final_record.tau,
        distortion=distortion_value,
        constraint_residual=abs(distortion_value - level),
        iterations=trace.records[-1].t, converged=trace.converged,
        mode=mode, trace=trace, feasibility=report)
