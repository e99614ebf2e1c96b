"""Quantum state families and the quantum rate-distortion solver.

Full-rank density matrices on a finite dimension form a Bregman system
whose potential is the log trace exponential over a fixed orthogonal
Hermitian basis; the divergence is the (Umegaki) relative entropy.
The rate-distortion solver alternates between the mixture family of
joint states with a pinned reference marginal and mean distortion and
the exponential family of product states, exactly as in the classical
solvers but with matrix logarithms in place of probability ratios.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .core import BregmanSystem
from .em import EmIterate, EmOptions, EmTrace
from .errors import (ArgumentError, ConvergenceError, InfeasibleError,
                     NotPositiveDefiniteError, RankError)

__all__ = [
    "DensityMatrix",
    "QrdFeasibility",
    "QrdSolution",
    "QuantumSystem",
    "gell_mann_basis",
    "hermitian_function",
    "matrix_exp",
    "matrix_log",
    "partial_trace",
    "quantum_system",
    "relative_entropy",
    "solve_qrd",
    "theta_of_state",
]

_HERMITIAN_TOL = 1e-8
_PSD_TOL = 1e-10
_MAX_TOTAL_DIM = 64


def gell_mann_basis(dim: int) -> np.ndarray:
    """Orthogonal traceless Hermitian basis, Tr(X_i X_j) = 2 delta_ij.

    Ordering: symmetric pair matrices for j < k in lexicographic order,
    then the antisymmetric pairs in the same order, then the diagonal
    matrices by increasing support size.  Shape (dim^2 - 1, dim, dim).
    """
    if dim < 2:
        raise ArgumentError("the basis needs dimension at least 2")
    out = []
    for j in range(dim):
        for k in range(j + 1, dim):
            m = np.zeros((dim, dim), dtype=complex)
            m[j, k] = 1.0
            m[k, j] = 1.0
            out.append(m)
    for j in range(dim):
        for k in range(j + 1, dim):
            m = np.zeros((dim, dim), dtype=complex)
            m[j, k] = -1.0j
            m[k, j] = 1.0j
            out.append(m)
    for l in range(1, dim):
        m = np.zeros((dim, dim), dtype=complex)
        scale = math.sqrt(2.0 / (l * (l + 1)))
        for i in range(l):
            m[i, i] = scale
        m[l, l] = -l * scale
        out.append(m)
    return np.stack(out)


def _check_hermitian(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ArgumentError(f"{name} must be a square matrix")
    if not np.all(np.isfinite(a.real)) or not np.all(np.isfinite(a.imag)):
        raise ArgumentError(f"{name} must have finite entries")
    if np.max(np.abs(a - a.conj().T)) > _HERMITIAN_TOL * max(
            1.0, float(np.max(np.abs(a)))):
        raise ArgumentError(f"{name} must be Hermitian")
    return 0.5 * (a + a.conj().T)


def hermitian_function(a, fn) -> np.ndarray:
    """Apply a scalar function to the eigenvalues of a Hermitian
    matrix."""
    a = _check_hermitian(a, "matrix")
    lam, u = np.linalg.eigh(a)
    return (u * fn(lam)) @ u.conj().T


def matrix_exp(a) -> np.ndarray:
    """Exponential of a Hermitian matrix by eigendecomposition."""
    return hermitian_function(a, np.exp)


def matrix_log(a) -> np.ndarray:
    """Logarithm of a positive definite Hermitian matrix."""
    a = _check_hermitian(a, "matrix")
    lam, u = np.linalg.eigh(a)
    if lam[0] <= 0.0:
        raise NotPositiveDefiniteError(
            "matrix logarithm needs strictly positive eigenvalues; the "
            "smallest is %.3e" % lam[0])
    return (u * np.log(lam)) @ u.conj().T


def partial_trace(matrix, dims: tuple, site: int) -> np.ndarray:
    """Trace out one factor of a bipartite operator.

    ``dims = (d0, d1)`` are the factor dimensions; ``site`` names the
    factor that is traced out (0 for the first).
    """
    d0, d1 = int(dims[0]), int(dims[1])
    a = np.asarray(matrix, dtype=complex)
    if a.shape != (d0 * d1, d0 * d1):
        raise ArgumentError("operator shape does not match the factor "
                            "dimensions")
    t = a.reshape(d0, d1, d0, d1)
    if site == 0:
        return np.einsum("ijil->jl", t)
    if site == 1:
        return np.einsum("ijkj->ik", t)
    raise ArgumentError("site must be 0 or 1")


@dataclass(frozen=True)
class DensityMatrix:
    """Validated density matrix: Hermitian, unit trace, positive
    semidefinite within tolerance."""

    matrix: np.ndarray

    def __post_init__(self):
        a = _check_hermitian(self.matrix, "density matrix")
        if abs(float(np.trace(a).real) - 1.0) > _HERMITIAN_TOL:
            raise ArgumentError("a density matrix must have unit trace")
        lam = np.linalg.eigvalsh(a)
        if lam[0] < -_PSD_TOL:
            raise NotPositiveDefiniteError(
                "a density matrix cannot have eigenvalue %.3e" % lam[0])
        object.__setattr__(self, "matrix", a)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)

    @classmethod
    def from_interleaved(cls, values, dim: int) -> "DensityMatrix":
        """Build from a row-major flat list of alternating real and
        imaginary parts."""
        flat = np.asarray(values, dtype=float).ravel()
        if flat.size != 2 * dim * dim:
            raise ArgumentError("expected %d interleaved entries for "
                                "dimension %d, got %d"
                                % (2 * dim * dim, dim, flat.size))
        complex_flat = flat[0::2] + 1.0j * flat[1::2]
        return cls(complex_flat.reshape(dim, dim))


def relative_entropy(rho, sigma) -> float:
    """Relative entropy Tr rho (log rho - log sigma) in nats.

    Infinite when the support of ``rho`` leaks outside the support of
    ``sigma``; values below 1e-14 are clamped to zero.
    """
    rho = _check_hermitian(rho, "rho")
    sigma = _check_hermitian(sigma, "sigma")
    if rho.shape != sigma.shape:
        raise ArgumentError("states must share a dimension")
    for name, a in (("rho", rho), ("sigma", sigma)):
        if abs(float(np.trace(a).real) - 1.0) > _HERMITIAN_TOL:
            raise ArgumentError(f"{name} must have unit trace")
    p, up = np.linalg.eigh(rho)
    s, us = np.linalg.eigh(sigma)
    if p[0] < -_PSD_TOL or s[0] < -_PSD_TOL:
        raise NotPositiveDefiniteError("states must be positive "
                                       "semidefinite")
    p = np.clip(p, 0.0, None)
    s = np.clip(s, 0.0, None)
    overlap = np.abs(up.conj().T @ us) ** 2
    weights = p @ overlap
    support_cut = 1e-15
    if np.any((weights > 1e-12) & (s <= support_cut)):
        return float("inf")
    positive_p = p[p > 0.0]
    value = float(positive_p @ np.log(positive_p))
    mask = s > support_cut
    value -= float(weights[mask] @ np.log(s[mask]))
    return 0.0 if value < 1e-14 else value


class QuantumSystem(BregmanSystem):
    """Bregman system of full-rank states on a fixed dimension.

    Natural coordinates are the coefficients on the orthogonal
    Hermitian basis; the potential log Tr exp(sum theta_i X_i) has the
    state's basis expectations as gradient, and the Bregman divergence
    is the relative entropy.
    """

    def __init__(self, dim: int):
        if dim < 2:
            raise ArgumentError("dimension must be at least 2")
        self.matrix_dim = int(dim)
        self.basis = gell_mann_basis(dim)
        super().__init__(
            dim=self.basis.shape[0],
            potential=self._potential,
            gradient=self._gradient,
            hessian=self._hessian,
            name=f"quantum({dim})")

    def _operator(self, theta):
        theta = np.asarray(theta, dtype=float)
        return np.einsum("a,aij->ij", theta, self.basis)

    def state(self, theta) -> np.ndarray:
        """Normalized exponential state of the coordinates."""
        lam, u = np.linalg.eigh(self._operator(theta))
        w = np.exp(lam - lam.max())
        return (u * (w / w.sum())) @ u.conj().T

    def _potential(self, theta):
        lam = np.linalg.eigvalsh(self._operator(theta))
        m = lam.max()
        return float(m + math.log(np.exp(lam - m).sum()))

    def _gradient(self, theta):
        rho = self.state(theta)
        return np.einsum("aij,ji->a", self.basis, rho).real

    def _hessian(self, theta):
        lam, u = np.linalg.eigh(self._operator(theta))
        shifted = lam - lam.max()
        weights = np.exp(shifted)
        z = weights.sum()
        phi = _exp_divided_difference(shifted)
        tilded = u.conj().T @ self.basis @ u
        h = np.einsum("apq,bpq->ab", tilded.conj(),
                      tilded * phi[None, :, :]).real / z
        eta = np.einsum("app,p->a", tilded, weights).real / z
        return h - np.outer(eta, eta)


def _exp_divided_difference(eigs) -> np.ndarray:
    """Matrix of (e^a - e^b)/(a - b) over eigenvalue pairs, with the
    diagonal limit e^a, computed stably through sinh(h)/h."""
    lam = np.asarray(eigs, dtype=float)
    mid = 0.5 * (lam[:, None] + lam[None, :])
    h = 0.5 * (lam[:, None] - lam[None, :])
    small = np.abs(h) < 1e-5
    safe = np.where(small, 1.0, h)
    ratio = np.where(small, 1.0 + h * h / 6.0 + h ** 4 / 120.0,
                     np.sinh(safe) / safe)
    return np.exp(mid) * ratio


def quantum_system(dim: int) -> QuantumSystem:
    """System of full-rank states on the given matrix dimension."""
    return QuantumSystem(dim)


def theta_of_state(system: QuantumSystem, rho) -> np.ndarray:
    """Natural coordinates of a full-rank state: half the basis
    expectations of its logarithm."""
    log_rho = matrix_log(rho)
    return 0.5 * np.einsum("aij,ji->a", system.basis, log_rho).real


@dataclass(frozen=True)
class QrdFeasibility:
    """Distortion reachability for the quantum solver.

    ``delta_b_spectrum`` is the spectrum of the output-side average of
    the distortion observable against the reference marginal; product
    states reach exactly its convex hull.  The full spectrum bounds of
    the observable bracket what any joint state can reach.
    """

    level: float
    delta_b_spectrum: np.ndarray
    min_product: float
    max_product: float
    product_feasible: bool
    equality_achievable_by_product: bool
    spectrum_min: float
    spectrum_max: float


@dataclass
class QrdSolution:
    """Quantum solver output; ``rate`` is the relative entropy between
    the joint state and the product of its marginals, in nats."""

    rate: float
    state: np.ndarray
    output_state: np.ndarray
    tau: np.ndarray
    distortion: float
    constraint_residual: float
    iterations: int
    converged: bool
    mode: str
    trace: EmTrace
    feasibility: QrdFeasibility


def _clamped_newton(value, grad, hess, x0, gradient_tolerance=1e-10,
                    max_iterations=200):
    """Damped Newton with an eigenvalue-clamped Hessian solve.

    The Hessian of a log-partition restriction is positive semidefinite
    but may be nearly singular; eigenvalues are clamped at 1e-12 before
    inverting.  Armijo backtracking with slope 1e-4; iterate blow-up
    past norm 1e8 reports unreachable constraint targets.
    """
    x = np.asarray(x0, dtype=float).copy()
    fx = value(x)
    for _ in range(max_iterations):
        g = grad(x)
        if float(np.max(np.abs(g))) <= gradient_tolerance:
            return x
        h = np.asarray(hess(x), dtype=float)
        s_eig, v_eig = np.linalg.eigh(0.5 * (h + h.T))
        step = -v_eig @ ((v_eig.T @ g) / np.clip(s_eig, 1e-12, None))
        slope = float(g @ step)
        if slope >= 0.0:
            step = -g
            slope = -float(g @ g)
        # allowance for sub-ulp decreases, as in core.damped_newton
        noise = 1e-15 * (1.0 + abs(fx))
        s = 1.0
        while True:
            candidate = x + s * step
            fc = value(candidate)
            if np.isfinite(fc) and fc <= fx + 1e-4 * s * slope + noise:
                break
            s *= 0.5
            if s < 1e-20:
                raise ConvergenceError("line search stalled")
        x = candidate
        fx = fc
        if float(np.linalg.norm(x)) > 1e8:
            raise InfeasibleError("constraint targets are not reachable")
    raise ConvergenceError("Newton did not reach the gradient tolerance")


def _qrd_zero_rate(rho_r, delta, report: QrdFeasibility, level: float,
                   mode: str, d_b: int) -> Optional[QrdSolution]:
    lam, v = np.linalg.eigh(_delta_b(delta, rho_r, d_b))
    tol = 1e-10 * max(1.0, abs(lam[-1]))

    def projector_state(target):
        sel = np.abs(lam - target) <= tol
        vecs = v[:, sel]
        return (vecs @ vecs.conj().T) / int(sel.sum())

    sigma = None
    if mode == "inequality":
        if level >= report.min_product - 1e-12:
            sigma = projector_state(lam[0])
    elif report.min_product - 1e-12 <= level <= report.max_product + 1e-12:
        spread = report.max_product - report.min_product
        if spread <= 1e-12:
            sigma = projector_state(lam[0])
        else:
            mu = float(np.clip((level - report.min_product) / spread,
                               0.0, 1.0))
            sigma = (1.0 - mu) * projector_state(lam[0]) \
                + mu * projector_state(lam[-1])
    if sigma is None:
        return None
    state = np.kron(rho_r, sigma)
    distortion = float(np.trace(state @ delta).real)
    d_r = rho_r.shape[0]
    return QrdSolution(
        rate=0.0, state=state, output_state=sigma, tau=np.zeros(d_r * d_r),
        distortion=distortion,
        constraint_residual=(abs(distortion - level)
                             if mode == "equality" else 0.0),
        iterations=0, converged=True, mode=mode,
        trace=EmTrace(records=[], final_index=0, final_theta=None,
                      converged=True, mode="exact"),
        feasibility=report)


def _delta_b(delta, rho_r, d_b: int) -> np.ndarray:
    d_r = rho_r.shape[0]
    return partial_trace(delta @ np.kron(rho_r, np.eye(d_b)),
                         (d_r, d_b), 0)


def solve_qrd(rho_r, delta, level: float, mode: str = "equality",
              options: Optional[EmOptions] = None) -> QrdSolution:
    """Minimize the relative entropy to a product state over joint
    states with a pinned reference marginal and mean distortion.

    ``rho_r`` is the reference marginal on the first factor (full rank,
    since the iteration works with its logarithm), ``delta`` a
    Hermitian distortion observable on the tensor product (its size
    determines the second factor).  Each m-step solves the constrained
    divergence minimization by a Newton iteration over the constraint
    multipliers; the e-step replaces the iterate by the product of
    ``rho_r`` with its own second marginal.  The rate is the relative
    entropy between the final joint state and that product.
    """
    if mode not in ("equality", "inequality"):
        raise ArgumentError("mode must be 'equality' or 'inequality'")
    rho_r = DensityMatrix(rho_r).matrix
    d_r = rho_r.shape[0]
    delta = _check_hermitian(delta, "delta")
    if delta.shape[0] % d_r != 0:
        raise ArgumentError("the observable dimension must be a multiple "
                            "of the reference dimension")
    d_b = delta.shape[0] // d_r
    if d_b < 2:
        raise ArgumentError("the second factor needs dimension at least 2")
    if d_r * d_b > _MAX_TOTAL_DIM:
        raise ArgumentError("total dimension beyond %d is not supported"
                            % _MAX_TOTAL_DIM)
    level = float(level)
    if options is None:
        options = EmOptions(max_iterations=1000)
    if options.max_iterations < 2:
        raise ArgumentError("max_iterations is the highest iterate index "
                            "and must be at least 2")

    delta_b = _delta_b(delta, rho_r, d_b)
    lam_b = np.linalg.eigvalsh(delta_b)
    lam_full = np.linalg.eigvalsh(delta)
    report = QrdFeasibility(
        level=level, delta_b_spectrum=lam_b,
        min_product=float(lam_b[0]), max_product=float(lam_b[-1]),
        product_feasible=float(lam_b[0]) <= level,
        equality_achievable_by_product=(
            float(lam_b[0]) <= level <= float(lam_b[-1])),
        spectrum_min=float(lam_full[0]), spectrum_max=float(lam_full[-1]))
    if mode == "inequality":
        if level < report.spectrum_min - 1e-12:
            raise InfeasibleError(
                "no state reaches mean distortion %.6g; the observable's "
                "smallest eigenvalue is %.6g" % (level, report.spectrum_min))
    elif not (report.spectrum_min - 1e-12 <= level
              <= report.spectrum_max + 1e-12):
        raise InfeasibleError(
            "mean distortion %.6g is outside the observable's spectral "
            "range [%.6g, %.6g]" % (level, report.spectrum_min,
                                    report.spectrum_max))
    zero = _qrd_zero_rate(rho_r, delta, report, level, mode, d_b)
    if zero is not None:
        return zero

    basis_r = gell_mann_basis(d_r)
    eye_b = np.eye(d_b)
    operators = [np.kron(x, eye_b) for x in basis_r] + [delta]
    operators = np.stack(operators)
    targets = np.array(
        [float(np.trace(x @ rho_r).real) for x in basis_r] + [level])
    n = d_r * d_b
    traceless = operators - (np.trace(operators, axis1=1, axis2=2)
                             / n)[:, None, None] * np.eye(n)
    gram = np.einsum("aij,bij->ab", traceless.conj(), traceless).real
    gram_eigs = np.linalg.eigvalsh(gram)
    if gram_eigs[0] <= 1e-10 * max(gram_eigs[-1], 1.0):
        raise RankError("the distortion observable is affinely dependent "
                        "on the marginal constraints")

    if options.reference_divergence is None:
        options = replace(options, reference_divergence=math.log(d_b))

    rho_e = np.kron(rho_r, eye_b / d_b)
    records: list[EmIterate] = []
    converged = False
    tau = np.zeros(operators.shape[0])
    keep = not options.low_memory
    full_system = QuantumSystem(n) if keep else None
    previous_objective = None
    rho_m = rho_e
    distortion_value = level
    for t in range(2, options.max_iterations + 1):
        log_prior = matrix_log(rho_e)

        def combined(coeffs):
            return log_prior + np.einsum("a,aij->ij", coeffs, operators)

        def psi(coeffs):
            lam = np.linalg.eigvalsh(combined(coeffs))
            m = lam.max()
            return float(m + math.log(np.exp(lam - m).sum())
                         - coeffs @ targets)

        def state_of(coeffs):
            lam, u = np.linalg.eigh(combined(coeffs))
            w = np.exp(lam - lam.max())
            return (u * (w / w.sum())) @ u.conj().T

        def psi_grad(coeffs):
            rho = state_of(coeffs)
            return np.einsum("aij,ji->a", operators, rho).real - targets

        def psi_hess(coeffs):
            lam, u = np.linalg.eigh(combined(coeffs))
            shifted = lam - lam.max()
            weights = np.exp(shifted)
            z = weights.sum()
            phi = _exp_divided_difference(shifted)
            tilded = u.conj().T @ operators @ u
            h = np.einsum("apq,bpq->ab", tilded.conj(),
                          tilded * phi[None, :, :]).real / z
            eta = np.einsum("app,p->a", tilded, weights).real / z
            return h - np.outer(eta, eta)

        tau = _clamped_newton(psi, psi_grad, psi_hess, tau)
        rho_m = state_of(tau)
        pre_e = relative_entropy(rho_m, rho_e)
        rho_b = partial_trace(rho_m, (d_r, d_b), 0)
        rho_e = np.kron(rho_r, rho_b)
        objective = relative_entropy(rho_m, rho_e)
        distortion_value = float(np.trace(rho_m @ delta).real)
        residual = float(np.max(np.abs(psi_grad(tau))))
        bound = (options.reference_divergence / (t - 1)
                 if options.reference_divergence is not None else math.nan)
        record = EmIterate(
            t=t, objective=objective, pre_e_objective=pre_e, bound=bound,
            tau=tau.copy(), constraint_residual=residual,
            selection_value=pre_e,
            theta_m=(theta_of_state(full_system, rho_m) if keep else None))
        records.append(record)
        if options.iteration_hook is not None:
            options.iteration_hook(record)
        if previous_objective is not None and abs(
                previous_objective - objective) \
                < options.objective_tolerance:
            converged = True
            break
        previous_objective = objective

    trace = EmTrace(records=records, final_index=records[-1].t,
                    final_theta=records[-1].theta_m, converged=converged,
                    mode="exact", selection_enabled=keep)
    rho_b = partial_trace(rho_m, (d_r, d_b), 0)
    return QrdSolution(
        rate=records[-1].objective, state=rho_m, output_state=rho_b,
        tau=tau, distortion=distortion_value,
        constraint_residual=abs(distortion_value - level),
        iterations=records[-1].t, converged=converged, mode=mode,
        trace=trace, feasibility=report)
