"""One-dimensional convex minimization with certified bisection.

The midpoint-halving scheme here carries explicit after-k-steps
guarantees on both the value gap and the location error, which the
iteration-budget rules in the rate-distortion solvers rely on.  A
fixed-step gradient method with the matching O(1/k) value guarantee is
included for callers that need a derivative-free fallback in several
variables.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ArgumentError, BracketError, UnboundedError

__all__ = [
    "BisectionResult",
    "bisect",
    "bisect_to_tolerance",
    "expand_bracket",
    "gradient_descent",
]


@dataclass(frozen=True)
class BisectionResult:
    """Bracket state after ``iterations`` halvings.

    ``x`` is the midpoint of the final bracket ``[a, b]``;
    ``derivative_at_b`` certifies the sign condition at the right end.
    """

    a: float
    b: float
    x: float
    iterations: int
    derivative_at_b: float


def bisect(fprime, a: float, b: float, k: int) -> BisectionResult:
    """Run exactly ``k`` midpoint halvings on the derivative sign.

    ``fprime`` must be the derivative of a convex function with
    ``fprime(a) <= 0 <= fprime(b)``; otherwise BracketError is raised.
    A zero derivative at the midpoint counts as "not positive", so the
    left endpoint moves.  The bracket width is divided by two on every
    step, exactly in binary arithmetic whenever the endpoints are
    dyadic.
    """
    a = float(a)
    b = float(b)
    if not k >= 0:
        raise ArgumentError("iteration count must be non-negative")
    if fprime(a) > 0.0:
        raise BracketError("derivative at the left endpoint is positive")
    if fprime(b) < 0.0:
        raise BracketError("derivative at the right endpoint is negative")
    for _ in range(k):
        x = 0.5 * (a + b)
        if fprime(x) > 0.0:
            b = x
        else:
            a = x
    x = 0.5 * (a + b)
    return BisectionResult(a=a, b=b, x=x, iterations=k,
                           derivative_at_b=fprime(b))


def bisect_to_tolerance(fprime, a: float, b: float,
                        value_tolerance: float = 1e-12,
                        max_iterations: int = 200) -> BisectionResult:
    """Halve ``[a, b]`` until ``|fprime(midpoint)| <= value_tolerance``.

    Same contract as :func:`bisect` but with a derivative-magnitude
    stopping rule; used by solvers that need the root rather than a
    fixed halving budget.  The returned ``x`` is the last midpoint.
    """
    a = float(a)
    b = float(b)
    if fprime(a) > 0.0:
        raise BracketError("derivative at the left endpoint is positive")
    if fprime(b) < 0.0:
        raise BracketError("derivative at the right endpoint is negative")
    x = 0.5 * (a + b)
    iterations = 0
    for _ in range(max_iterations):
        x = 0.5 * (a + b)
        g = fprime(x)
        iterations += 1
        if abs(g) <= value_tolerance:
            break
        if g > 0.0:
            b = x
        else:
            a = x
    return BisectionResult(a=a, b=b, x=x, iterations=iterations,
                           derivative_at_b=fprime(b))


def expand_bracket(fprime, tau0: float, step0: float,
                   max_doublings: int = 64) -> tuple[float, float]:
    """Grow a sign-changing bracket geometrically from ``tau0``.

    ``fprime`` must be non-decreasing (derivative of a convex
    function).  Steps ``step0, 2*step0, 4*step0, ...`` are taken away
    from ``tau0`` in the direction opposite to the sign of
    ``fprime(tau0)`` until the sign flips; at most ``max_doublings``
    trial points are evaluated before UnboundedError.  When
    ``fprime(tau0)`` is exactly zero the degenerate bracket
    ``(tau0, tau0)`` is returned.
    """
    tau0 = float(tau0)
    if not step0 > 0.0:
        raise ArgumentError("step0 must be positive")
    g0 = fprime(tau0)
    if g0 == 0.0:
        return (tau0, tau0)
    step = float(step0)
    if g0 < 0.0:
        for _ in range(max_doublings):
            b = tau0 + step
            if fprime(b) >= 0.0:
                return (tau0, b)
            step *= 2.0
    else:
        for _ in range(max_doublings):
            a = tau0 - step
            if fprime(a) <= 0.0:
                return (a, tau0)
            step *= 2.0
    raise UnboundedError(
        "no derivative sign change within %d doublings of %g"
        % (max_doublings, step0))


def gradient_descent(f: Callable, grad: Callable, L: float, x0, k: int):
    """Fixed-step descent ``x <- x - grad(x)/L`` for ``k`` steps.

    For a convex ``f`` with ``L``-Lipschitz gradient the final iterate
    satisfies ``f(x_k) - f(x*) <= L*|x0 - x*|^2 / (2k)``.  ``f`` is part
    of the signature for call-site symmetry with the certified methods;
    the update itself only consults ``grad``.  Scalar input yields a
    float, array input an array.
    """
    if not L > 0.0:
        raise ArgumentError("L must be positive")
    if not k >= 0:
        raise ArgumentError("iteration count must be non-negative")
    x = np.asarray(x0, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x).copy()
    for _ in range(k):
        x = x - np.atleast_1d(np.asarray(grad(x[0] if scalar else x),
                                         dtype=float)) / L
    return float(x[0]) if scalar else x
