"""Deterministic adaptive Gauss-Legendre quadrature.

Composite rule with 64 nodes per panel and recursive panel bisection to
an absolute tolerance. Integrands are vector-valued so that a family of
integrals sharing an expensive kernel (e.g. several posterior moments)
is refined together; the error estimate is the max-norm discrepancy
between a panel and its two halves.

Panels never evaluate endpoints, so integrable endpoint singularities
and half-open supports are handled by the recursion.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import QuadratureError

_NODES, _WEIGHTS = np.polynomial.legendre.leggauss(64)

DEFAULT_ABS_TOL = 1e-8
MAX_PANELS = 20_000


def _panel(f: Callable[[np.ndarray], np.ndarray], lo: float, hi: float) -> np.ndarray:
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    vals = np.asarray(f(mid + half * _NODES))
    return half * (vals @ _WEIGHTS)


def integrate(
    f: Callable[[np.ndarray], np.ndarray],
    lo: float,
    hi: float,
    abs_tol: float = DEFAULT_ABS_TOL,
    max_panels: int = MAX_PANELS,
) -> np.ndarray:
    """Integrate a vector-valued integrand over [lo, hi].

    Args:
        f: maps an array of abscissae (n,) to values of shape (..., n).
        lo, hi: integration bounds, lo < hi.
        abs_tol: absolute tolerance on each component of the result.
        max_panels: hard cap on panel evaluations (budget guard).

    Returns:
        Array of component integrals (0-d if the integrand is scalar).

    Raises:
        QuadratureError: tolerance not reached within the panel budget.
    """
    if not np.isfinite(lo) or not np.isfinite(hi) or not lo < hi:
        raise QuadratureError(f"invalid bounds ({lo}, {hi})")
    width = hi - lo
    budget = [max_panels]

    def recurse(a: float, b: float, whole: np.ndarray, tol: float) -> np.ndarray:
        budget[0] -= 2
        if budget[0] <= 0:
            raise QuadratureError(
                f"exceeded panel budget of {max_panels} before reaching abs_tol={abs_tol}"
            )
        mid = 0.5 * (a + b)
        left = _panel(f, a, mid)
        right = _panel(f, mid, b)
        if not (np.all(np.isfinite(left)) and np.all(np.isfinite(right))):
            raise QuadratureError(f"non-finite integrand on [{a}, {b}]")
        err = np.max(np.abs(left + right - whole))
        if err <= tol or (b - a) < 1e-14 * width:
            return left + right
        return recurse(a, mid, left, tol / 2) + recurse(mid, b, right, tol / 2)

    whole = _panel(f, lo, hi)
    if not np.all(np.isfinite(whole)):
        raise QuadratureError(f"non-finite integrand on [{lo}, {hi}]")
    return recurse(lo, hi, whole, abs_tol)


def integrate_piecewise(
    f: Callable[[np.ndarray], np.ndarray],
    breakpoints: list[float],
    abs_tol: float = DEFAULT_ABS_TOL,
    max_panels: int = MAX_PANELS,
) -> np.ndarray:
    """Integrate over consecutive [b_i, b_{i+1}] pieces and sum.

    Used when the integrand is only piecewise smooth (e.g. a piecewise
    prior density): each piece is refined independently.
    """
    if len(breakpoints) < 2:
        raise QuadratureError("need at least two breakpoints")
    pieces = len(breakpoints) - 1
    total = None
    for a, b in zip(breakpoints[:-1], breakpoints[1:]):
        part = integrate(f, a, b, abs_tol=abs_tol / pieces, max_panels=max_panels)
        total = part if total is None else total + part
    return total
