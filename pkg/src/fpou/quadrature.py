"""Quadrature rules on [0, 1] and an adaptive oracle for endpoint singularities.

All rules integrate against a weight ``x**beta`` on the unit interval, so a
rule with ``beta = 0`` is plain Gauss-Legendre.  The adaptive integrator is
used as an independent check on the fixed rules and on the kernel tables.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.special import roots_jacobi

from .errors import InvalidArgumentError, NumericFailureError

__all__ = [
    "QuadratureRule",
    "gauss_legendre",
    "gauss_jacobi",
    "adaptive_singular",
]


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Nodes and weights approximating ``int_0^1 x**beta f(x) dx``."""

    nodes: np.ndarray
    weights: np.ndarray
    beta: float
    order: int

    def integrate(self, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """Apply the rule; ``f`` maps the node vector to ``(..., order)`` values."""
        return np.asarray(f(self.nodes)) @ self.weights

    def on_interval(self, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
        """Nodes and weights mapped affinely onto ``[a, b]``.

        The weight function becomes ``((x - a) / (b - a))**beta``.
        """
        h = b - a
        return a + h * self.nodes, h * self.weights


@lru_cache(maxsize=64)
def _jacobi_rule(order: int, beta: float) -> QuadratureRule:
    # roots_jacobi(n, alpha, beta) targets (1-y)^alpha (1+y)^beta on [-1, 1];
    # x = (1+y)/2 turns (1+y)^beta dy into 2^(beta+1) x^beta dx.
    y, w = roots_jacobi(order, 0.0, beta)
    nodes = 0.5 * (1.0 + y)
    weights = w / 2.0 ** (beta + 1.0)
    order_idx = np.argsort(nodes)
    nodes = np.ascontiguousarray(nodes[order_idx])
    weights = np.ascontiguousarray(weights[order_idx])
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(nodes=nodes, weights=weights, beta=float(beta), order=order)


def gauss_jacobi(order: int, beta: float) -> QuadratureRule:
    """Gauss rule for the weight ``x**beta`` on [0, 1].

    Exact for polynomials of degree ``2*order - 1``.  ``beta`` must exceed -1
    so the weight is integrable.
    """
    if int(order) != order or order < 1:
        raise InvalidArgumentError(f"quadrature order must be a positive integer, got {order!r}")
    beta = float(beta)
    if not beta > -1.0:
        raise InvalidArgumentError(f"weight exponent must exceed -1, got {beta}")
    return _jacobi_rule(int(order), beta)


def gauss_legendre(order: int) -> QuadratureRule:
    return gauss_jacobi(order, 0.0)


_PANEL_RULE = 15


def _panel(f, lo, hi):
    rule = gauss_legendre(_PANEL_RULE)
    x, w = rule.on_interval(lo, hi)
    return np.asarray(f(x)) @ w


def _geometric(f, a, b, toward, tol, max_levels, offset):
    """Geometric panels shrinking toward one endpoint, with ratio tail.

    Panel contributions of an algebraic singularity ``x**p`` decay by the
    constant ratio ``2**-(p+1)``; the remainder beyond the last panel is
    summed as that geometric series.  Without it exponents near -1 would
    need far more than 60 halvings.
    """
    length = b - a
    partial = 0.0
    prev_c = None
    prev_est = None
    prev_err = np.inf
    est = err = None
    for level in range(max_levels):
        far = length / 2.0**level
        near = far / 2.0
        if offset:
            c = _panel(f, near, far)
        elif toward == "left":
            if a + near == a:
                break
            c = _panel(f, a + near, a + far)
        else:
            if b - near == b:
                break
            c = _panel(f, b - far, b - near)
        partial = partial + c
        tail = 0.0
        if prev_c is not None:
            with np.errstate(divide="ignore", invalid="ignore"):
                r = np.where(prev_c != 0, c / prev_c, 0.0)
                ok = (r > 0) & (r < 1)
                tail = np.where(ok, c * r / np.where(ok, 1.0 - r, 1.0), 0.0)
        est = partial + tail
        if prev_est is not None:
            err = float(np.max(np.abs(est - prev_est)))
            if err < tol / 10.0 and prev_err < tol:
                return est, err
            prev_err = err
        prev_est = est
        prev_c = c
    if err is not None and err < tol:
        return est, err
    raise NumericFailureError(
        f"adaptive integration did not converge in {max_levels} levels",
        estimate=est,
        error=err,
    )


def _bisect(f, a, b, tol, max_panels):
    pending = [(a, b, _panel(f, a, b))]
    total = 0.0
    err_total = 0.0
    count = 0
    while pending:
        lo, hi, whole = pending.pop()
        mid = 0.5 * (lo + hi)
        left = _panel(f, lo, mid)
        right = _panel(f, mid, hi)
        diff = float(np.max(np.abs(left + right - whole)))
        count += 1
        if diff <= tol * (hi - lo) / (b - a) or count > max_panels:
            total = total + left + right
            err_total += diff
        else:
            pending.append((lo, mid, left))
            pending.append((mid, hi, right))
    if count > max_panels:
        raise NumericFailureError(
            "adaptive bisection exceeded panel budget", estimate=total, error=err_total
        )
    return total, err_total


def adaptive_singular(
    f: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    singular_end: str = "none",
    tol: float = 1e-12,
    *,
    max_levels: int = 60,
    offset: bool = False,
    return_error: bool = False,
):
    """Integrate ``f`` over ``[a, b]`` allowing one algebraic endpoint singularity.

    ``f`` receives a 1-D array of abscissae and may return an array whose last
    axis runs over them; the integral is then taken elementwise over the
    leading axes (convergence is judged on the worst element).

    ``singular_end`` is ``"left"``, ``"right"`` or ``"none"``.  With
    ``offset=True`` the integrand is called with the distance to the singular
    end instead of the abscissa, which keeps full relative precision when the
    singularity sits away from zero.
    """
    if not a < b:
        raise InvalidArgumentError(f"need a < b, got [{a}, {b}]")
    if tol <= 0:
        raise InvalidArgumentError("tol must be positive")
    if singular_end in ("left", "right"):
        value, err = _geometric(f, float(a), float(b), singular_end, tol, max_levels, offset)
    elif singular_end == "none":
        value, err = _bisect(f, float(a), float(b), tol, max_panels=4 * 2**12)
    else:
        raise InvalidArgumentError(f"unknown singular_end {singular_end!r}")
    if np.ndim(value) == 0:
        value = float(value)
    return (value, err) if return_error else value
