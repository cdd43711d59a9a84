"""Closed-form least-squares and maximum-likelihood drift estimators."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegeneratePathError, InvalidArgumentError
from .kernel import CoefficientTable
from .model import ObservationPath, TSArrays, _values, ts_arrays


@dataclass(frozen=True)
class EstimateResult:
    theta_ls: float
    theta_ml: float
    a_star: float
    bracket: float
    kappa: float
    n: int
    m: int
    alpha: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True, eq=False)
class EstimateSums:
    """Per-path sums over j = 1..n-1 (arrays when several paths are given).

    ``cross = sum F_j^-2 (dX_{j+1} - T_j)(X_j - S_{j-1})``,
    ``a_star = sum F_j^-2 (X_j - S_{j-1})^2``,
    ``linear = sum F_j^-1 (X_j - S_{j-1})``.
    """

    cross: np.ndarray
    a_star: np.ndarray
    linear: np.ndarray
    ts: TSArrays


def estimate_sums(table: CoefficientTable, X: np.ndarray) -> EstimateSums:
    X = np.asarray(X, dtype=float)
    if X.shape[0] < 3:
        raise InvalidArgumentError("need n >= 2 observations")
    ts = ts_arrays(table, X)
    Fj = table.F[1:].reshape((-1,) + (1,) * (X.ndim - 1))
    resid = X[2:] - X[1:-1] - ts.T
    z = X[1:-1] - ts.S
    zf = z / Fj
    return EstimateSums(
        cross=np.sum(resid / Fj * zf, axis=0),
        a_star=np.sum(zf * zf, axis=0),
        linear=np.sum(zf, axis=0),
        ts=ts,
    )


def degenerate_mask(a_star, n: int):
    return np.asarray(a_star) < 1e-12 * n


def thetas_from_sums(sums: EstimateSums, m: int, kappa: float):
    """``(theta_ls, theta_ml)``; entries with a vanishing denominator come back as NaN."""
    a = np.asarray(sums.a_star, dtype=float)
    n = sums.ts.u.shape[0]
    bad = degenerate_mask(a, n)
    safe = np.where(bad, 1.0, a)
    ls = np.where(bad, np.nan, m * sums.cross / safe)
    ml = np.where(bad, np.nan, m * (sums.cross + (kappa - 1.0) * sums.linear) / safe)
    return ls, ml


def _single(x, table: CoefficientTable) -> tuple[EstimateSums, float, float]:
    X = _values(x)
    if X.ndim != 1:
        raise InvalidArgumentError("expected a single path")
    sums = estimate_sums(table, X[:, None])
    if degenerate_mask(sums.a_star[0], table.n):
        raise DegeneratePathError(
            "denominator sum of F^-2 (X_j - S_{j-1})^2 vanishes; the path carries no drift information"
        )
    ls, ml = thetas_from_sums(sums, table.m, table.kappa)
    return sums, float(ls[0]), float(ml[0])


def lse(x: ObservationPath | np.ndarray, table: CoefficientTable) -> float:
    return _single(x, table)[1]


def mle(x: ObservationPath | np.ndarray, table: CoefficientTable) -> float:
    """Maximum-likelihood estimate; differs from the LSE by the noise offset term."""
    return _single(x, table)[2]


def estimate(x: ObservationPath | np.ndarray, table: CoefficientTable) -> EstimateResult:
    sums, ls, ml = _single(x, table)
    a_star = float(sums.a_star[0])
    k = table.kappa
    return EstimateResult(
        theta_ls=ls,
        theta_ml=ml,
        a_star=a_star,
        bracket=a_star * k * (1.0 - k),
        kappa=k,
        n=table.n,
        m=table.m,
        alpha=math.log(table.n) / math.log(table.m),
    )


def conditional_variance_formula(result: EstimateResult) -> float:
    """``m^2 kappa (1 - kappa) / A*``, the conditional variance of the LSE error."""
    if result.a_star <= 0:
        raise DegeneratePathError("A* must be positive")
    k = result.kappa
    return result.m**2 * k * (1.0 - k) / result.a_star


def normalization(m: int, alpha: float, H: float) -> float:
    """Histogram scaling ``c1``: sqrt(n) below H = 3/4, sqrt(n / ln n) at 3/4, n^(1-H) above."""
    if not 0.5 < H < 1.0:
        raise InvalidArgumentError(f"H must lie in (0.5, 1), got {H}")
    n = float(m) ** alpha
    if abs(H - 0.75) <= 1e-12:
        return math.sqrt(n / math.log(n))
    if H < 0.75:
        return math.sqrt(n)
    return n ** (1.0 - H)
