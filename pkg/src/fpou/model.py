"""Discrete Ornstein-Uhlenbeck recursion and the observation-side functionals.

Arrays holding a path are indexed by time: ``X[0] = 0, X[1], ..., X[n]``.
Every function also accepts a 2-D array whose columns are independent paths.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import InvalidArgumentError, SingularMatrixError
from .kernel import CoefficientTable
from .noise import NoisePath


@dataclass(frozen=True, eq=False)
class ObservationPath:
    values: np.ndarray
    m: int
    n: int
    provenance: dict = field(default_factory=lambda: {"kind": "ingested"})
    notes: tuple = ()

    def __post_init__(self):
        if len(self.values) != self.n + 1:
            raise InvalidArgumentError(f"path length {len(self.values)} != n + 1 = {self.n + 1}")

    @classmethod
    def ingest(cls, values, m: int) -> "ObservationPath":
        """Wrap external observations, shifting them so the path starts at 0."""
        x = np.asarray(values, dtype=float).copy()
        if x.ndim != 1 or len(x) < 2:
            raise InvalidArgumentError("need a 1-D path with at least two observations")
        notes = ()
        if x[0] != 0.0:
            msg = f"first observation {float(x[0])!r} subtracted so that X_0 = 0"
            warnings.warn(msg, stacklevel=2)
            x -= x[0]
            notes = (msg,)
        x.setflags(write=False)
        return cls(x, int(m), len(x) - 1, {"kind": "ingested"}, notes)


@dataclass(frozen=True, eq=False)
class TSArrays:
    """``T[j-1] = T_j`` and ``S[j-1] = S_{j-1}`` for j = 1..n-1.

    ``u`` and ``v`` are the triangular solves ``b~ u = (x_1..x_n)`` and
    ``b~ v = (y_1..y_n)`` with ``y_k = x_1 + ... + x_{k-1}``.
    """

    T: np.ndarray
    S: np.ndarray
    u: np.ndarray
    v: np.ndarray


def _values(x) -> np.ndarray:
    return np.asarray(x.values if isinstance(x, ObservationPath) else x, dtype=float)


def _eta(noise) -> np.ndarray:
    return np.asarray(noise.values if isinstance(noise, NoisePath) else noise, dtype=float)


def _check(table: CoefficientTable, n_rows: int, what: str):
    if n_rows != table.n:
        raise InvalidArgumentError(f"{what} has {n_rows} steps but the table has n = {table.n}")


def simulate_paths(table: CoefficientTable, theta: float, eta: np.ndarray) -> np.ndarray:
    """Observation paths ``X`` (shape ``(n+1,) + eta.shape[1:]``) for given noise.

    The recursion ``X_{j+1} = (1 + theta/m) X_j + N_{j+1} - N_j`` is run in
    its summed form ``X_k = N_k + (theta/m) (X_0 + ... + X_{k-1})``.
    """
    eta = np.asarray(eta, dtype=float)
    _check(table, eta.shape[0], "noise")
    drift = theta / table.m
    N = table.b_scaled @ eta
    X = np.zeros((table.n + 1,) + eta.shape[1:])
    running = np.zeros(eta.shape[1:])
    for k in range(1, table.n + 1):
        running = running + X[k - 1]
        X[k] = N[k - 1] + drift * running
    return X


def simulate_ou(table: CoefficientTable, theta: float, noise: NoisePath) -> ObservationPath:
    eta = _eta(noise)
    if isinstance(noise, NoisePath) and (noise.spec.n != table.n or noise.spec.lam != table.lam):
        raise InvalidArgumentError("noise spec (n, lambda) does not match the table")
    X = simulate_paths(table, theta, eta[:, None])[:, 0]
    X.setflags(write=False)
    seed = noise.stream_seed if isinstance(noise, NoisePath) else None
    return ObservationPath(X, table.m, table.n, {"kind": "simulated", "theta": theta, "seed": seed})


def _prefix(xs: np.ndarray) -> np.ndarray:
    """``y_k = x_1 + ... + x_{k-1}`` aligned with ``xs = (x_1..x_n)``."""
    y = np.zeros_like(xs)
    np.cumsum(xs[:-1], axis=0, out=y[1:])
    return y


def _solve(b: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    if np.any(np.diagonal(b) == 0):
        raise SingularMatrixError("coefficient table has a zero diagonal entry")
    return solve_triangular(b, rhs, lower=True, check_finite=False)


def ts_arrays(table: CoefficientTable, X: np.ndarray) -> TSArrays:
    X = np.asarray(X, dtype=float)
    _check(table, X.shape[0] - 1, "path")
    b = table.b_scaled
    F = table.F.reshape((-1,) + (1,) * (X.ndim - 1))
    xs = X[1:]
    y = _prefix(xs)
    u = _solve(b, xs)
    v = _solve(b, y)
    # sum_{i<=j} b~_{j+1,i} w_i, i.e. row j+1 of b~ w without its diagonal term
    lead_u = b @ u - F * u
    lead_v = b @ v - F * v
    T = lead_u[1:] - xs[:-1]
    S = lead_v[1:] - y[:-1]
    return TSArrays(T, S, u, v)


def compute_TS(table: CoefficientTable, x) -> TSArrays:
    return ts_arrays(table, _values(x))


def reconstruct_noise(table: CoefficientTable, x, theta: float) -> np.ndarray:
    """Recover ``eta`` from observations given the drift ``theta``."""
    X = _values(x)
    _check(table, X.shape[0] - 1, "path")
    xs = X[1:]
    return _solve(table.b_scaled, xs - (theta / table.m) * _prefix(xs))
