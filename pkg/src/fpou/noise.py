"""Two-point noise, the fractional random walk and the Bernoulli transform."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import CorruptedInputError, InvalidArgumentError

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One SplitMix64 step: advance by the golden gamma, then avalanche."""
    z = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def stream_seed(master_seed: int, stream_index: int) -> int:
    """64-bit seed for replication ``stream_index`` of a run seeded with ``master_seed``."""
    return splitmix64(splitmix64(master_seed & _MASK64) ^ (stream_index & _MASK64))


def lambda_for_mode(mode: str, m: int, n: int, lam: float | None = None) -> float:
    """Poisson intensity for a lambda mode.

    ``explicit`` uses ``lam``; ``fbm_symmetric`` picks ``n ln 2`` so the noise
    parameter is exactly 1/2; ``fbm_literal`` takes ``m ln 2`` at face value.
    """
    if mode == "explicit":
        if lam is None or not lam > 0:
            raise InvalidArgumentError(f"explicit mode needs lambda > 0, got {lam}")
        return float(lam)
    if mode == "fbm_symmetric":
        return n * math.log(2.0)
    if mode == "fbm_literal":
        return m * math.log(2.0)
    raise InvalidArgumentError(f"unknown lambda mode {mode!r}")


@dataclass(frozen=True)
class NoiseSpec:
    n: int
    lam: float
    kappa: float = field(init=False)

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise InvalidArgumentError(f"n must be a positive integer, got {self.n}")
        if not self.lam > 0:
            raise InvalidArgumentError(f"lambda must be positive, got {self.lam}")
        object.__setattr__(self, "kappa", math.exp(-self.lam / self.n))

    @property
    def variance(self) -> float:
        return self.kappa * (1.0 - self.kappa)


@dataclass(frozen=True, eq=False)
class NoisePath:
    values: np.ndarray
    spec: NoiseSpec
    stream_seed: int | None = None


def draw_eta(kappa: float, size, seed: int) -> np.ndarray:
    """Raw draws: ``kappa - 1`` with probability ``kappa``, else ``kappa``."""
    u = np.random.Generator(np.random.PCG64(seed)).random(size)
    return np.where(u < kappa, kappa - 1.0, kappa)


def sample_eta(spec: NoiseSpec, stream_seed: int) -> NoisePath:
    values = draw_eta(spec.kappa, spec.n, stream_seed)
    values.setflags(write=False)
    return NoisePath(values, spec, stream_seed)


def fractional_path(table, noise: NoisePath) -> np.ndarray:
    """``N_0 = 0`` and ``N_k = sum_{i<=k} b~_{k,i} eta_i`` for k = 1..n."""
    eta = np.asarray(noise.values if isinstance(noise, NoisePath) else noise, dtype=float)
    if eta.shape[0] != table.n:
        raise InvalidArgumentError(f"noise length {eta.shape[0]} does not match table n = {table.n}")
    if isinstance(noise, NoisePath):
        if noise.spec.n != table.n or noise.spec.lam != table.lam:
            raise InvalidArgumentError("noise spec (n, lambda) does not match the table")
    N = np.zeros((table.n + 1,) + eta.shape[1:])
    N[1:] = table.b_scaled @ eta
    return N


def to_bernoulli(noise: NoisePath) -> np.ndarray:
    """Map ``kappa - 1 -> 0`` and ``kappa -> 1``."""
    k = noise.spec.kappa
    eta = np.asarray(noise.values)
    low = eta == k - 1.0
    high = eta == k
    if not np.all(low | high):
        bad = int(np.argmax(~(low | high)))
        raise CorruptedInputError(f"eta[{bad}] = {eta[bad]!r} is neither kappa-1 nor kappa")
    return high.astype(np.int8)


def binomial_poisson_tv(n: int, lam: float) -> float:
    """Total variation between Binomial(n, 1 - e^{-lam/n}) and Poisson(lam)."""
    if n < 1 or not lam > 0:
        raise InvalidArgumentError("need n >= 1 and lambda > 0")
    p = -math.expm1(-lam / n)
    # past kmax both upper tails are below 1e-15
    kmax = int(max(stats.poisson.isf(1e-16, lam), min(n, stats.binom.isf(1e-16, n, p)))) + 1
    k = np.arange(kmax + 1)
    diff = np.abs(stats.binom.pmf(k, n, p) - stats.poisson.pmf(k, lam))
    tail = abs(stats.binom.sf(kmax, n, p) - stats.poisson.sf(kmax, lam))
    return 0.5 * (float(diff.sum()) + tail)
