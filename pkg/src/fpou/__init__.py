"""Discrete Ornstein-Uhlenbeck model driven by a fractional Poisson random walk.

Builds the singular-kernel coefficient tables, simulates noise and
observation paths, computes closed-form least-squares and maximum-likelihood
drift estimates, and runs the Monte Carlo and invariant suites around them.
"""

from .errors import (
    CorruptedInputError,
    DegeneratePathError,
    FormatError,
    FpouError,
    InvalidArgumentError,
    NumericFailureError,
    ResourceLimitError,
    SingularMatrixError,
)
from .estimators import EstimateResult, conditional_variance_formula, estimate, lse, mle, normalization
from .kernel import CoefficientTable, KernelParams, QuadMeta, build_table, coeff_entry, kernel_eval
from .model import ObservationPath, TSArrays, compute_TS, reconstruct_noise, simulate_ou
from .noise import NoisePath, NoiseSpec, binomial_poisson_tv, fractional_path, sample_eta, to_bernoulli

__version__ = "0.1.0"
