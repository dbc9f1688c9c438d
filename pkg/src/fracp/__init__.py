"""Radial solver and verifier for a singular fractional p-Laplacian model.

The package computes positive radial solutions of

    (-Delta_p)^s u = a(x) (u^{-gamma} + kappa u^r)   on R^N,
    u > 0,  u(x) -> 0 as |x| -> infinity,

by the constructive route: a shifted regularization removes the
singularity, a monotone continuation drives the shift to zero, and the
full reaction is restored over the singular limit.  Alongside the
solver it ships the verification toolbox: kernel constants with a
closed-form p = 2 oracle, residual checks against exact power profiles,
decay-envelope fits, a comparison check, and a Harnack-quotient probe.
"""

from .errors import (
    ConfigError,
    ConvergenceError,
    DomainError,
    FracpError,
    UsageError,
)
from .params import ProblemParams

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ConvergenceError",
    "DomainError",
    "FracpError",
    "UsageError",
    "ProblemParams",
    "__version__",
]
