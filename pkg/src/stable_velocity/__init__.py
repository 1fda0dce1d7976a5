"""Variance-reduced flow matching: interpolant schedules, an exact Gaussian
mixture oracle, multi-reference training targets, a class-conditional memory
bank, variance-aware loss weighting, large-step samplers and a small numpy
velocity model."""

from . import bank, gmm, io, nn, profiler, schedules, solvers, targets, training, varepa
from .errors import StableVelocityError
from .gmm import GmmSpec
from .schedules import Schedule
from .solvers import SolverPlan

__version__ = "0.1.0"

__all__ = [
    "GmmSpec",
    "Schedule",
    "SolverPlan",
    "StableVelocityError",
    "bank",
    "gmm",
    "io",
    "nn",
    "profiler",
    "schedules",
    "solvers",
    "targets",
    "training",
    "varepa",
]
