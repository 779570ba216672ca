"""Bayesian joint latent class models for longitudinal and survival data
with time-varying class membership and covariance regression on the random
effects."""

from .data import (CovarianceDesign, Dataset, LatentState, ParameterSet,
                   ValidationError, validate)
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["CovarianceDesign", "Dataset", "LatentState", "ParameterSet",
           "ValidationError", "validate", "BACKEND", "__version__"]
