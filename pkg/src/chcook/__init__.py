"""Solvers and error analysis for the linear stochastic Cahn-Hilliard-Cook equation in 1-D."""

from .spectral import (InvalidParameterError, ModelParams, NonInvertibleOperatorError,
                       SpectralField, validate_params)

__all__ = ["InvalidParameterError", "ModelParams", "NonInvertibleOperatorError",
           "SpectralField", "validate_params"]
__version__ = "0.1.0"
