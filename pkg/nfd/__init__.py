"""nearfield-distortion: where PA distortion goes in near-field multi-user arrays."""

__version__ = "0.1.0"
__author__ = "nearfield-distortion Team"
__description__ = "Simulator and closed-form predictor of nonlinear distortion focusing for ELAAs and active RIS"

from .config import Scenario
from .exceptions import (ConfigurationError, ConvergenceError, DomainError, EnsembleError,
                         IllConditionedError, NfdError, NumericalError, ValidationMismatchError)
from .array import ArrayGeometry, SphericalPoint, UserChannelParams
from .tx import OfdmConfig, PaModel, RisConfig
from .spatial import FocalPoint, SpectralField

__all__ = [
    "Scenario",
    "NfdError",
    "ConfigurationError",
    "NumericalError",
    "DomainError",
    "IllConditionedError",
    "ConvergenceError",
    "EnsembleError",
    "ValidationMismatchError",
    "ArrayGeometry",
    "SphericalPoint",
    "UserChannelParams",
    "OfdmConfig",
    "PaModel",
    "RisConfig",
    "FocalPoint",
    "SpectralField",
]
