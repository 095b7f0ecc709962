"""Type definitions for nearfield-distortion."""

from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, Tuple, Union

import numpy as np
import numpy.typing as npt


# Basic types
PathLike = Union[str, Path]
JsonDict = Dict[str, Any]
ComplexArray = npt.NDArray[np.complex128]
RealArray = npt.NDArray[np.float64]
IndexTuple = Tuple[int, ...]


class ResponseMode(str, Enum):
    """How the element-to-point phase is evaluated."""
    EXACT = "exact"
    FRESNEL = "fresnel"


class PrecoderKind(str, Enum):
    """Linear precoders."""
    MRT = "mrt"
    ZF = "zf"


class SymbolKind(str, Enum):
    """Data symbol distributions."""
    GAUSSIAN = "gaussian"
    QPSK = "qpsk"


class ArrayMode(str, Enum):
    """Transmit architecture."""
    ELAA = "elaa"
    RIS = "ris"


class FocalClass(str, Enum):
    """Families of distortion focal points."""
    P1 = "P1"
    P2 = "P2"
    P3 = "P3"
    HIGHER = "higher-order"


class Component(str, Enum):
    """Spectral components of the amplified signal."""
    TOTAL = "total"
    LINEAR = "linear"
    DISTORTION = "distortion"


class ScanAxis(str, Enum):
    """Coordinates a radiation scan can sweep."""
    AZIMUTH = "azimuth"
    ELEVATION = "elevation"
    RANGE = "range"
    SUBCARRIER = "subcarrier"


class SpectralEstimator(str, Enum):
    """Ways of estimating per-subcarrier spectral matrices."""
    PERIODOGRAM = "periodogram"
    COVARIANCE = "covariance"


class SchedulePolicy(str, Enum):
    """Frequency scheduling policies."""
    AWARE = "aware"
    AWARE_LITE = "aware-lite"
    UNAWARE = "unaware"


class Experiment(str, Enum):
    """Batch experiments the runner knows."""
    PREDICT = "predict"
    RADIATE = "radiate"
    RATES = "rates"
    SCHEDULE = "schedule"
    CALIBRATE = "calibrate"
    VALIDATE = "validate"


# Callback types
ProgressCallback = Callable[[int, int], None]
