"""Spatial view of the distortion: radiation scans and focal-point prediction."""

from .radiation import SpectralField, find_peaks, scan, spectral_density
from .focal import FocalPoint, predict, ris_focal_points, unique_points

__all__ = [
    "SpectralField",
    "find_peaks",
    "scan",
    "spectral_density",
    "FocalPoint",
    "predict",
    "ris_focal_points",
    "unique_points",
]
