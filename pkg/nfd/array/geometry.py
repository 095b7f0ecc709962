"""Uniform planar array layout and field-region boundaries."""

import logging
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from ..exceptions import DomainError
from ..types import RealArray

log = logging.getLogger(__name__)

SPEED_OF_LIGHT = 299_792_458.0

# Upper bound on -2*phi_m/r for which the parabolic (Fresnel) phase stays accurate.
FRESNEL_ACCURACY_LIMIT = 0.1745


@dataclass(frozen=True)
class ArrayGeometry:
    """A UPA in the yz-plane with element 0 at the origin.

    Element ``m`` sits at ``k_y = floor(m / m_z) * d_y`` and
    ``k_z = mod(m, m_z) * d_z``; all lengths are in meters.
    """
    m_y: int
    m_z: int
    d_y: float
    d_z: float
    wavelength: float

    def __post_init__(self):
        if self.m_y < 1 or self.m_z < 1:
            raise DomainError(f"element counts must be >= 1, got {self.m_y}x{self.m_z}")
        if self.d_y <= 0 or self.d_z <= 0:
            raise DomainError(f"element spacing must be positive, got ({self.d_y}, {self.d_z})")
        if self.wavelength <= 0:
            raise DomainError(f"wavelength must be positive, got {self.wavelength}")

    @classmethod
    def half_wavelength(cls, m_y: int, m_z: int, wavelength: float) -> "ArrayGeometry":
        """Array with lambda/2 spacing in both dimensions."""
        return cls(m_y=m_y, m_z=m_z, d_y=wavelength / 2, d_z=wavelength / 2,
                   wavelength=wavelength)

    @classmethod
    def from_carrier(cls, m_y: int, m_z: int, carrier_hz: float,
                     spacing_wavelengths: float = 0.5) -> "ArrayGeometry":
        """Array sized from a carrier frequency and a spacing in wavelengths."""
        if carrier_hz <= 0:
            raise DomainError(f"carrier frequency must be positive, got {carrier_hz}")
        wavelength = SPEED_OF_LIGHT / carrier_hz
        spacing = spacing_wavelengths * wavelength
        return cls(m_y=m_y, m_z=m_z, d_y=spacing, d_z=spacing, wavelength=wavelength)

    @property
    def n_elements(self) -> int:
        return self.m_y * self.m_z

    @property
    def wavenumber(self) -> float:
        return 2.0 * math.pi / self.wavelength

    def positions(self) -> Tuple[RealArray, RealArray]:
        """Coordinates ``(k_y, k_z)`` of every element, each of shape (M,)."""
        m = np.arange(self.n_elements)
        k_y = (m // self.m_z) * self.d_y
        k_z = (m % self.m_z) * self.d_z
        return k_y.astype(float), k_z.astype(float)


def element_position(geometry: ArrayGeometry, m: int) -> Tuple[float, float]:
    """Cartesian offsets ``(k_y, k_z)`` of element ``m``."""
    if not 0 <= m < geometry.n_elements:
        raise DomainError(f"element index {m} outside [0, {geometry.n_elements})")
    k_y = (m // geometry.m_z) * geometry.d_y
    k_z = (m % geometry.m_z) * geometry.d_z
    return float(k_y), float(k_z)


def aperture(geometry: ArrayGeometry) -> float:
    """Maximum linear dimension (diagonal) of the array."""
    extent_y = (geometry.m_y - 1) * geometry.d_y
    extent_z = (geometry.m_z - 1) * geometry.d_z
    return math.hypot(extent_y, extent_z)


def field_boundaries(geometry: ArrayGeometry) -> Tuple[float, float]:
    """Start of the radiative near-field ``2*Delta`` and the Fraunhofer distance."""
    delta = aperture(geometry)
    d_b = 2.0 * delta
    d_fa = 2.0 * delta ** 2 / geometry.wavelength
    return d_b, d_fa


def fresnel_validity_radius(geometry: ArrayGeometry,
                            limit: float = FRESNEL_ACCURACY_LIMIT) -> float:
    """Smallest range at which ``-2*phi_m/r <= limit`` holds for every element
    and every direction.

    The worst direction aligns with the farthest element, which gives
    ``(Delta/r)**2 + 2*Delta/r <= limit``.
    """
    delta = aperture(geometry)
    if delta == 0.0:
        return 0.0
    ratio = math.sqrt(1.0 + limit) - 1.0
    return delta / ratio
