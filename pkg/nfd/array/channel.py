"""Near-field and far-field array responses and the LoS OFDM channel."""

import logging
import math
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence

import numpy as np

from ..exceptions import DomainError
from ..types import ComplexArray, RealArray, ResponseMode
from .geometry import ArrayGeometry, element_position

log = logging.getLogger(__name__)

HALF_PI = math.pi / 2
# Slack for angles that land on +-pi/2 after a degree->radian round trip.
_ANGLE_SLACK = 1e-12


@dataclass(frozen=True)
class SphericalPoint:
    """A point ``(azimuth, elevation, range)`` seen from element 0.

    ``range`` is ``None`` for a far-field point, which has no finite distance.
    Angles are in radians.
    """
    azimuth: float
    elevation: float
    range: Optional[float] = None

    def __post_init__(self):
        for name in ("azimuth", "elevation"):
            value = getattr(self, name)
            if not math.isfinite(value) or abs(value) > HALF_PI + _ANGLE_SLACK:
                raise DomainError(f"{name} {value} rad outside [-pi/2, pi/2]")
        if self.range is not None and not (math.isfinite(self.range) and self.range > 0):
            raise DomainError(f"range must be positive and finite, got {self.range}")

    @classmethod
    def from_degrees(cls, azimuth_deg: float, elevation_deg: float,
                     range_m: Optional[float] = None) -> "SphericalPoint":
        return cls(math.radians(azimuth_deg), math.radians(elevation_deg), range_m)

    @property
    def is_far_field(self) -> bool:
        return self.range is None

    @property
    def inverse_range(self) -> float:
        """``1/r``, zero for far-field points."""
        return 0.0 if self.range is None else 1.0 / self.range

    def degrees(self) -> tuple:
        return math.degrees(self.azimuth), math.degrees(self.elevation)


@dataclass(frozen=True)
class UserChannelParams:
    """LoS path of one user: position, complex gain and normalized delay.

    The delay is a per-subcarrier phase slope, so subcarrier ``nu`` sees
    ``exp(-j*2*pi*delay*nu)``.
    """
    position: SphericalPoint
    gain: complex = 1.0 + 0.0j
    delay: float = 0.0

    def __post_init__(self):
        if abs(self.gain) == 0:
            raise DomainError("an active user needs a non-zero path gain")


@dataclass(frozen=True)
class LosChannel:
    """Channel ``H_nu = A F_nu`` at one subcarrier.

    ``steering`` is A (M x K) and ``factors`` the diagonal of F_nu (K,).
    """
    steering: ComplexArray
    factors: ComplexArray
    subcarrier: int

    @property
    def matrix(self) -> ComplexArray:
        return self.steering * self.factors[np.newaxis, :]


@dataclass(frozen=True)
class FresnelError:
    """Accuracy of the parabolic phase against the exact distance."""
    max_phase_error_rad: float
    max_relative_distance_error: float


def _direction_terms(azimuth, elevation):
    return np.sin(elevation), np.sin(azimuth) * np.cos(elevation)


def exact_relative_phase(geometry: ArrayGeometry, m: int, point: SphericalPoint) -> float:
    """``r - r_m`` with ``r_m`` the exact distance from element ``m`` to ``point``."""
    if point.is_far_field:
        raise DomainError("exact phase needs a finite range; use the far-field phase")
    k_y, k_z = element_position(geometry, m)
    return float(_exact_phases(np.array([k_y]), np.array([k_z]), point)[0])


def _exact_phases(k_y: RealArray, k_z: RealArray, point: SphericalPoint) -> RealArray:
    r = point.range
    sin_el, sin_az_cos_el = _direction_terms(point.azimuth, point.elevation)
    # r - r_m written as (r^2 - r_m^2) / (r + r_m) to avoid cancellation at large r
    numerator = 2.0 * r * (k_z * sin_el + k_y * sin_az_cos_el) - (k_y ** 2 + k_z ** 2)
    r_m = np.sqrt(np.maximum(r ** 2 - numerator, 0.0))
    return numerator / (r + r_m)


def fresnel_relative_phase(geometry: ArrayGeometry, m: int, point: SphericalPoint) -> float:
    """Parabolic approximation of ``r - r_m``; far-field points drop the 1/r term."""
    k_y, k_z = element_position(geometry, m)
    return float(_fresnel_phases(np.array([k_y]), np.array([k_z]), point)[0])


def _fresnel_phases(k_y: RealArray, k_z: RealArray, point: SphericalPoint) -> RealArray:
    sin_el, sin_az_cos_el = _direction_terms(point.azimuth, point.elevation)
    phase = k_z * sin_el + k_y * sin_az_cos_el
    if not point.is_far_field:
        phase = phase - (k_y ** 2 + k_z ** 2) / (2.0 * point.range)
    return phase


def relative_phases(geometry: ArrayGeometry, point: SphericalPoint,
                    mode: ResponseMode = ResponseMode.EXACT) -> RealArray:
    """Per-element relative phase (meters) for every element of the array."""
    k_y, k_z = geometry.positions()
    if ResponseMode(mode) is ResponseMode.EXACT:
        if point.is_far_field:
            raise DomainError("exact mode needs a finite range")
        return _exact_phases(k_y, k_z, point)
    return _fresnel_phases(k_y, k_z, point)


def array_response(geometry: ArrayGeometry, point: SphericalPoint,
                   mode: ResponseMode = ResponseMode.EXACT) -> ComplexArray:
    """Array response ``a(point)``: unit-modulus, element 0 equal to 1."""
    return np.exp(1j * geometry.wavenumber * relative_phases(geometry, point, mode))


def steering_matrix(geometry: ArrayGeometry, azimuth: RealArray, elevation: RealArray,
                    ranges: Optional[RealArray] = None,
                    mode: ResponseMode = ResponseMode.EXACT) -> ComplexArray:
    """Stacked responses for many points, shape (P, M).

    ``ranges`` entries equal to ``inf`` (or ``ranges=None``) are far-field; in
    exact mode those rows fall back to the planar phase, which is the exact
    limit of the spherical one.
    """
    azimuth = np.atleast_1d(np.asarray(azimuth, dtype=float))
    elevation = np.broadcast_to(np.asarray(elevation, dtype=float), azimuth.shape)
    if ranges is None:
        ranges = np.full(azimuth.shape, np.inf)
    ranges = np.broadcast_to(np.asarray(ranges, dtype=float), azimuth.shape)

    k_y, k_z = geometry.positions()
    sin_el, sin_az_cos_el = _direction_terms(azimuth, elevation)
    planar = np.outer(sin_el, k_z) + np.outer(sin_az_cos_el, k_y)
    rho2 = (k_y ** 2 + k_z ** 2)[np.newaxis, :]
    finite = np.isfinite(ranges)
    phase = planar.copy()
    if np.any(finite):
        r = ranges[finite][:, np.newaxis]
        if ResponseMode(mode) is ResponseMode.EXACT:
            numerator = 2.0 * r * planar[finite] - rho2
            r_m = np.sqrt(np.maximum(r ** 2 - numerator, 0.0))
            phase[finite] = numerator / (r + r_m)
        else:
            phase[finite] = planar[finite] - rho2 / (2.0 * r)
    return np.exp(1j * geometry.wavenumber * phase)


def fresnel_error(geometry: ArrayGeometry, point: SphericalPoint) -> FresnelError:
    """Worst-element discrepancy between exact and parabolic phases at ``point``.

    Reported both as a phase in radians and relative to the exact distance.
    """
    if point.is_far_field:
        raise DomainError("Fresnel error is defined for finite ranges only")
    k_y, k_z = geometry.positions()
    exact = _exact_phases(k_y, k_z, point)
    approx = _fresnel_phases(k_y, k_z, point)
    distance = point.range - exact
    deviation = np.abs(exact - approx)
    return FresnelError(
        max_phase_error_rad=float(geometry.wavenumber * deviation.max()),
        max_relative_distance_error=float((deviation / distance).max()),
    )


def los_channel(users: Sequence[UserChannelParams], geometry: ArrayGeometry,
                subcarrier: int, mode: ResponseMode = ResponseMode.EXACT) -> LosChannel:
    """LoS channel at subcarrier ``nu``: column k is ``g_k exp(-j 2 pi tau_k nu) a_k``."""
    if len(users) < 1:
        raise DomainError("at least one user is required")
    steering = user_steering(geometry, [u.position for u in users], mode)
    factors = np.array([u.gain * np.exp(-2j * np.pi * u.delay * subcarrier) for u in users],
                       dtype=complex)
    return LosChannel(steering=steering, factors=factors, subcarrier=subcarrier)


def user_steering(geometry: ArrayGeometry, positions: Iterable[SphericalPoint],
                  mode: ResponseMode = ResponseMode.EXACT) -> ComplexArray:
    """Steering matrix A (M x K) with one column per position.

    Far-field positions use the planar response regardless of ``mode``.
    """
    columns: List[ComplexArray] = []
    for position in positions:
        column_mode = ResponseMode.FRESNEL if position.is_far_field else mode
        columns.append(array_response(geometry, position, column_mode))
    return np.stack(columns, axis=1)
