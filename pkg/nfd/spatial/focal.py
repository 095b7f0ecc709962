"""Closed-form prediction of where nonlinear distortion is beamformed or focused.

Every user contributes three direction sums: ``sin(el)``, ``sin(az) cos(el)``
and ``1/r`` (zero in the far field). A distortion component generated by the
index tuple ``(k_0, ..., k_2p)`` points where those sums take the alternating
combination ``sum_i (-1)^i s_{k_i}``; converting back to angles and range gives
the focal point.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..array.channel import SphericalPoint
from ..array.geometry import ArrayGeometry, field_boundaries, fresnel_validity_radius
from ..exceptions import DomainError
from ..tx.waveform import RisConfig
from ..types import FocalClass, IndexTuple, JsonDict

log = logging.getLogger(__name__)

ANGLE_TOLERANCE = 1e-9
RANGE_TOLERANCE = 1e-9
# Combinatorial caps for the tuple space {0..K-1}^(2p+1).
MAX_ORDER = 2
MAX_USERS = 8

_CLASS_RANK = {FocalClass.P1: 0, FocalClass.P2: 1, FocalClass.P3: 2, FocalClass.HIGHER: 3}


@dataclass(frozen=True)
class FocalPoint:
    """A predicted distortion focal point.

    ``azimuth``/``elevation`` are radians and ``None`` when indeterminate;
    ``range`` is ``None`` in the far field and may be non-positive for an
    unphysical point.
    """
    index_tuple: IndexTuple
    order: int
    focal_class: FocalClass
    azimuth: Optional[float]
    elevation: Optional[float]
    range: Optional[float]
    physical: bool
    multiplicity: int = 1
    sums: Tuple[float, float, float] = field(default=(0.0, 0.0, 0.0), repr=False, compare=False)

    @property
    def location(self) -> Optional[SphericalPoint]:
        if not self.physical:
            return None
        return SphericalPoint(self.azimuth, self.elevation, self.range)

    @property
    def is_far_field(self) -> bool:
        return self.range is None

    def reflected(self) -> "FocalPoint":
        """The same point with both angles negated (RIS reflection frame)."""
        return FocalPoint(
            index_tuple=self.index_tuple, order=self.order, focal_class=self.focal_class,
            azimuth=None if self.azimuth is None else -self.azimuth,
            elevation=None if self.elevation is None else -self.elevation,
            range=self.range, physical=self.physical, multiplicity=self.multiplicity,
            sums=(-self.sums[0], -self.sums[1], self.sums[2]),
        )


@dataclass(frozen=True)
class EffectivePosition:
    """User position as seen after the RIS phase profile is removed."""
    point: Optional[SphericalPoint]
    physical: bool
    sums: Tuple[float, float, float]


@dataclass
class UniquePoints:
    """Deduplicated third-order focal points split into their classes."""
    p1: List[FocalPoint] = field(default_factory=list)
    p2: List[FocalPoint] = field(default_factory=list)
    p3: List[FocalPoint] = field(default_factory=list)

    @property
    def all(self) -> List[FocalPoint]:
        return self.p1 + self.p2 + self.p3

    def __len__(self) -> int:
        return len(self.p1) + len(self.p2) + len(self.p3)

    def physical(self) -> List[FocalPoint]:
        return [p for p in self.all if p.physical]


def unique_point_bound(n_users: int) -> int:
    """Upper bound ``(K^3 - K^2 + 2K) / 2`` on unique third-order focal points."""
    k = n_users
    return (k ** 3 - k ** 2 + 2 * k) // 2


def classify(index_tuple: IndexTuple) -> FocalClass:
    if len(set(index_tuple)) == 1:
        return FocalClass.P1
    if len(index_tuple) != 3:
        return FocalClass.HIGHER
    p, q, v = index_tuple
    if p == v:
        return FocalClass.P2
    return FocalClass.P3


def direction_sums(point: SphericalPoint) -> Tuple[float, float, float]:
    """``(sin(el), sin(az) cos(el), 1/r)`` with ``1/r = 0`` in the far field."""
    return (math.sin(point.elevation),
            math.sin(point.azimuth) * math.cos(point.elevation),
            point.inverse_range)


def _point_from_sums(index_tuple: IndexTuple, order: int, u: float, v: float, w: float,
                     near_field: bool) -> FocalPoint:
    focal_class = classify(index_tuple)
    elevation = azimuth = None
    physical = True
    if abs(u) <= 1.0:
        elevation = math.asin(u)
        cos_el = math.sqrt(1.0 - u * u)
        if cos_el > 0 and abs(v) <= cos_el:
            azimuth = math.asin(v / cos_el)
        else:
            physical = False
    else:
        physical = False

    range_m: Optional[float] = None
    if near_field and w != 0.0:
        range_m = 1.0 / w
        if range_m <= 0:
            physical = False
    return FocalPoint(index_tuple=index_tuple, order=order, focal_class=focal_class,
                      azimuth=azimuth, elevation=elevation, range=range_m, physical=physical,
                      sums=(float(u), float(v), float(w)))


def _check_limits(n_users: int, order: int) -> None:
    if n_users < 1:
        raise DomainError("at least one user is required")
    if order < 1:
        raise DomainError(f"distortion order must be >= 1, got {order}")
    if order > MAX_ORDER or n_users > MAX_USERS:
        raise DomainError(f"tuple enumeration capped at order {MAX_ORDER} and "
                          f"{MAX_USERS} users, got order {order} with {n_users} users")


def _predict_from_sums(sums: np.ndarray, near: np.ndarray, order: int,
                       originals: Optional[Sequence[SphericalPoint]] = None) -> List[FocalPoint]:
    n_users = sums.shape[0]
    _check_limits(n_users, order)
    length = 2 * order + 1
    points = []
    for index_tuple in itertools.product(range(n_users), repeat=length):
        if originals is not None and len(set(index_tuple)) == 1:
            # alternating sums telescope onto the user itself
            user = originals[index_tuple[0]]
            points.append(FocalPoint(index_tuple=index_tuple, order=order,
                                     focal_class=FocalClass.P1, azimuth=user.azimuth,
                                     elevation=user.elevation, range=user.range,
                                     physical=True,
                                     sums=tuple(float(s) for s in sums[index_tuple[0]])))
            continue
        u = v = w = 0.0
        for i, k in enumerate(index_tuple):
            sign = 1.0 if i % 2 == 0 else -1.0
            u += sign * sums[k, 0]
            v += sign * sums[k, 1]
            w += sign * sums[k, 2]
        near_field = bool(any(near[k] for k in index_tuple))
        points.append(_point_from_sums(index_tuple, order, u, v, w, near_field))
    return points


def predict(users: Sequence[SphericalPoint], order: int = 1,
            geometry: Optional[ArrayGeometry] = None) -> List[FocalPoint]:
    """Focal point of every tuple in ``{0..K-1}^(2p+1)``, in lexicographic tuple order.

    Far-field users contribute no range term; when no user in a tuple is in the
    near field the point is far-field. With ``geometry`` given, users closer
    than the Fresnel validity radius or the near-field start are logged.
    """
    if geometry is not None:
        _warn_model_validity(users, geometry)
    sums = np.array([direction_sums(u) for u in users], dtype=float).reshape(-1, 3)
    near = np.array([not u.is_far_field for u in users], dtype=bool)
    return _predict_from_sums(sums, near, order, originals=users)


def _warn_model_validity(users: Sequence[SphericalPoint], geometry: ArrayGeometry) -> None:
    d_b, _ = field_boundaries(geometry)
    r_valid = fresnel_validity_radius(geometry)
    for k, user in enumerate(users):
        if user.is_far_field:
            continue
        if user.range < d_b:
            log.warning("User %d at %.2f m is inside the reactive near field (< %.2f m)",
                        k, user.range, d_b)
        elif user.range < r_valid:
            log.warning("User %d at %.2f m is below the Fresnel validity radius %.2f m; "
                        "predictions are approximate", k, user.range, r_valid)


def _same_location(a: FocalPoint, b: FocalPoint) -> bool:
    """Compare direction sums, which also separates distinct unphysical points."""
    (au, av, aw), (bu, bv, bw) = a.sums, b.sums
    if abs(au - bu) > ANGLE_TOLERANCE or abs(av - bv) > ANGLE_TOLERANCE:
        return False
    return abs(aw - bw) <= RANGE_TOLERANCE * max(abs(aw), abs(bw), 1e-3)


def unique_points(prediction: Sequence[FocalPoint]) -> UniquePoints:
    """Deduplicate a third-order prediction into classes P1, P2 and P3.

    Points are merged by location; a merged point keeps the lowest class
    (P1 before P2 before P3) and counts every tuple that produced it in
    ``multiplicity``.
    """
    if any(p.order != 1 for p in prediction):
        raise DomainError("unique_points expects a third-order prediction")
    ordered = sorted(prediction, key=lambda p: (_CLASS_RANK[p.focal_class], p.index_tuple))
    merged: List[FocalPoint] = []
    counts: List[int] = []
    for point in ordered:
        for i, kept in enumerate(merged):
            if _same_location(point, kept):
                counts[i] += 1
                break
        else:
            merged.append(point)
            counts.append(1)

    result = UniquePoints()
    buckets: Dict[FocalClass, List[FocalPoint]] = {
        FocalClass.P1: result.p1, FocalClass.P2: result.p2, FocalClass.P3: result.p3,
    }
    for point, count in zip(merged, counts):
        buckets[point.focal_class].append(FocalPoint(
            index_tuple=point.index_tuple, order=point.order, focal_class=point.focal_class,
            azimuth=point.azimuth, elevation=point.elevation, range=point.range,
            physical=point.physical, multiplicity=count, sums=point.sums))
    log.debug("Unique focal points: P1=%d P2=%d P3=%d", len(result.p1), len(result.p2),
              len(result.p3))
    return result


def same_elevation_case(users: Sequence[SphericalPoint], order: int = 1) -> List[FocalPoint]:
    """Prediction for users sharing one elevation; the focal elevation stays put."""
    elevations = {u.elevation for u in users}
    if len(elevations) > 1:
        raise DomainError(f"users must share one elevation, got {sorted(elevations)}")
    return predict(users, order)


def same_azimuth_case(users: Sequence[SphericalPoint], order: int = 1) -> List[FocalPoint]:
    """Prediction for users sharing one azimuth; unequal elevations spread the azimuth."""
    azimuths = {u.azimuth for u in users}
    if len(azimuths) > 1:
        raise DomainError(f"users must share one azimuth, got {sorted(azimuths)}")
    return predict(users, order)


def ris_effective_position(user: SphericalPoint, steer: RisConfig) -> EffectivePosition:
    """Position of ``user`` after the RIS subtracts the phase of ``steer.steer_from``."""
    su, sv, sw = direction_sums(user)
    tu, tv, tw = direction_sums(steer.steer_from)
    sums = (su - tu, sv - tv, sw - tw)
    point = _point_from_sums((0,), 1, sums[0], sums[1], sums[2],
                             near_field=not user.is_far_field or not steer.steer_from.is_far_field)
    location = point.location
    return EffectivePosition(point=location, physical=location is not None, sums=sums)


def ris_focal_points(users: Sequence[SphericalPoint], steer: RisConfig,
                     order: int = 1) -> List[FocalPoint]:
    """Distortion focal points of an active RIS, in reflected coordinates."""
    effective = [ris_effective_position(u, steer) for u in users]
    if all(e.physical for e in effective):
        points = predict([e.point for e in effective], order)
    else:
        sums = np.array([e.sums for e in effective], dtype=float)
        near = np.array([e.sums[2] != 0.0 for e in effective], dtype=bool)
        points = _predict_from_sums(sums, near, order)
    return [p.reflected() for p in points]


def tuple_beam(columns: np.ndarray, index_tuple: IndexTuple) -> np.ndarray:
    """Element weights ``w_k0 * conj(w_k1) * w_k2 ...`` radiated by one index tuple.

    ``columns`` is the M x K matrix of per-user element weights. The result
    is the exact-array counterpart of a focal point: its beam pattern peaks
    where the tuple's distortion lands.
    """
    columns = np.asarray(columns, dtype=complex)
    if columns.ndim != 2:
        raise DomainError(f"columns must be M x K, got shape {columns.shape}")
    if not index_tuple or max(index_tuple) >= columns.shape[1] or min(index_tuple) < 0:
        raise DomainError(f"tuple {index_tuple} does not index {columns.shape[1]} users")
    weights = np.ones(columns.shape[0], dtype=complex)
    for i, k in enumerate(index_tuple):
        weights = weights * (columns[:, k] if i % 2 == 0 else np.conj(columns[:, k]))
    return weights


def to_records(points: Sequence[FocalPoint]) -> List[JsonDict]:
    """JSON-ready records: tuple, class, angles in degrees, range or "farfield"."""
    records = []
    for p in points:
        records.append({
            "tuple": list(p.index_tuple),
            "class": p.focal_class.value,
            "azimuth_deg": None if p.azimuth is None else math.degrees(p.azimuth),
            "elevation_deg": None if p.elevation is None else math.degrees(p.elevation),
            "range_m": "farfield" if p.range is None else p.range,
            "physical": p.physical,
            "multiplicity": p.multiplicity,
        })
    return records
