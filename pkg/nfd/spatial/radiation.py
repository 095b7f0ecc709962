"""Directional power spectral density of the amplified signal and peak extraction."""

import csv
import json
import logging
import math
import warnings
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage, signal
from scipy.signal._peak_finding_utils import PeakPropertyWarning

from ..array.channel import steering_matrix
from ..array.geometry import ArrayGeometry, field_boundaries
from ..exceptions import DomainError, EnsembleError
from ..parallel import ordered_map
from ..tx.amplifier import AmplifiedFrame, BussgangDecomposition
from ..tx.waveform import OfdmConfig
from ..types import (Component, ComplexArray, JsonDict, PathLike, RealArray, ResponseMode,
                     ScanAxis, SpectralEstimator)

log = logging.getLogger(__name__)

DEFAULT_ANGLE_STEP_DEG = 0.5
DEFAULT_RANGE_STEP_M = 0.25
# Points per steering chunk handed to a worker.
CHUNK_SIZE = 64
# Covariance-path matrices above this size are slow and memory hungry.
LARGE_COVARIANCE_ELEMENTS = 256
_DB_FLOOR = 1e-300


class SpectralDensity(ABC):
    """Per-subcarrier spectral matrices of the linear and distortion parts.

    Implementations only expose quadratic forms ``a^T S[nu] a*``, which is all
    a scan needs.
    """

    def __init__(self, n_fft: int):
        self.n_fft = n_fft

    @abstractmethod
    def quadratic_form(self, steering: ComplexArray, component: Component) -> RealArray:
        """``a^T S[nu] a*`` for every steering row, shape (P, N)."""
        pass

    def evaluate(self, steering: ComplexArray) -> Dict[Component, RealArray]:
        linear = self.quadratic_form(steering, Component.LINEAR)
        distortion = self.quadratic_form(steering, Component.DISTORTION)
        return {
            Component.LINEAR: linear,
            Component.DISTORTION: distortion,
            Component.TOTAL: linear + distortion,
        }


class CovarianceSpectrum(SpectralDensity):
    """Spectral matrices as the DFT over lags of covariance sequences."""

    def __init__(self, decomposition: BussgangDecomposition, n_fft: int):
        super().__init__(n_fft)
        lags = np.asarray(decomposition.lags, dtype=float)
        self._lags = decomposition.lags
        self._covariances = {
            Component.LINEAR: decomposition.linear_covariance().values,
            Component.DISTORTION: decomposition.c_dd.values,
        }
        nu = np.arange(n_fft, dtype=float)
        self._dft = np.exp(-2j * np.pi * np.outer(lags, nu) / n_fft)

    def quadratic_form(self, steering: ComplexArray, component: Component) -> RealArray:
        covariance = self._covariances[Component(component)]
        projected = np.tensordot(steering, covariance, axes=([1], [1]))
        per_lag = np.sum(projected * np.conj(steering)[:, np.newaxis, :], axis=2)
        return np.maximum(np.real(per_lag @ self._dft), 0.0)

    def matrices(self, component: Component) -> ComplexArray:
        """Full spectral matrices ``S[nu]``, shape (N, M, M)."""
        covariance = self._covariances[Component(component)]
        return np.einsum("tn,tab->nab", self._dft, covariance)


class PeriodogramSpectrum(SpectralDensity):
    """Averaged periodogram over Monte-Carlo frames of ``u_n`` and ``d_n``."""

    def __init__(self, linear_frames: ComplexArray, distortion_frames: ComplexArray):
        if linear_frames.shape != distortion_frames.shape or linear_frames.ndim != 3:
            raise DomainError("linear and distortion frames must share shape (F, M, N)")
        super().__init__(linear_frames.shape[2])
        self._frames = {Component.LINEAR: linear_frames, Component.DISTORTION: distortion_frames}

    @property
    def n_frames(self) -> int:
        return self._frames[Component.LINEAR].shape[0]

    def quadratic_form(self, steering: ComplexArray, component: Component) -> RealArray:
        frames = self._frames[Component(component)]
        beams = np.tensordot(steering, frames, axes=([1], [1]))
        spectra = np.fft.fft(beams, axis=2, norm="ortho")
        return np.mean(np.abs(spectra) ** 2, axis=1)

    def standard_error(self, steering: ComplexArray, component: Component) -> RealArray:
        """Monte-Carlo standard error of ``quadratic_form``."""
        frames = self._frames[Component(component)]
        beams = np.tensordot(steering, frames, axes=([1], [1]))
        power = np.abs(np.fft.fft(beams, axis=2, norm="ortho")) ** 2
        return np.std(power, axis=1, ddof=1) / math.sqrt(max(self.n_frames, 1))


class ExpectedDistortion(SpectralDensity):
    """Distortion a third-order PA radiates for Gaussian inputs, from the input covariance.

    Every index tuple radiates its own beam and the beams add in power, which
    sums to ``C^(p+1) * conj(C)^p`` elementwise; the PA gain only scales it.
    Spatial only: there is a single spectral bin.
    """

    def __init__(self, covariance: ComplexArray, order: int = 1):
        super().__init__(1)
        covariance = np.asarray(covariance, dtype=complex)
        if covariance.ndim != 2 or covariance.shape[0] != covariance.shape[1]:
            raise DomainError(f"covariance must be square, got shape {covariance.shape}")
        if order < 1:
            raise DomainError(f"distortion order must be >= 1, got {order}")
        self._matrices = {
            Component.LINEAR: covariance,
            Component.DISTORTION: covariance ** (order + 1) * np.conj(covariance) ** order,
        }

    def quadratic_form(self, steering: ComplexArray, component: Component) -> RealArray:
        matrix = self._matrices[Component(component)]
        values = np.sum((steering @ matrix) * np.conj(steering), axis=1)
        return np.maximum(np.real(values), 0.0)[:, np.newaxis]


def spectral_density(decomposition: BussgangDecomposition, ofdm: OfdmConfig,
                     frames: Optional[Sequence[AmplifiedFrame]] = None,
                     estimator: SpectralEstimator = SpectralEstimator.PERIODOGRAM) -> SpectralDensity:
    """Spectral densities of the linear and distortion components.

    The periodogram needs the amplified ``frames``; the covariance path uses
    the decomposition's lag window, which is exact when it spans a full
    OFDM symbol.
    """
    if SpectralEstimator(estimator) is SpectralEstimator.COVARIANCE:
        window = set(decomposition.lags)
        if not set(range(ofdm.n_fft)) <= window:
            log.warning("Lag window of %d lags does not cover a full symbol of %d samples; "
                        "spectra are truncated", len(window), ofdm.n_fft)
        if decomposition.gains.size > LARGE_COVARIANCE_ELEMENTS:
            log.warning("Covariance spectra for %d elements are memory heavy; "
                        "prefer the periodogram", decomposition.gains.size)
        return CovarianceSpectrum(decomposition, ofdm.n_fft)

    if not frames:
        raise EnsembleError("the periodogram estimator needs at least one frame")
    linear, distortion = [], []
    for frame in frames:
        u, d = decomposition.split(frame)
        linear.append(u)
        distortion.append(d)
    return PeriodogramSpectrum(np.stack(linear), np.stack(distortion))


@dataclass(frozen=True)
class AxisGrid:
    """One scanned coordinate; angles in radians, ranges in meters."""
    axis: ScanAxis
    values: RealArray = field(repr=False)

    @classmethod
    def angles_deg(cls, axis: ScanAxis, start: float, stop: float,
                   step: float = DEFAULT_ANGLE_STEP_DEG) -> "AxisGrid":
        count = int(round((stop - start) / step)) + 1
        return cls(ScanAxis(axis), np.radians(np.linspace(start, stop, count)))

    @classmethod
    def ranges(cls, start: float, stop: float, step: float = DEFAULT_RANGE_STEP_M) -> "AxisGrid":
        count = int(round((stop - start) / step)) + 1
        return cls(ScanAxis.RANGE, np.linspace(start, stop, count))

    @classmethod
    def subcarriers(cls, n_fft: int) -> "AxisGrid":
        return cls(ScanAxis.SUBCARRIER, np.arange(n_fft, dtype=float))

    def display_values(self) -> RealArray:
        """Grid in boundary units: degrees for angles."""
        if self.axis in (ScanAxis.AZIMUTH, ScanAxis.ELEVATION):
            return np.degrees(self.values)
        return self.values

    @property
    def unit(self) -> str:
        return {ScanAxis.AZIMUTH: "deg", ScanAxis.ELEVATION: "deg",
                ScanAxis.RANGE: "m", ScanAxis.SUBCARRIER: "index"}[self.axis]


@dataclass(frozen=True)
class ScanSpec:
    """One or two scan axes plus values for the coordinates that stay fixed.

    Unset fixed coordinates default to broadside, far field and the
    band-integrated PSD (sum over all subcarriers).
    """
    axes: Tuple[AxisGrid, ...]
    fixed: Mapping[ScanAxis, float] = field(default_factory=dict)

    def __post_init__(self):
        if not 1 <= len(self.axes) <= 2:
            raise DomainError(f"a scan has one or two axes, got {len(self.axes)}")
        names = [a.axis for a in self.axes]
        if len(set(names)) != len(names):
            raise DomainError(f"duplicate scan axes {names}")

    def fixed_value(self, axis: ScanAxis) -> Optional[float]:
        if axis in self.fixed:
            return self.fixed[axis]
        return {ScanAxis.AZIMUTH: 0.0, ScanAxis.ELEVATION: 0.0}.get(axis)

    def spatial(self) -> Optional["ScanSpec"]:
        """The same grid without its subcarrier axis; ``None`` if nothing spatial is scanned."""
        axes = tuple(a for a in self.axes if a.axis is not ScanAxis.SUBCARRIER)
        if not axes:
            return None
        fixed = {k: v for k, v in self.fixed.items() if k is not ScanAxis.SUBCARRIER}
        return ScanSpec(axes=axes, fixed=fixed)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(a.values.size for a in self.axes)


@dataclass
class SpectralField:
    """PSD over a scan grid for each component, stored on a linear scale."""
    spec: ScanSpec
    values: Dict[Component, RealArray]

    @property
    def axes(self) -> Tuple[AxisGrid, ...]:
        return self.spec.axes

    def reference(self) -> float:
        peak = float(np.max(self.values[Component.LINEAR]))
        return peak if peak > 0 else 1.0

    def db(self, component: Component, reference: Optional[float] = None) -> RealArray:
        """Values in dB relative to ``reference`` (default: linear-component maximum)."""
        reference = self.reference() if reference is None else reference
        return 10.0 * np.log10(np.maximum(self.values[Component(component)], _DB_FLOOR) / reference)

    def absolute_db(self, component: Component, transmit_power_w: float,
                    bandwidth_hz: float) -> RealArray:
        """dBm/Hz assuming the total field integrates to ``transmit_power_w`` over ``bandwidth_hz``."""
        if transmit_power_w <= 0 or bandwidth_hz <= 0:
            raise DomainError("absolute PSD needs positive transmit power and bandwidth")
        total = float(np.sum(self.values[Component.TOTAL]))
        scale = transmit_power_w * 1e3 / (bandwidth_hz * (total if total > 0 else 1.0))
        return 10.0 * np.log10(np.maximum(self.values[Component(component)] * scale, _DB_FLOOR))

    def to_csv(self, path: PathLike, seed: Optional[int] = None,
               metadata: Optional[JsonDict] = None,
               absolute: Optional[Tuple[float, float]] = None) -> Tuple[Path, Path]:
        """Write ``axis1,axis2,component,psd_db`` rows and a JSON sidecar.

        ``absolute`` of ``(transmit_power_w, bandwidth_hz)`` switches to dBm/Hz.
        """
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        first = self.axes[0].display_values()
        second = self.axes[1].display_values() if len(self.axes) == 2 else None
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["axis1", "axis2", "component", "psd_db"])
            for component in (Component.TOTAL, Component.LINEAR, Component.DISTORTION):
                values = (self.db(component) if absolute is None
                          else self.absolute_db(component, *absolute))
                for index in np.ndindex(values.shape):
                    a1 = f"{first[index[0]]:.6g}"
                    a2 = f"{second[index[1]]:.6g}" if second is not None else ""
                    writer.writerow([a1, a2, component.value, f"{values[index]:.6f}"])

        sidecar = path.with_suffix(".json")
        description = {
            "axes": [{"axis": a.axis.value, "unit": a.unit,
                      "start": float(a.display_values()[0]),
                      "stop": float(a.display_values()[-1]),
                      "count": int(a.values.size)} for a in self.axes],
            "fixed": {axis.value: _display_fixed(axis, value)
                      for axis, value in self.spec.fixed.items()},
            "reference": ("dB relative to the maximum of the linear component"
                          if absolute is None else "dBm/Hz"),
            "seed": seed,
        }
        if metadata:
            description.update(metadata)
        with open(sidecar, "w") as f:
            json.dump(description, f, indent=2, sort_keys=True)
        return path, sidecar


def _display_fixed(axis: ScanAxis, value: float):
    if axis in (ScanAxis.AZIMUTH, ScanAxis.ELEVATION):
        return math.degrees(value)
    if axis is ScanAxis.RANGE and not math.isfinite(value):
        return "farfield"
    return value


def _grid_points(spec: ScanSpec) -> Tuple[Dict[ScanAxis, RealArray], int]:
    """Flattened azimuth, elevation and range of every spatial grid point."""
    spatial = [a for a in spec.axes if a.axis is not ScanAxis.SUBCARRIER]
    coords = {}
    mesh = np.meshgrid(*[a.values for a in spatial], indexing="ij") if spatial else []
    for grid, values in zip(spatial, mesh):
        coords[grid.axis] = values.ravel()
    n_points = mesh[0].size if spatial else 1
    for axis in (ScanAxis.AZIMUTH, ScanAxis.ELEVATION, ScanAxis.RANGE):
        if axis not in coords:
            value = spec.fixed_value(axis)
            coords[axis] = np.full(n_points, np.inf if value is None else value)
    return coords, n_points


def _steering_rows(geometry: ArrayGeometry, coords: Dict[ScanAxis, RealArray],
                   start: int, stop: int) -> ComplexArray:
    return steering_matrix(geometry, coords[ScanAxis.AZIMUTH][start:stop],
                           coords[ScanAxis.ELEVATION][start:stop],
                           coords[ScanAxis.RANGE][start:stop], ResponseMode.EXACT)


def scan(spec: ScanSpec, density: SpectralDensity, geometry: ArrayGeometry,
         workers: Optional[int] = None) -> SpectralField:
    """Evaluate ``a^T S a*`` over the grid with the exact steering vector."""
    spatial = [a for a in spec.axes if a.axis is not ScanAxis.SUBCARRIER]
    spectral = [a for a in spec.axes if a.axis is ScanAxis.SUBCARRIER]
    coords, n_points = _grid_points(spec)

    d_b, _ = field_boundaries(geometry)
    finite = coords[ScanAxis.RANGE][np.isfinite(coords[ScanAxis.RANGE])]
    if finite.size and finite.min() < d_b:
        log.warning("Scan reaches %.2f m, inside the reactive near field (< %.2f m)",
                    finite.min(), d_b)

    if spectral:
        subcarriers = spectral[0].values.astype(int)
    else:
        fixed_nu = spec.fixed_value(ScanAxis.SUBCARRIER)
        subcarriers = None if fixed_nu is None else np.array([int(fixed_nu)])
    if subcarriers is not None and (subcarriers.min() < 0 or subcarriers.max() >= density.n_fft):
        raise DomainError(f"subcarriers outside [0, {density.n_fft})")

    def evaluate_chunk(start: int) -> Dict[Component, RealArray]:
        stop = min(start + CHUNK_SIZE, n_points)
        per_nu = density.evaluate(_steering_rows(geometry, coords, start, stop))
        if subcarriers is None:
            return {c: v.sum(axis=1) for c, v in per_nu.items()}
        return {c: v[:, subcarriers] for c, v in per_nu.items()}

    chunks = ordered_map(evaluate_chunk, range(0, n_points, CHUNK_SIZE), workers)
    log.debug("Scanned %d points in %d chunks", n_points, len(chunks))

    values = {}
    for component in Component:
        stacked = np.concatenate([c[component] for c in chunks], axis=0)
        spatial_shape = tuple(a.values.size for a in spatial)
        if spectral:
            stacked = stacked.reshape(spatial_shape + (subcarriers.size,))
            # restore the declared axis order
            if spec.axes[0].axis is ScanAxis.SUBCARRIER and spatial:
                stacked = np.moveaxis(stacked, -1, 0)
        else:
            stacked = stacked.reshape(spatial_shape)
        values[component] = stacked
    return SpectralField(spec=spec, values=values)


def beam_patterns(spec: ScanSpec, beams: ComplexArray, geometry: ArrayGeometry,
                  workers: Optional[int] = None) -> RealArray:
    """Normalized power ``|a^T b|^2 / (M |b|^2)`` of each row of ``beams`` over the grid.

    Only spatial axes are evaluated; the result has the spatial grid shape
    plus one trailing axis per beam.
    """
    beams = np.atleast_2d(np.asarray(beams, dtype=complex))
    if beams.shape[1] != geometry.n_elements:
        raise DomainError(f"beams have {beams.shape[1]} weights for {geometry.n_elements} elements")
    norms = np.sum(np.abs(beams) ** 2, axis=1)
    if np.any(norms == 0):
        raise DomainError("every beam needs a non-zero weight")
    coords, n_points = _grid_points(spec)

    def evaluate_chunk(start: int) -> RealArray:
        rows = _steering_rows(geometry, coords, start, min(start + CHUNK_SIZE, n_points))
        return np.abs(rows @ beams.T) ** 2

    power = np.concatenate(ordered_map(evaluate_chunk, range(0, n_points, CHUNK_SIZE), workers))
    power = power / (geometry.n_elements * norms[np.newaxis, :])
    shape = tuple(a.values.size for a in spec.axes if a.axis is not ScanAxis.SUBCARRIER)
    return power.reshape(shape + (beams.shape[0],))


@dataclass(frozen=True)
class Peak:
    """A local maximum of a field: grid indices, coordinates and level."""
    index: Tuple[int, ...]
    coordinates: Tuple[float, ...]
    value_db: float
    prominence_db: float


def find_peaks(field: SpectralField, component: Component = Component.DISTORTION,
               min_prominence_db: float = 6.0,
               floor_db: Optional[float] = None) -> List[Peak]:
    """Local maxima above ``min_prominence_db``, strongest first.

    1-D fields use two neighbours and ``scipy.signal`` prominences; 2-D fields
    use the 8-neighbourhood, with prominence taken as the smaller of the row
    and column prominences through the maximum. Peaks below ``floor_db``
    (relative to the strongest value of ``component``) are dropped.

    Grid edges never report a peak, even where the field is still rising:
    a maximum on the boundary cannot be told apart from a slope that
    continues outside the window. Widen the scan to see such points.
    """
    levels = field.db(component)
    peaks: List[Peak] = []
    if levels.ndim == 1:
        indices, props = signal.find_peaks(levels, prominence=min_prominence_db)
        for i, prominence in zip(indices, props["prominences"]):
            peaks.append(Peak((int(i),), (float(field.axes[0].values[i]),),
                              float(levels[i]), float(prominence)))
    else:
        neighbourhood = ndimage.maximum_filter(levels, size=3, mode="nearest")
        candidates = np.argwhere((levels == neighbourhood) & (levels > levels.min()))
        rows, cols = levels.shape
        for i, j in candidates:
            # like the 1-D case, grid edges are not peaks
            if i in (0, rows - 1) or j in (0, cols - 1):
                continue
            prominence = min(_slice_prominence(levels[:, j], i),
                             _slice_prominence(levels[i, :], j))
            if prominence >= min_prominence_db:
                peaks.append(Peak((int(i), int(j)),
                                  (float(field.axes[0].values[i]), float(field.axes[1].values[j])),
                                  float(levels[i, j]), float(prominence)))
    if floor_db is not None and peaks:
        top = float(levels.max())
        peaks = [p for p in peaks if p.value_db >= top - floor_db]
    return sorted(peaks, key=lambda p: p.value_db, reverse=True)


def _slice_prominence(line: RealArray, index: int) -> float:
    with warnings.catch_warnings():
        # plateaus report zero prominence with a warning
        warnings.simplefilter("ignore", PeakPropertyWarning)
        prominences, _, _ = signal.peak_prominences(line, [index])
    return float(prominences[0])
