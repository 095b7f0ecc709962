"""Experiment drivers: turn a validated Scenario into results and artifacts."""

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..array.channel import user_steering
from ..array.geometry import ArrayGeometry
from ..config import Scenario
from ..exceptions import ValidationMismatchError
from ..link.evaluation import RateRecord, rate_sweep
from ..link.scheduler import ClusterLayout, SchedulingSetup, SubbandPlan, scheduling_experiment
from ..spatial.focal import (FocalPoint, predict, ris_focal_points, to_records, tuple_beam,
                             unique_points)
from ..spatial.radiation import (DEFAULT_ANGLE_STEP_DEG, DEFAULT_RANGE_STEP_M, AxisGrid,
                                 ExpectedDistortion, Peak, ScanSpec, SpectralField, beam_patterns,
                                 find_peaks, scan, spectral_density)
from ..tx.amplifier import (PaModel, analytic_evm, apply_pa, calibrate_evm, decompose,
                            measure_evm)
from ..tx.waveform import (OfdmConfig, PrecodedFrame, build_precoders, input_covariance,
                           normalize_power, ris_phase_shift, ris_precoders, simulate_ensemble,
                           subcarrier_factors)
from ..types import (ArrayMode, ComplexArray, Component, IndexTuple, JsonDict, PrecoderKind,
                     ScanAxis, SchedulePolicy, SpectralEstimator, SymbolKind)
from .tracer import RunTracer

log = logging.getLogger(__name__)

EVM_SAMPLES = 200_000


@dataclass
class RunContext:
    """Per-invocation settings layered over the scenario."""
    scenario: Scenario
    output_dir: Path
    tracer: RunTracer
    workers: int = 1
    grid_deg: Optional[float] = None

    @property
    def seed(self) -> int:
        return self.scenario.rng_seed


# --------------------------------------------------------------------------- predict

def focal_prediction(scenario: Scenario) -> List[FocalPoint]:
    """Every tuple's focal point for the scenario's users (reflected frame for a RIS)."""
    points = scenario.user_points()
    order = scenario.scan.order
    if scenario.mode == ArrayMode.RIS.value:
        return ris_focal_points(points, scenario.ris.to_ris(), order)
    return predict(points, order, geometry=scenario.geometry.to_geometry())


def run_predict(ctx: RunContext) -> List[FocalPoint]:
    points = focal_prediction(ctx.scenario)
    _write_json(ctx, "focal_points.json", to_records(points))
    if ctx.scenario.scan.order == 1:
        unique = unique_points(points)
        _write_json(ctx, "unique_focal_points.json", to_records(unique.all))
        log.info("Predicted %d unique focal points (P1=%d, P2=%d, P3=%d)",
                 len(unique), len(unique.p1), len(unique.p2), len(unique.p3))
    return points


# --------------------------------------------------------------------------- radiate

def scan_spec(scenario: Scenario, grid_deg: Optional[float] = None) -> ScanSpec:
    """Scan grid from the scenario; ``grid_deg`` overrides angular steps."""
    axes = []
    for axis in scenario.scan.axes:
        kind = ScanAxis(axis.axis)
        if kind is ScanAxis.RANGE:
            axes.append(AxisGrid.ranges(axis.start, axis.stop,
                                        axis.step or DEFAULT_RANGE_STEP_M))
        elif kind is ScanAxis.SUBCARRIER:
            values = np.arange(int(axis.start), int(axis.stop) + 1, int(axis.step or 1))
            axes.append(AxisGrid(kind, values.astype(float)))
        else:
            step = grid_deg or axis.step or DEFAULT_ANGLE_STEP_DEG
            axes.append(AxisGrid.angles_deg(kind, axis.start, axis.stop, step))

    fixed: Dict[ScanAxis, float] = {}
    for key, value in scenario.scan.fixed.items():
        if key == "azimuth_deg":
            fixed[ScanAxis.AZIMUTH] = math.radians(value)
        elif key == "elevation_deg":
            fixed[ScanAxis.ELEVATION] = math.radians(value)
        elif key == "range_m":
            fixed[ScanAxis.RANGE] = math.inf if value is None else float(value)
        elif key == "subcarrier" and value is not None:
            fixed[ScanAxis.SUBCARRIER] = int(value)
    return ScanSpec(axes=tuple(axes), fixed=fixed)


@dataclass
class TransmitSetup:
    """What the array radiates: precoders, scaling and how frames are synthesized."""
    geometry: ArrayGeometry
    ofdm: OfdmConfig
    precoders: ComplexArray
    alpha: float
    kind: Optional[PrecoderKind]
    synthesizer: Optional[Callable[[ComplexArray], PrecodedFrame]] = None


def transmit_setup(scenario: Scenario) -> TransmitSetup:
    """Precoders for an ELAA, or the RIS reflection driven by ``ris_phase_shift``."""
    geometry = scenario.geometry.to_geometry()
    users = scenario.user_params()
    ofdm = scenario.ofdm_config()
    mask = ofdm.mask(len(users))

    if scenario.mode != ArrayMode.RIS.value:
        kind = PrecoderKind(scenario.ofdm.precoder)
        precoders = build_precoders(users, geometry, ofdm, kind)
        alpha = normalize_power(precoders, _power_budget(scenario, ofdm), mask)
        return TransmitSetup(geometry, ofdm, precoders, alpha, kind)

    config = scenario.ris.to_ris()
    impinging = user_steering(geometry, [u.position for u in users])
    factors = subcarrier_factors(users, ofdm.occupied)
    # incident strength chosen so the RIS amplifiers run at the configured input power
    incident = normalize_power(ris_precoders(config, geometry, impinging, factors),
                               _power_budget(scenario, ofdm), mask)
    impinging = impinging * incident

    def reflect(symbols: ComplexArray) -> PrecodedFrame:
        return ris_phase_shift(config, geometry, impinging, symbols, ofdm, factors)

    return TransmitSetup(geometry, ofdm, ris_precoders(config, geometry, impinging, factors),
                         1.0, None, synthesizer=reflect)


def user_beams(setup: TransmitSetup) -> ComplexArray:
    """M x K element weights of each user on its first active subcarrier."""
    mask = setup.ofdm.mask(setup.precoders.shape[2])
    first = np.argmax(mask > 0, axis=0)
    return setup.precoders[first, :, np.arange(mask.shape[1])].T


def radiation_field(scenario: Scenario, workers: int = 1,
                    grid_deg: Optional[float] = None,
                    setup: Optional[TransmitSetup] = None) -> SpectralField:
    """Simulate the amplified array signal and scan its directional PSD."""
    setup = setup or transmit_setup(scenario)
    ofdm = setup.ofdm
    model = scenario.pa_model()
    section = scenario.ofdm
    estimator = SpectralEstimator(scenario.scan.estimator)

    frames = simulate_ensemble(ofdm, setup.precoders, setup.alpha, section.frames,
                               scenario.rng_seed, symbol_kind=SymbolKind(section.symbols),
                               kind=setup.kind, transform=lambda f: apply_pa(model, f),
                               workers=workers, synthesizer=setup.synthesizer)
    if estimator is SpectralEstimator.COVARIANCE:
        lags = tuple(range(ofdm.n_fft))
    else:
        lags = (0,)
    c_xx = None
    if model.is_third_order_memoryless:
        c_xx = input_covariance(setup.precoders, ofdm, setup.alpha, lags)
    decomposition = decompose(model, frames, lags=lags, min_frames=section.min_frames, c_xx=c_xx)
    density = spectral_density(decomposition, ofdm, frames, estimator)
    log.info("Spectral density from %d frames (%s), max |corr(d, x)| = %.2e",
             len(frames), estimator.value, decomposition.cross_correlation)
    return scan(scan_spec(scenario, grid_deg), density, setup.geometry, workers)


def _power_budget(scenario: Scenario, ofdm) -> float:
    """P such that every PA sees ``input_power`` on average."""
    n_ant = scenario.geometry.m_y * scenario.geometry.m_z
    return scenario.ofdm.input_power * ofdm.n_fft * n_ant / max(ofdm.n_occupied, 1)


def run_radiate(ctx: RunContext) -> SpectralField:
    result = radiation_field(ctx.scenario, ctx.workers, ctx.grid_deg)
    out = ctx.scenario.output
    absolute = None
    if out.psd_reference == "absolute":
        absolute = (out.transmit_power_w, out.bandwidth_hz)
    csv_path, sidecar = result.to_csv(ctx.output_dir / "radiation.csv", seed=ctx.seed,
                                      metadata={"scenario": ctx.scenario.name},
                                      absolute=absolute)
    ctx.tracer.add_artifact(csv_path)
    ctx.tracer.add_artifact(sidecar)
    peaks = find_peaks(result, Component.DISTORTION, ctx.scenario.scan.min_prominence_db,
                       ctx.scenario.scan.floor_db)
    log.info("Distortion field has %d peaks above %.1f dB prominence",
             len(peaks), ctx.scenario.scan.min_prominence_db)
    return result


# --------------------------------------------------------------------------- rates

def _models_for(levels: Sequence[float]) -> Dict[float, PaModel]:
    return {float(evm): calibrate_evm(float(evm)) for evm in levels}


def run_rates(ctx: RunContext) -> List[RateRecord]:
    scenario = ctx.scenario
    records = rate_sweep(scenario.user_params(), scenario.geometry.to_geometry(),
                         scenario.ofdm_config(), _models_for(scenario.link.evm_levels),
                         [PrecoderKind(k) for k in scenario.link.precoders],
                         scenario.link.snr_db, scenario.ofdm.input_power,
                         workers=ctx.workers, seed=scenario.rng_seed,
                         n_frames=scenario.ofdm.frames)
    _write_rate_csv(ctx, "rates.csv", "precoder", records)
    return records


def run_schedule(ctx: RunContext) -> List[RateRecord]:
    scenario = ctx.scenario
    section = scenario.schedule
    setup = SchedulingSetup(
        geometry=scenario.geometry.to_geometry(),
        layout=ClusterLayout(tuple(section.cluster_azimuths_deg), section.cluster_elevation_deg,
                             section.users_per_cluster, section.jitter_deg),
        plan=SubbandPlan(scenario.ofdm.n_fft, section.block, section.offset,
                         section.n_coscheduled),
        policies=tuple(SchedulePolicy(p) for p in section.policies),
        snr_db=tuple(section.snr_db),
        realizations=section.realizations,
        kind=PrecoderKind(section.precoder),
        input_power=scenario.ofdm.input_power,
        n_frames=scenario.ofdm.frames,
    )
    records = scheduling_experiment(setup, _models_for(section.evm_levels), scenario.rng_seed,
                                    ctx.workers)
    _write_rate_csv(ctx, "schedule.csv", "policy", records)
    return records


def _write_rate_csv(ctx: RunContext, name: str, label: str, records: Sequence[RateRecord]) -> None:
    path = ctx.output_dir / name
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow([label, "evm", "snr_db", "sum_rate", "stderr"])
        for r in records:
            writer.writerow([r.label, f"{r.evm:g}", f"{r.snr_db:g}", f"{r.sum_rate:.6f}",
                             f"{r.stderr:.6f}"])
    ctx.tracer.add_artifact(path)


# --------------------------------------------------------------------------- calibrate

def run_calibrate(ctx: RunContext) -> PaModel:
    scenario = ctx.scenario
    model = scenario.pa_model()
    record = model.to_dict()
    record["name"] = model.name
    record["input_power"] = scenario.ofdm.input_power
    if scenario.pa.target_evm is not None:
        record["target_evm"] = scenario.pa.target_evm
    if model.is_third_order_memoryless:
        record["analytic_evm"] = analytic_evm(model, scenario.ofdm.input_power)
    record["measured_evm"] = measure_evm(model, EVM_SAMPLES, scenario.rng_seed,
                                         scenario.ofdm.input_power)
    record["evm_convention"] = "amplitude: sqrt(E|d|^2 / E|Gx|^2)"
    _write_json(ctx, "pa_model.json", record)
    log.info("PA beta1=%s beta3=%s, measured EVM %.4f", model.beta1, model.beta3,
             record["measured_evm"])
    return model


# --------------------------------------------------------------------------- validate

# An expected-field peak must clear the configured prominence and floor by
# this much before a prediction that it fails to show counts as resolvable.
RESOLVE_MARGIN_DB = 3.0
# Local maxima of the expected field this far below the floor still explain
# a simulated peak.
MAXIMA_FLOOR_MARGIN_DB = 6.0

Position = Dict[ScanAxis, float]


@dataclass
class ExpectedStructure:
    """Noise-free distortion structure the simulated field should show.

    ``locations`` holds, per index tuple, where that tuple's exact-array beam
    peaks on the spatial grid. ``resolved`` are the expected-field peaks
    that stand out with margin and ``maxima`` every local maximum of it.
    """
    axes: Tuple[ScanAxis, ...]
    locations: Dict[IndexTuple, Position] = field(default_factory=dict)
    resolved: List[Position] = field(default_factory=list)
    maxima: List[Position] = field(default_factory=list)


def _peak_record(peak: Peak) -> JsonDict:
    return {"coordinates": list(peak.coordinates), "value_db": peak.value_db,
            "prominence_db": peak.prominence_db}


def _peak_position(peak: Peak, spec: ScanSpec) -> Position:
    return {grid.axis: peak.coordinates[i] for i, grid in enumerate(spec.axes)
            if grid.axis is not ScanAxis.SUBCARRIER}


def expected_structure(scenario: Scenario, setup: TransmitSetup, spec: ScanSpec,
                       predictions: Sequence[FocalPoint],
                       workers: int = 1) -> Optional[ExpectedStructure]:
    """Exact beam location of every prediction and the peaks of the expected field.

    The expected field is the Gaussian-input distortion covariance
    ``C^(p+1) * conj(C)^p`` (elementwise) of the zero-lag input covariance,
    scanned without a subcarrier axis. ``None`` when the scan has no
    spatial axis.
    """
    spatial = spec.spatial()
    if spatial is None:
        return None
    section = scenario.scan
    c_0 = input_covariance(setup.precoders, setup.ofdm, setup.alpha, (0,)).zero_lag
    expected = scan(spatial, ExpectedDistortion(c_0, section.order), setup.geometry, workers)
    resolve_floor = None
    if section.floor_db is not None:
        resolve_floor = max(section.floor_db - RESOLVE_MARGIN_DB, 0.0)
    resolved = find_peaks(expected, Component.DISTORTION,
                          section.min_prominence_db + RESOLVE_MARGIN_DB, resolve_floor)
    floor = None if section.floor_db is None else section.floor_db + MAXIMA_FLOOR_MARGIN_DB
    maxima = find_peaks(expected, Component.DISTORTION, 0.0, floor)

    structure = ExpectedStructure(axes=tuple(a.axis for a in spatial.axes),
                                  resolved=[_peak_position(p, spatial) for p in resolved],
                                  maxima=[_peak_position(p, spatial) for p in maxima])
    physical = [p for p in predictions if p.physical]
    if physical:
        columns = user_beams(setup)
        beams = np.array([tuple_beam(columns, p.index_tuple) for p in physical])
        patterns = beam_patterns(spatial, beams, setup.geometry, workers)
        for j, point in enumerate(physical):
            index = np.unravel_index(int(np.argmax(patterns[..., j])), spatial.shape)
            structure.locations[point.index_tuple] = {
                grid.axis: float(grid.values[i]) for grid, i in zip(spatial.axes, index)}
    log.debug("Expected field: %d resolved peaks, %d local maxima",
              len(structure.resolved), len(structure.maxima))
    return structure


@dataclass
class ValidationReport:
    """Matches between predicted focal points and simulated distortion peaks.

    Predictions the noise-free field cannot separate from a neighbour are
    listed as unresolved and do not fail the run. ``field_peaks`` are
    sidelobes and merged lobes that only the expected field explains.
    """
    matched_predictions: List[FocalPoint] = field(default_factory=list)
    unmatched_predictions: List[FocalPoint] = field(default_factory=list)
    unresolved_predictions: List[FocalPoint] = field(default_factory=list)
    matched_peaks: List[Peak] = field(default_factory=list)
    unmatched_peaks: List[Peak] = field(default_factory=list)
    field_peaks: List[Peak] = field(default_factory=list)
    offsets: List[JsonDict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.unmatched_predictions and not self.unmatched_peaks

    def to_dict(self) -> Dict:
        return {
            "passed": self.passed,
            "matched_predictions": len(self.matched_predictions),
            "unmatched_predictions": to_records(self.unmatched_predictions),
            "unresolved_predictions": to_records(self.unresolved_predictions),
            "matched_peaks": len(self.matched_peaks),
            "unmatched_peaks": [_peak_record(p) for p in self.unmatched_peaks],
            "expected_field_peaks": [_peak_record(p) for p in self.field_peaks],
            "closed_form_offsets": self.offsets,
        }


def _coordinate(point: FocalPoint, axis: ScanAxis) -> Optional[float]:
    if axis is ScanAxis.AZIMUTH:
        return point.azimuth
    if axis is ScanAxis.ELEVATION:
        return point.elevation
    if axis is ScanAxis.RANGE:
        return point.range
    return None


def _display(axis: ScanAxis, value: float) -> float:
    return value if axis is ScanAxis.RANGE else math.degrees(value)


def compare_peaks(predictions: Sequence[FocalPoint], peaks: Sequence[Peak], spec: ScanSpec,
                  angle_tolerance: float, range_tolerance: float,
                  expected: Optional[ExpectedStructure] = None) -> ValidationReport:
    """Two-way match of predictions and peaks on the scanned axes.

    Only predictions that fall inside the scanned window (and on the fixed
    slice) count; angles match within ``angle_tolerance`` radians and ranges
    within ``range_tolerance`` relative.

    With ``expected`` a prediction also matches at its exact-array beam
    location; one whose location shows no resolved expected peak is
    unresolved rather than unmatched. A peak is explained by any prediction
    target or by a local maximum of the expected field.
    """
    axes = [a.axis for a in spec.axes if a.axis is not ScanAxis.SUBCARRIER]

    def close(axis: ScanAxis, reference: float, observed: float) -> bool:
        if axis is ScanAxis.RANGE:
            return abs(reference - observed) <= range_tolerance * abs(reference)
        return abs(reference - observed) <= angle_tolerance

    def near(reference: Position, observed: Position) -> bool:
        return bool(axes) and all(close(a, reference[a], observed[a]) for a in axes)

    visible = []
    for point in predictions:
        if not point.physical:
            continue
        inside = True
        for grid in spec.axes:
            if grid.axis is ScanAxis.SUBCARRIER:
                continue
            value = _coordinate(point, grid.axis)
            if value is None or not grid.values.min() - 1e-12 <= value <= grid.values.max() + 1e-12:
                inside = False
        for axis in (ScanAxis.AZIMUTH, ScanAxis.ELEVATION):
            if axis not in axes:
                if not close(axis, _coordinate(point, axis), spec.fixed_value(axis)):
                    inside = False
        if inside:
            visible.append(point)

    def exact_location(point: FocalPoint) -> Optional[Position]:
        if expected is None:
            return None
        return expected.locations.get(point.index_tuple)

    def targets(point: FocalPoint) -> List[Position]:
        found = [{a: _coordinate(point, a) for a in axes}]
        exact = exact_location(point)
        if exact is not None:
            found.append(exact)
            found.extend(r for r in expected.resolved if near(exact, r))
        return found

    positions = [_peak_position(p, spec) for p in peaks]
    report = ValidationReport()
    for point in visible:
        exact = exact_location(point)
        if any(near(t, p) for t in targets(point) for p in positions):
            report.matched_predictions.append(point)
        elif exact is not None and not any(near(exact, r) for r in expected.resolved):
            report.unresolved_predictions.append(point)
        else:
            report.unmatched_predictions.append(point)
        if exact is not None:
            report.offsets.append({
                "tuple": list(point.index_tuple),
                "closed_form": {a.value: _display(a, _coordinate(point, a)) for a in axes},
                "exact_beam": {a.value: _display(a, exact[a]) for a in axes},
            })

    every_target = [t for point in visible for t in targets(point)]
    maxima = expected.maxima if expected is not None else []
    for peak, position in zip(peaks, positions):
        if any(near(t, position) for t in every_target):
            report.matched_peaks.append(peak)
        elif any(near(m, position) for m in maxima):
            report.matched_peaks.append(peak)
            report.field_peaks.append(peak)
        else:
            report.unmatched_peaks.append(peak)
    return report


def run_validate(ctx: RunContext) -> ValidationReport:
    scenario = ctx.scenario
    section = scenario.scan
    predictions = focal_prediction(scenario)
    if section.order == 1:
        predictions = unique_points(predictions).all
    setup = transmit_setup(scenario)
    result = radiation_field(scenario, ctx.workers, ctx.grid_deg, setup=setup)
    peaks = find_peaks(result, Component.DISTORTION, section.min_prominence_db, section.floor_db)
    expected = expected_structure(scenario, setup, result.spec, predictions, ctx.workers)
    report = compare_peaks(predictions, peaks, result.spec,
                           math.radians(section.angle_tolerance_deg), section.range_tolerance,
                           expected=expected)
    _write_json(ctx, "validation.json", report.to_dict())
    log.info("Validation: %d/%d predictions matched (%d unresolved), %d/%d peaks explained",
             len(report.matched_predictions),
             len(report.matched_predictions) + len(report.unmatched_predictions),
             len(report.unresolved_predictions), len(report.matched_peaks), len(peaks))
    if not report.passed:
        raise ValidationMismatchError(
            f"{len(report.unmatched_predictions)} prediction(s) without a peak and "
            f"{len(report.unmatched_peaks)} peak(s) without a prediction")
    return report


# --------------------------------------------------------------------------- helpers

def _write_json(ctx: RunContext, name: str, data) -> Path:
    path = ctx.output_dir / name
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(data, f, indent=2, sort_keys=True)
    ctx.tracer.add_artifact(path)
    return path


EXPERIMENTS = {
    "predict": run_predict,
    "radiate": run_radiate,
    "rates": run_rates,
    "schedule": run_schedule,
    "calibrate": run_calibrate,
    "validate": run_validate,
}
