"""Tests for directional PSD scans and peak extraction."""

import json
import math
import tempfile
import shutil
from pathlib import Path

import numpy as np
import pytest

from nfd.array.channel import SphericalPoint, UserChannelParams
from nfd.array.geometry import ArrayGeometry
from nfd.exceptions import DomainError, EnsembleError
from nfd.spatial.radiation import (AxisGrid, CovarianceSpectrum, ExpectedDistortion,
                                   PeriodogramSpectrum, ScanSpec, SpectralField, beam_patterns,
                                   find_peaks, scan, spectral_density)
from nfd.tx.amplifier import PaModel, analytic_decomposition, apply_pa, decompose, preset
from nfd.tx.waveform import (CovarianceSequence, OfdmConfig, build_precoders, input_covariance,
                             normalize_power, simulate_ensemble, subband_allocation)
from nfd.types import Component, ScanAxis, SpectralEstimator


def _azimuth_spec(step=1.0, **fixed):
    return ScanSpec(axes=(AxisGrid.angles_deg(ScanAxis.AZIMUTH, -90.0, 90.0, step),),
                    fixed=fixed)


def _field_1d(values_db, axis_values=None):
    linear = 10.0 ** (np.asarray(values_db, dtype=float) / 10.0)
    axis_values = np.arange(linear.size, dtype=float) if axis_values is None else axis_values
    spec = ScanSpec(axes=(AxisGrid(ScanAxis.RANGE, axis_values),))
    return SpectralField(spec=spec, values={Component.LINEAR: linear, Component.DISTORTION: linear,
                                            Component.TOTAL: 2 * linear})


class TestSpectralDensity:
    """Test cases for the spectral estimators."""

    def setup_method(self):
        self.geometry = ArrayGeometry.half_wavelength(4, 4, 0.1)

    def test_isotropic_scan_is_flat(self):
        c = 0.3
        c_xx = CovarianceSequence((0,), (c * np.eye(16))[np.newaxis].astype(complex))
        density = CovarianceSpectrum(analytic_decomposition(PaModel.linear(), c_xx), n_fft=8)
        spec = ScanSpec(axes=(AxisGrid.angles_deg(ScanAxis.AZIMUTH, -80.0, 80.0, 5.0),),
                        fixed={ScanAxis.SUBCARRIER: 3})
        result = scan(spec, density, self.geometry)
        assert np.allclose(result.values[Component.LINEAR], 16 * c)
        assert np.allclose(result.values[Component.DISTORTION], 0.0)
        assert np.allclose(result.values[Component.TOTAL], 16 * c)

    def test_covariance_matrices(self):
        c_xx = CovarianceSequence((0,), np.eye(2)[np.newaxis].astype(complex))
        density = CovarianceSpectrum(analytic_decomposition(PaModel.linear(), c_xx), n_fft=4)
        matrices = density.matrices(Component.LINEAR)
        assert matrices.shape == (4, 2, 2)
        assert np.allclose(matrices, np.eye(2))

    def test_periodogram_needs_frames(self):
        c_xx = CovarianceSequence((0,), np.eye(2)[np.newaxis].astype(complex))
        decomposition = analytic_decomposition(PaModel.linear(), c_xx)
        with pytest.raises(EnsembleError):
            spectral_density(decomposition, OfdmConfig.shared(4), frames=[])

    def test_periodogram_shape_check(self):
        with pytest.raises(DomainError):
            PeriodogramSpectrum(np.zeros((2, 3, 4)), np.zeros((2, 3, 5)))

    def test_distortion_leaks_outside_allocation(self):
        """Sub-band users leave idle subcarriers free of signal but not of distortion."""
        ofdm = subband_allocation(32, 8, 3, offset=4)
        users = [UserChannelParams(SphericalPoint.from_degrees(a, 0.0)) for a in (-20.0, 5.0, 30.0)]
        precoders = build_precoders(users, self.geometry, ofdm)
        budget = self.geometry.n_elements * ofdm.n_fft / ofdm.n_occupied
        alpha = normalize_power(precoders, budget, ofdm.mask(3))
        c_xx = input_covariance(precoders, ofdm, alpha, range(ofdm.n_fft))
        density = CovarianceSpectrum(analytic_decomposition(preset("evm3"), c_xx), ofdm.n_fft)
        rows = np.stack([np.exp(1j * np.zeros(16))])
        linear = density.quadratic_form(rows, Component.LINEAR)[0]
        distortion = density.quadratic_form(rows, Component.DISTORTION)[0]
        idle = [nu for nu in range(32) if nu not in ofdm.occupied]
        assert np.all(linear[idle] < 1e-9 * linear.max())
        assert np.all(distortion[idle] > 1e-8 * distortion.max())

    @pytest.mark.slow
    def test_estimators_agree(self):
        ofdm = OfdmConfig.shared(16)
        users = [UserChannelParams(SphericalPoint.from_degrees(a, 0.0)) for a in (-25.0, 20.0)]
        precoders = build_precoders(users, self.geometry, ofdm)
        alpha = normalize_power(precoders, self.geometry.n_elements)
        model = preset("evm3")
        frames = simulate_ensemble(ofdm, precoders, alpha, 400, seed=9,
                                   transform=lambda f: apply_pa(model, f))
        c_xx = input_covariance(precoders, ofdm, alpha, range(16))
        decomposition = decompose(model, frames, lags=range(16), c_xx=c_xx)
        spec = _azimuth_spec(step=5.0)
        analytic = scan(spec, spectral_density(decomposition, ofdm, frames,
                                               SpectralEstimator.COVARIANCE), self.geometry)
        estimated = scan(spec, spectral_density(decomposition, ofdm, frames,
                                                SpectralEstimator.PERIODOGRAM), self.geometry)
        for component, tolerance in ((Component.LINEAR, 0.1), (Component.DISTORTION, 0.2)):
            a = analytic.values[component]
            e = estimated.values[component]
            strong = a > 0.1 * a.max()
            assert np.allclose(e[strong], a[strong], rtol=tolerance)


class TestScan:
    """Test cases for grid scans."""

    def setup_method(self):
        self.geometry = ArrayGeometry(m_y=16, m_z=1, d_y=0.05, d_z=0.05, wavelength=0.1)
        self.ofdm = OfdmConfig.shared(8)
        users = [UserChannelParams(SphericalPoint.from_degrees(a, 0.0)) for a in (-30.0, 30.0)]
        precoders = build_precoders(users, self.geometry, self.ofdm)
        alpha = normalize_power(precoders, self.geometry.n_elements)
        c_xx = input_covariance(precoders, self.ofdm, alpha, range(8))
        self.density = CovarianceSpectrum(analytic_decomposition(preset("evm3"), c_xx), 8)

    def test_mrt_beams_point_at_users(self):
        result = scan(_azimuth_spec(step=0.5), self.density, self.geometry)
        peaks = find_peaks(result, Component.LINEAR, min_prominence_db=3.0)
        top = sorted(math.degrees(p.coordinates[0]) for p in peaks[:2])
        assert top == pytest.approx([-30.0, 30.0], abs=0.5)

    def test_workers_do_not_change_result(self):
        spec = _azimuth_spec(step=0.5)
        serial = scan(spec, self.density, self.geometry)
        threaded = scan(spec, self.density, self.geometry, workers=4)
        for component in Component:
            assert np.array_equal(serial.values[component], threaded.values[component])

    def test_subcarrier_axis_order(self):
        spec = ScanSpec(axes=(AxisGrid.subcarriers(8),
                              AxisGrid.angles_deg(ScanAxis.AZIMUTH, -60.0, 60.0, 10.0)))
        result = scan(spec, self.density, self.geometry)
        assert result.values[Component.LINEAR].shape == (8, 13)
        assert spec.shape == (8, 13)
        band = scan(ScanSpec(axes=(AxisGrid.angles_deg(ScanAxis.AZIMUTH, -60.0, 60.0, 10.0),)),
                    self.density, self.geometry)
        assert np.allclose(result.values[Component.LINEAR].sum(axis=0),
                           band.values[Component.LINEAR])

    def test_range_axis(self):
        spec = ScanSpec(axes=(AxisGrid.ranges(2.0, 10.0, 0.5),),
                        fixed={ScanAxis.AZIMUTH: math.radians(30.0)})
        result = scan(spec, self.density, self.geometry)
        assert result.values[Component.DISTORTION].shape == (17,)

    def test_subcarrier_out_of_band(self):
        spec = ScanSpec(axes=(AxisGrid.angles_deg(ScanAxis.AZIMUTH, 0.0, 10.0, 5.0),),
                        fixed={ScanAxis.SUBCARRIER: 8})
        with pytest.raises(DomainError):
            scan(spec, self.density, self.geometry)

    def test_invalid_specs(self):
        grid = AxisGrid.angles_deg(ScanAxis.AZIMUTH, 0.0, 10.0, 5.0)
        with pytest.raises(DomainError):
            ScanSpec(axes=(grid, grid))
        with pytest.raises(DomainError):
            ScanSpec(axes=())

    def test_fixed_defaults(self):
        spec = _azimuth_spec()
        assert spec.fixed_value(ScanAxis.ELEVATION) == 0.0
        assert spec.fixed_value(ScanAxis.RANGE) is None
        assert spec.fixed_value(ScanAxis.SUBCARRIER) is None


class TestSpectralField:
    """Test cases for dB conversion and CSV output."""

    def setup_method(self):
        self.temp_dir = tempfile.mkdtemp()

    def teardown_method(self):
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def test_db_relative_to_linear_peak(self):
        field = _field_1d([0.0, 10.0, 3.0])
        assert field.db(Component.LINEAR).max() == pytest.approx(0.0)
        assert field.db(Component.TOTAL).max() == pytest.approx(10 * math.log10(2))

    def test_absolute_db(self):
        field = _field_1d([0.0, 0.0])
        with pytest.raises(DomainError):
            field.absolute_db(Component.LINEAR, 0.0, 1e6)
        levels = field.absolute_db(Component.TOTAL, 1.0, 1.0)
        # two equal cells share 1 W = 30 dBm
        assert levels == pytest.approx([30.0 - 10 * math.log10(2)] * 2)

    def test_csv_and_sidecar(self):
        field = _field_1d([0.0, 5.0, 1.0], axis_values=np.array([1.0, 2.0, 3.0]))
        path, sidecar = field.to_csv(Path(self.temp_dir) / "out" / "radiation.csv", seed=42,
                                     metadata={"scenario": "unit"})
        lines = path.read_text().splitlines()
        assert lines[0] == "axis1,axis2,component,psd_db"
        assert len(lines) == 1 + 3 * 3
        assert lines[1].startswith("1,,total,")
        description = json.loads(sidecar.read_text())
        assert description["seed"] == 42
        assert description["scenario"] == "unit"
        assert description["axes"][0]["axis"] == "range"

    def test_csv_is_deterministic(self):
        field = _field_1d([0.0, 5.0, 1.0])
        first, _ = field.to_csv(Path(self.temp_dir) / "a.csv", seed=1)
        second, _ = field.to_csv(Path(self.temp_dir) / "b.csv", seed=1)
        assert first.read_bytes() == second.read_bytes()


class TestFindPeaks:
    """Test cases for local-maximum extraction."""

    def test_one_dimensional(self):
        field = _field_1d([0, 1, 12, 1, 0, 0, 8, 0, 0, 2, 3, 2])
        peaks = find_peaks(field, Component.DISTORTION, min_prominence_db=6.0)
        assert [p.index for p in peaks] == [(2,), (6,)]
        assert peaks[0].prominence_db == pytest.approx(12.0)

    def test_floor(self):
        field = _field_1d([0, 30, 0, 0, 8, 0])
        assert len(find_peaks(field, min_prominence_db=3.0)) == 2
        assert len(find_peaks(field, min_prominence_db=3.0, floor_db=20.0)) == 1

    def test_two_dimensional(self):
        az = np.arange(21, dtype=float)
        el = np.arange(15, dtype=float)
        a, e = np.meshgrid(az, el, indexing="ij")
        levels = (20.0 * np.exp(-((a - 5) ** 2 + (e - 7) ** 2) / 4.0)
                  + 12.0 * np.exp(-((a - 15) ** 2 + (e - 4) ** 2) / 4.0))
        linear = 10.0 ** (levels / 10.0)
        spec = ScanSpec(axes=(AxisGrid(ScanAxis.AZIMUTH, az), AxisGrid(ScanAxis.ELEVATION, el)))
        field = SpectralField(spec, {Component.LINEAR: linear, Component.DISTORTION: linear,
                                     Component.TOTAL: linear})
        peaks = find_peaks(field, min_prominence_db=6.0)
        assert [p.index for p in peaks] == [(5, 7), (15, 4)]
        assert peaks[1].coordinates == (15.0, 4.0)

    def test_edges_are_not_peaks(self):
        field = _field_1d([20, 0, 0, 0, 20])
        assert find_peaks(field, min_prominence_db=1.0) == []

    def test_rising_edge_is_not_a_peak(self):
        field = _field_1d([0, 2, 4, 6, 8, 10, 12])
        assert find_peaks(field, min_prominence_db=1.0) == []
        widened = _field_1d([0, 2, 4, 6, 8, 10, 12, 4, 0])
        assert [p.index for p in find_peaks(widened, min_prominence_db=1.0)] == [(6,)]

    def test_two_dimensional_edges(self):
        az = np.arange(9, dtype=float)
        el = np.arange(7, dtype=float)
        a, e = np.meshgrid(az, el, indexing="ij")
        levels = 20.0 * np.exp(-((a - 0) ** 2 + (e - 3) ** 2) / 4.0)
        linear = 10.0 ** (levels / 10.0)
        spec = ScanSpec(axes=(AxisGrid(ScanAxis.AZIMUTH, az), AxisGrid(ScanAxis.ELEVATION, el)))
        field = SpectralField(spec, {Component.LINEAR: linear, Component.DISTORTION: linear,
                                     Component.TOTAL: linear})
        assert find_peaks(field, min_prominence_db=1.0) == []


class TestExpectedDistortion:
    """Test cases for the expected distortion field and per-beam patterns."""

    def setup_method(self):
        self.geometry = ArrayGeometry(m_y=16, m_z=1, d_y=0.05, d_z=0.05, wavelength=0.1)
        self.users = [SphericalPoint.from_degrees(a, 0.0) for a in (-20.0, 10.0)]
        ofdm = OfdmConfig.shared(8)
        self.precoders = build_precoders([UserChannelParams(u) for u in self.users],
                                         self.geometry, ofdm)
        self.alpha = normalize_power(self.precoders, self.geometry.n_elements)
        self.c_xx = input_covariance(self.precoders, ofdm, self.alpha, range(8))

    def test_matches_analytic_distortion(self):
        """Lag-zero distortion of a third-order PA is |C|^2 C up to a constant."""
        spec = _azimuth_spec(step=2.0)
        expected = scan(spec, ExpectedDistortion(self.c_xx.zero_lag), self.geometry)
        analytic = scan(spec, CovarianceSpectrum(analytic_decomposition(preset("evm3"), self.c_xx),
                                                 8), self.geometry)
        a = expected.values[Component.DISTORTION]
        b = analytic.values[Component.DISTORTION]
        assert np.allclose(a / a.max(), b / b.max(), atol=1e-6)
        assert np.allclose(expected.values[Component.LINEAR] / expected.reference(),
                           analytic.values[Component.LINEAR] / analytic.reference(), atol=1e-6)

    def test_rejects_non_square(self):
        with pytest.raises(DomainError):
            ExpectedDistortion(np.zeros((3, 4)))
        with pytest.raises(DomainError):
            ExpectedDistortion(np.eye(3), order=0)

    def test_beam_patterns(self):
        spec = _azimuth_spec(step=0.5)
        beams = np.conj(self.precoders[0].T)
        patterns = beam_patterns(spec, np.conj(beams), self.geometry, workers=2)
        assert patterns.shape == (361, 2)
        assert patterns.max() == pytest.approx(1.0, rel=1e-9)
        peaks = np.degrees(spec.axes[0].values[np.argmax(patterns, axis=0)])
        assert peaks == pytest.approx([-20.0, 10.0], abs=0.5)

    def test_beam_patterns_check_size(self):
        with pytest.raises(DomainError):
            beam_patterns(_azimuth_spec(), np.ones((1, 3)), self.geometry)

    def test_spatial_spec(self):
        spec = ScanSpec(axes=(AxisGrid.subcarriers(8),
                              AxisGrid.angles_deg(ScanAxis.AZIMUTH, -10.0, 10.0, 5.0)),
                        fixed={ScanAxis.SUBCARRIER: 2, ScanAxis.RANGE: 20.0})
        spatial = spec.spatial()
        assert [a.axis for a in spatial.axes] == [ScanAxis.AZIMUTH]
        assert spatial.fixed == {ScanAxis.RANGE: 20.0}
        assert ScanSpec(axes=(AxisGrid.subcarriers(8),)).spatial() is None
