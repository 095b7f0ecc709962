"""Tests for array geometry and the LoS channel."""

import math

import numpy as np
import pytest

from nfd.array.channel import (SphericalPoint, UserChannelParams, array_response,
                               exact_relative_phase, fresnel_error, fresnel_relative_phase,
                               los_channel, steering_matrix, user_steering)
from nfd.array.geometry import (ArrayGeometry, aperture, element_position, field_boundaries,
                                fresnel_validity_radius)
from nfd.exceptions import DomainError
from nfd.types import ResponseMode


class TestArrayGeometry:
    """Test cases for the UPA layout."""

    def setup_method(self):
        self.geometry = ArrayGeometry(m_y=20, m_z=20, d_y=0.05, d_z=0.05, wavelength=0.1)

    def test_element_positions(self):
        """Element index runs along z first, then y."""
        assert element_position(self.geometry, 0) == (0.0, 0.0)
        assert element_position(self.geometry, 1) == pytest.approx((0.0, 0.05))
        assert element_position(self.geometry, 20) == pytest.approx((0.05, 0.0))

    def test_positions_match_element_position(self):
        k_y, k_z = self.geometry.positions()
        assert k_y.shape == (400,)
        for m in (0, 1, 19, 20, 399):
            assert (k_y[m], k_z[m]) == pytest.approx(element_position(self.geometry, m))

    def test_element_index_out_of_range(self):
        with pytest.raises(DomainError):
            element_position(self.geometry, 400)

    def test_element_count(self):
        assert self.geometry.n_elements == 400

    def test_invalid_geometry(self):
        with pytest.raises(DomainError):
            ArrayGeometry(m_y=0, m_z=20, d_y=0.05, d_z=0.05, wavelength=0.1)
        with pytest.raises(DomainError):
            ArrayGeometry(m_y=2, m_z=2, d_y=-0.05, d_z=0.05, wavelength=0.1)

    def test_aperture(self):
        """Aperture is the array diagonal."""
        assert aperture(self.geometry) == pytest.approx(1.3435, abs=1e-4)
        large = ArrayGeometry.half_wavelength(35, 35, 0.1)
        assert aperture(large) == pytest.approx(2.4042, abs=1e-4)

    def test_single_element_aperture(self):
        single = ArrayGeometry.half_wavelength(1, 1, 0.1)
        assert aperture(single) == 0.0
        assert fresnel_validity_radius(single) == 0.0

    def test_field_boundaries(self):
        d_b, d_fa = field_boundaries(ArrayGeometry.half_wavelength(35, 35, 0.1))
        assert d_b == pytest.approx(4.8, abs=0.01)
        assert d_fa == pytest.approx(115.6, abs=0.1)

    def test_from_carrier(self):
        geometry = ArrayGeometry.from_carrier(35, 35, 3.0e9)
        assert geometry.wavelength == pytest.approx(0.0999, abs=1e-4)
        assert geometry.d_y == pytest.approx(geometry.wavelength / 2)

    def test_fresnel_validity_radius_beyond_aperture(self):
        assert fresnel_validity_radius(self.geometry) > aperture(self.geometry)


class TestSphericalPoint:
    """Test cases for SphericalPoint."""

    def test_far_field(self):
        point = SphericalPoint.from_degrees(10.0, 0.0)
        assert point.is_far_field
        assert point.inverse_range == 0.0
        assert point.degrees() == pytest.approx((10.0, 0.0))

    def test_invalid_points(self):
        with pytest.raises(DomainError):
            SphericalPoint(azimuth=2.0, elevation=0.0)
        with pytest.raises(DomainError):
            SphericalPoint.from_degrees(0.0, 0.0, 0.0)
        with pytest.raises(DomainError):
            SphericalPoint.from_degrees(0.0, 0.0, -3.0)

    def test_boundary_angles_accepted(self):
        point = SphericalPoint.from_degrees(90.0, -90.0, 5.0)
        assert point.range == 5.0


class TestArrayResponse:
    """Test cases for relative phases and responses."""

    def setup_method(self):
        self.geometry = ArrayGeometry.half_wavelength(20, 20, 0.1)

    def test_reference_element_has_zero_phase(self):
        point = SphericalPoint.from_degrees(30.0, -10.0, 12.0)
        assert exact_relative_phase(self.geometry, 0, point) == pytest.approx(0.0, abs=1e-15)
        assert fresnel_relative_phase(self.geometry, 0, point) == 0.0

    def test_exact_phase_matches_distance(self):
        point = SphericalPoint.from_degrees(25.0, 15.0, 7.0)
        k_y, k_z = element_position(self.geometry, 213)
        x = point.range * math.cos(point.elevation) * math.cos(point.azimuth)
        y = point.range * math.cos(point.elevation) * math.sin(point.azimuth)
        z = point.range * math.sin(point.elevation)
        r_m = math.sqrt(x ** 2 + (y - k_y) ** 2 + (z - k_z) ** 2)
        assert exact_relative_phase(self.geometry, 213, point) == pytest.approx(point.range - r_m)

    def test_exact_phase_needs_range(self):
        with pytest.raises(DomainError):
            exact_relative_phase(self.geometry, 3, SphericalPoint.from_degrees(0.0, 0.0))

    def test_response_unit_modulus(self):
        response = array_response(self.geometry, SphericalPoint.from_degrees(-20.0, 5.0, 9.0))
        assert response.shape == (400,)
        assert response[0] == pytest.approx(1.0)
        assert np.allclose(np.abs(response), 1.0)

    def test_fresnel_error_shrinks_with_range(self):
        near = fresnel_error(self.geometry, SphericalPoint.from_degrees(20.0, 0.0, 3.0))
        far = fresnel_error(self.geometry, SphericalPoint.from_degrees(20.0, 0.0, 60.0))
        assert far.max_phase_error_rad < near.max_phase_error_rad
        assert far.max_relative_distance_error < near.max_relative_distance_error

    def test_fresnel_error_far_field_rejected(self):
        with pytest.raises(DomainError):
            fresnel_error(self.geometry, SphericalPoint.from_degrees(20.0, 0.0))

    def test_steering_matrix_rows_match_responses(self):
        azimuth = np.radians([-30.0, 0.0, 45.0])
        elevation = np.radians([0.0, 10.0, -5.0])
        ranges = np.array([5.0, np.inf, 20.0])
        rows = steering_matrix(self.geometry, azimuth, elevation, ranges)
        assert rows.shape == (3, 400)
        assert np.allclose(rows[0], array_response(
            self.geometry, SphericalPoint(azimuth[0], elevation[0], 5.0)))
        assert np.allclose(rows[1], array_response(
            self.geometry, SphericalPoint(azimuth[1], elevation[1]), ResponseMode.FRESNEL))

    def test_steering_matrix_fresnel_mode(self):
        rows = steering_matrix(self.geometry, [0.3], [0.1], [8.0], mode=ResponseMode.FRESNEL)
        expected = array_response(self.geometry, SphericalPoint(0.3, 0.1, 8.0),
                                  ResponseMode.FRESNEL)
        assert np.allclose(rows[0], expected)

    def test_exact_tends_to_planar(self):
        planar = steering_matrix(self.geometry, [0.4], [0.2])
        distant = steering_matrix(self.geometry, [0.4], [0.2], [1.0e7])
        assert np.allclose(planar, distant, atol=1e-4)


class TestLosChannel:
    """Test cases for the multi-user LoS channel."""

    def setup_method(self):
        self.geometry = ArrayGeometry.half_wavelength(20, 20, 0.1)
        self.points = [SphericalPoint.from_degrees(a, 0.0) for a in (2.0, 20.0, 35.0)]

    def test_unit_gain_columns_are_steering(self):
        users = [UserChannelParams(p) for p in self.points]
        channel = los_channel(users, self.geometry, subcarrier=7)
        assert np.allclose(channel.matrix, user_steering(self.geometry, self.points))

    def test_gain_and_delay(self):
        users = [UserChannelParams(self.points[0], gain=0.5j, delay=0.01)]
        channel = los_channel(users, self.geometry, subcarrier=10)
        expected = 0.5j * np.exp(-2j * np.pi * 0.01 * 10) * array_response(
            self.geometry, self.points[0], ResponseMode.FRESNEL)
        assert np.allclose(channel.matrix[:, 0], expected)

    def test_distinct_users_distinct_columns(self):
        steering = user_steering(self.geometry, self.points)
        n = steering.shape[0]
        for i in range(3):
            for j in range(i + 1, 3):
                overlap = abs(np.vdot(steering[:, i], steering[:, j])) / n
                assert overlap < 1.0

    def test_no_users(self):
        with pytest.raises(DomainError):
            los_channel([], self.geometry, 0)

    def test_zero_gain_rejected(self):
        with pytest.raises(DomainError):
            UserChannelParams(self.points[0], gain=0.0)
