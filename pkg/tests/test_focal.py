"""Tests for closed-form distortion focal-point prediction."""

import logging
import math

import numpy as np
import pytest

from nfd.array.channel import SphericalPoint
from nfd.array.geometry import ArrayGeometry
from nfd.exceptions import DomainError
from nfd.spatial.focal import (classify, direction_sums, predict, ris_effective_position,
                               ris_focal_points, same_azimuth_case, same_elevation_case,
                               to_records, unique_point_bound, unique_points)
from nfd.tx.waveform import RisConfig
from nfd.types import FocalClass


def _far(*azimuths, elevation=0.0):
    return [SphericalPoint.from_degrees(a, elevation) for a in azimuths]


def _by_tuple(points):
    return {p.index_tuple: p for p in points}


class TestClassification:
    """Test cases for tuple classes and bounds."""

    def test_classes(self):
        assert classify((1, 1, 1)) is FocalClass.P1
        assert classify((0, 1, 0)) is FocalClass.P2
        assert classify((0, 1, 2)) is FocalClass.P3
        assert classify((0, 0, 1)) is FocalClass.P3
        assert classify((0, 1, 0, 1, 0)) is FocalClass.HIGHER
        assert classify((2, 2, 2, 2, 2)) is FocalClass.P1

    @pytest.mark.parametrize("k, bound", [(1, 1), (2, 4), (3, 12), (4, 28)])
    def test_unique_point_bound(self, k, bound):
        assert unique_point_bound(k) == bound

    def test_direction_sums(self):
        sums = direction_sums(SphericalPoint.from_degrees(30.0, 0.0, 4.0))
        assert sums == pytest.approx((0.0, 0.5, 0.25))


class TestPredict:
    """Test cases for focal-point prediction."""

    def test_tuple_space_and_order(self):
        points = predict(_far(2.0, 20.0, 35.0))
        assert len(points) == 27
        assert points[0].index_tuple == (0, 0, 0)
        assert points[-1].index_tuple == (2, 2, 2)
        assert len(predict(_far(2.0, 20.0), order=2)) == 2 ** 5

    def test_diagonal_tuples_land_on_users(self):
        users = [SphericalPoint.from_degrees(-20.0, 5.0, 7.0), SphericalPoint.from_degrees(15.0, -3.0)]
        points = _by_tuple(predict(users))
        assert points[(0, 0, 0)].location == users[0]
        assert points[(1, 1, 1)].location == users[1]

    def test_off_user_lobe_far_field(self):
        point = _by_tuple(predict(_far(2.0, 20.0, 35.0)))[(0, 1, 0)]
        expected = math.asin(2 * math.sin(math.radians(2.0)) - math.sin(math.radians(20.0)))
        assert point.azimuth == pytest.approx(expected)
        assert math.degrees(point.azimuth) == pytest.approx(-15.8, abs=0.05)
        assert point.elevation == pytest.approx(0.0)
        assert point.is_far_field
        assert point.focal_class is FocalClass.P2

    def test_common_range_azimuth_lobe(self):
        users = [SphericalPoint.from_degrees(a, 0.0, 20.0) for a in (-20.0, 10.0, 25.0)]
        point = _by_tuple(predict(users))[(0, 1, 2)]
        assert math.degrees(point.azimuth) == pytest.approx(-5.3, abs=0.05)
        assert point.range == pytest.approx(20.0)

    def test_depth_focusing(self):
        users = [SphericalPoint.from_degrees(10.0, 0.0, r) for r in (4.8, 9.8, 19.0)]
        points = _by_tuple(predict(users))
        assert points[(0, 1, 2)].range == pytest.approx(1.0 / (1 / 4.8 - 1 / 9.8 + 1 / 19.0))
        assert points[(0, 1, 2)].range == pytest.approx(6.29, abs=0.01)
        assert math.degrees(points[(0, 1, 2)].azimuth) == pytest.approx(10.0)
        # 1/9.8 - 1/4.8 + 1/9.8 < 0: focused behind the array
        assert not points[(1, 0, 1)].physical
        assert points[(1, 0, 1)].range < 0

    def test_invisible_direction(self):
        point = _by_tuple(predict(_far(-60.0, 60.0)))[(1, 0, 1)]
        assert not point.physical
        assert point.azimuth is None
        assert point.location is None

    def test_mixed_near_and_far(self):
        users = [SphericalPoint.from_degrees(0.0, 0.0, 10.0), SphericalPoint.from_degrees(20.0, 0.0)]
        points = _by_tuple(predict(users))
        assert points[(0, 1, 0)].range == pytest.approx(5.0)
        assert points[(1, 0, 1)].range == pytest.approx(-10.0)
        assert points[(1, 1, 1)].is_far_field

    def test_limits(self):
        with pytest.raises(DomainError):
            predict([])
        with pytest.raises(DomainError):
            predict(_far(1.0), order=3)
        with pytest.raises(DomainError):
            predict(_far(*range(9)))

    def test_validity_warning(self, caplog):
        geometry = ArrayGeometry.half_wavelength(35, 35, 0.1)
        users = [SphericalPoint.from_degrees(0.0, 0.0, 3.0)]
        with caplog.at_level(logging.WARNING, logger="nfd.spatial.focal"):
            predict(users, geometry=geometry)
        assert "reactive near field" in caplog.text


class TestUniquePoints:
    """Test cases for deduplication into classes."""

    def test_three_distinct_far_field_users(self):
        unique = unique_points(predict(_far(2.0, 20.0, 35.0)))
        assert len(unique.p1) == 3
        assert len(unique.p2) == 6
        assert len(unique.p3) == 3
        assert len(unique) == unique_point_bound(3)
        assert sum(p.multiplicity for p in unique.all) == 27

    def test_p1_wins_over_p3(self):
        """(0, 0, 1) lands on user 1 and merges into its P1 point."""
        unique = unique_points(predict(_far(-10.0, 30.0)))
        p1 = {p.index_tuple: p for p in unique.p1}
        assert p1[(1, 1, 1)].multiplicity == 3
        assert len(unique.p3) == 0

    def test_duplicate_users_collapse(self):
        unique = unique_points(predict(_far(10.0, 10.0)))
        assert len(unique) == 1
        assert unique.all[0].multiplicity == 8

    def test_unphysical_points_stay_distinct(self):
        unique = unique_points(predict(_far(-60.0, 60.0)))
        assert len(unique.p2) == 2
        assert not any(p.physical for p in unique.p2)
        assert len(unique) == unique_point_bound(2)

    def test_only_third_order(self):
        with pytest.raises(DomainError):
            unique_points(predict(_far(1.0, 2.0), order=2))


class TestSpecialCases:
    """Test cases for users sharing an angle."""

    def test_same_elevation_keeps_elevation(self):
        users = _far(-20.0, 10.0, 25.0, elevation=12.0)
        for point in same_elevation_case(users):
            if point.physical:
                assert math.degrees(point.elevation) == pytest.approx(12.0)

    def test_same_elevation_rejects_mixed(self):
        with pytest.raises(DomainError):
            same_elevation_case([SphericalPoint.from_degrees(0.0, 0.0),
                                 SphericalPoint.from_degrees(0.0, 5.0)])

    def test_same_azimuth_spreads_azimuth(self):
        users = [SphericalPoint.from_degrees(20.0, e) for e in (-1.0, -15.0, -40.0)]
        points = [p for p in same_azimuth_case(users) if p.physical]
        azimuths = [math.degrees(p.azimuth) for p in points]
        assert any(abs(a - 20.0) > 0.5 for a in azimuths)
        p1 = [p for p in points if p.focal_class is FocalClass.P1]
        assert all(math.degrees(p.azimuth) == pytest.approx(20.0) for p in p1)

    def test_same_azimuth_rejects_mixed(self):
        with pytest.raises(DomainError):
            same_azimuth_case(_far(1.0, 2.0))


class TestRis:
    """Test cases for the active RIS variant."""

    def test_steer_at_user_is_boresight(self):
        user = SphericalPoint.from_degrees(20.0, 5.0, 9.0)
        effective = ris_effective_position(user, RisConfig(steer_from=user))
        assert effective.physical
        assert effective.point.azimuth == pytest.approx(0.0, abs=1e-12)
        assert effective.point.elevation == pytest.approx(0.0, abs=1e-12)
        assert effective.point.is_far_field

    def test_zero_steering_keeps_position(self):
        user = SphericalPoint.from_degrees(-12.0, 7.0, 15.0)
        effective = ris_effective_position(user, RisConfig(steer_from=SphericalPoint(0.0, 0.0)))
        assert effective.point.azimuth == pytest.approx(user.azimuth)
        assert effective.point.elevation == pytest.approx(user.elevation)
        assert effective.point.range == pytest.approx(15.0)

    def test_zero_steering_negates_prediction(self):
        users = _far(2.0, 20.0, 35.0)
        reflected = ris_focal_points(users, RisConfig(steer_from=SphericalPoint(0.0, 0.0)))
        direct = predict(users)
        for r, d in zip(reflected, direct):
            assert r.index_tuple == d.index_tuple
            assert r.physical == d.physical
            if d.physical:
                assert r.azimuth == pytest.approx(-d.azimuth)
                assert r.elevation == pytest.approx(-d.elevation)

    def test_steered_reflection(self):
        users = _far(2.0, 20.0, 35.0)
        steer = SphericalPoint.from_degrees(-2.0, -4.0)
        points = _by_tuple(ris_focal_points(users, RisConfig(steer_from=steer)))
        user = points[(0, 0, 0)]
        sin_el = -(0.0 - math.sin(steer.elevation))
        assert user.elevation == pytest.approx(math.asin(sin_el))
        assert math.degrees(user.elevation) == pytest.approx(-4.0, abs=1e-9)
        v = math.sin(math.radians(2.0)) - math.sin(steer.azimuth) * math.cos(steer.elevation)
        assert user.azimuth == pytest.approx(-math.asin(v / math.cos(user.elevation)))

    def test_unphysical_effective_position(self):
        users = [SphericalPoint.from_degrees(80.0, 0.0), SphericalPoint.from_degrees(10.0, 0.0)]
        steer = SphericalPoint.from_degrees(-60.0, 0.0)
        assert not ris_effective_position(users[0], RisConfig(steer_from=steer)).physical
        points = ris_focal_points(users, RisConfig(steer_from=steer))
        assert len(points) == 8
        assert not _by_tuple(points)[(0, 0, 0)].physical


class TestRecords:
    """Test cases for JSON records."""

    def test_records(self):
        users = [SphericalPoint.from_degrees(10.0, 0.0, 5.0), SphericalPoint.from_degrees(-10.0, 0.0)]
        records = to_records(predict(users))
        first = records[0]
        assert first["tuple"] == [0, 0, 0]
        assert first["class"] == "P1"
        assert first["azimuth_deg"] == pytest.approx(10.0)
        assert first["range_m"] == pytest.approx(5.0)
        assert records[-1]["range_m"] == "farfield"
        assert set(first) == {"tuple", "class", "azimuth_deg", "elevation_deg", "range_m",
                              "physical", "multiplicity"}


def _random_users(rng, count, near_share=0.5, max_azimuth=60.0, max_elevation=30.0,
                  max_range=60.0):
    users = []
    for _ in range(count):
        range_m = float(rng.uniform(3.0, max_range)) if rng.random() < near_share else None
        users.append(SphericalPoint.from_degrees(float(rng.uniform(-max_azimuth, max_azimuth)),
                                                 float(rng.uniform(-max_elevation, max_elevation)),
                                                 range_m))
    return users


class TestInvariants:
    """Randomized checks of the structural properties of the prediction."""

    @pytest.mark.slow
    @pytest.mark.parametrize("n_users", [2, 3, 4, 5, 6])
    def test_unique_point_bound_holds(self, n_users):
        bound = unique_point_bound(n_users)
        for seed in range(100):
            users = _random_users(np.random.default_rng(seed), n_users)
            assert len(unique_points(predict(users))) <= bound

    @pytest.mark.parametrize("n_users", [3, 4, 5, 6])
    def test_evenly_spaced_users_fall_below_bound(self, n_users):
        # equal sine spacing about broadside makes (a, b, c) land on user a - b + c
        sines = [0.15 * (j - (n_users - 1) / 2) for j in range(n_users)]
        users = _far(*[math.degrees(math.asin(s)) for s in sines])
        assert len(unique_points(predict(users))) < unique_point_bound(n_users)

    def test_generic_users_reach_bound(self):
        users = _random_users(np.random.default_rng(12), 4, near_share=0.0)
        assert len(unique_points(predict(users))) == unique_point_bound(4)

    def test_swap_symmetry(self):
        rng = np.random.default_rng(21)
        for _ in range(50):
            users = _random_users(rng, int(rng.integers(2, 5)))
            points = _by_tuple(predict(users))
            for (a, b, c), point in points.items():
                mirror = points[(c, b, a)]
                assert mirror.sums == pytest.approx(point.sums, abs=1e-12)
                assert mirror.physical == point.physical
                assert mirror.focal_class == point.focal_class
                if point.physical:
                    assert mirror.azimuth == pytest.approx(point.azimuth, abs=1e-9)
                    assert mirror.elevation == pytest.approx(point.elevation, abs=1e-9)
                    if point.range is None:
                        assert mirror.range is None
                    else:
                        assert mirror.range == pytest.approx(point.range, rel=1e-9)

    def test_corollaries_equal_predict(self):
        rng = np.random.default_rng(31)
        for case in range(1000):
            n_users = int(rng.integers(1, 5))
            order = 2 if case % 10 == 0 and n_users <= 3 else 1
            users = _random_users(rng, n_users)
            if case % 2 == 0:
                elevation = float(rng.uniform(-30.0, 30.0))
                users = [SphericalPoint.from_degrees(math.degrees(u.azimuth), elevation, u.range)
                         for u in users]
                assert same_elevation_case(users, order) == predict(users, order)
            else:
                azimuth = float(rng.uniform(-60.0, 60.0))
                users = [SphericalPoint.from_degrees(azimuth, math.degrees(u.elevation), u.range)
                         for u in users]
                assert same_azimuth_case(users, order) == predict(users, order)

    def test_ris_equals_negated_prediction_of_effective_positions(self):
        rng = np.random.default_rng(41)
        for _ in range(50):
            # a near steering point lies beyond every user, keeping effective ranges positive
            steer_range = float(rng.uniform(40.0, 80.0)) if rng.random() < 0.5 else None
            users = _random_users(rng, int(rng.integers(1, 4)),
                                  near_share=0.5 if steer_range is None else 1.0,
                                  max_azimuth=40.0, max_elevation=20.0, max_range=35.0)
            steer = SphericalPoint.from_degrees(float(rng.uniform(-10.0, 10.0)),
                                                float(rng.uniform(-5.0, 5.0)), steer_range)
            config = RisConfig(steer_from=steer)
            effective = [ris_effective_position(u, config) for u in users]
            assert all(e.physical for e in effective)

            reflected = ris_focal_points(users, config)
            composed = [p.reflected() for p in predict([e.point for e in effective])]
            assert reflected == composed

            shifted = np.array([direction_sums(u) for u in users]) - np.array(direction_sums(steer))
            for point in reflected:
                signs = np.array([1.0 if i % 2 == 0 else -1.0 for i in range(3)])
                u, v, w = signs @ shifted[list(point.index_tuple)]
                assert point.sums == pytest.approx((-u, -v, w), abs=1e-9)
