"""Distortion-aware and distortion-unaware frequency scheduling."""

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..array.channel import SphericalPoint
from ..array.geometry import ArrayGeometry
from ..exceptions import ConfigurationError
from ..parallel import ordered_map, spawn_generators
from ..spatial.focal import direction_sums, predict
from ..tx.amplifier import PaModel
from ..tx.waveform import subband_allocation
from ..types import ComplexArray, PrecoderKind, RealArray, SchedulePolicy
from .evaluation import RateRecord, link_state, rates_for_snr, users_from_points

log = logging.getLogger(__name__)

_LEVEL_FLOOR = 1e-300


@dataclass(frozen=True)
class ClusterLayout:
    """Users grouped into angular clusters in the far field."""
    azimuths_deg: Tuple[float, ...] = (-40.0, -10.0, 20.0, 50.0)
    elevation_deg: float = 0.0
    users_per_cluster: int = 3
    jitter_deg: float = 1.5

    def draw(self, rng: np.random.Generator) -> Tuple[List[SphericalPoint], List[int]]:
        """User positions jittered uniformly around each cluster centre, plus labels."""
        points, labels = [], []
        for label, centre in enumerate(self.azimuths_deg):
            offsets = rng.uniform(-self.jitter_deg, self.jitter_deg, self.users_per_cluster)
            for offset in offsets:
                points.append(SphericalPoint.from_degrees(centre + offset, self.elevation_deg))
                labels.append(label)
        return points, labels


@dataclass(frozen=True)
class ScheduleAssignment:
    """Co-scheduled users and their contiguous sub-bands."""
    coscheduled: Tuple[int, ...]
    allocation: Dict[int, Tuple[int, ...]]
    policy: SchedulePolicy
    seed: Optional[int] = None
    score: Optional[float] = None


@dataclass(frozen=True)
class SubbandPlan:
    n_fft: int = 128
    block: int = 30
    offset: int = 4
    n_coscheduled: int = 4


def block_overlap(plan: SubbandPlan) -> RealArray:
    """Share of each third-order sub-band product that lands in each sub-band.

    ``overlap[k, a, b, c]`` is the fraction of the spectrum of
    ``x_a conj(x_b) x_c`` falling on block ``k``, for flat blocks ``a, b, c``.
    Products wrap cyclically over ``n_fft``.
    """
    ofdm = subband_allocation(plan.n_fft, plan.block, plan.n_coscheduled, plan.offset)
    indicators = np.zeros((plan.n_coscheduled, plan.n_fft))
    for k, subcarriers in ofdm.allocation.items():
        indicators[k, list(subcarriers)] = 1.0
    spectra = np.fft.fft(indicators, axis=1)
    products = np.fft.ifft(spectra[:, None, None, :] * np.conj(spectra)[None, :, None, :]
                           * spectra[None, None, :, :], axis=-1)
    products = np.real(products) / plan.block ** 3
    return np.einsum("kn,abcn->kabc", indicators, products)


def array_gain(geometry: ArrayGeometry, targets: RealArray, sources: RealArray) -> RealArray:
    """``|a(t)^H a(s)|^2 / M^2`` between direction-sum rows under the Fresnel phase.

    Sums outside the visible region are fine: the phase is evaluated as is,
    so grating lobes come out with full gain.
    """
    k_y, k_z = geometry.positions()
    rho2 = k_y ** 2 + k_z ** 2

    def phases(sums: RealArray) -> ComplexArray:
        sums = np.atleast_2d(sums)
        phase = (np.outer(sums[:, 0], k_z) + np.outer(sums[:, 1], k_y)
                 - 0.5 * np.outer(sums[:, 2], rho2))
        return np.exp(1j * geometry.wavenumber * phase)

    overlap = np.conj(phases(targets)) @ phases(sources).T
    return np.abs(overlap) ** 2 / geometry.n_elements ** 2


def distortion_gains(points: Sequence[SphericalPoint], geometry: ArrayGeometry) -> RealArray:
    """``gains[k, a, b, c]``: how strongly tuple ``(a, b, c)`` is beamed at user ``k``."""
    n = len(points)
    tuple_sums = np.array([f.sums for f in predict(points)])
    user_sums = np.array([direction_sums(p) for p in points])
    return array_gain(geometry, user_sums, tuple_sums).reshape(n, n, n, n)


def predicted_distortion(gains: RealArray, overlap: RealArray, blocks: Sequence[int]) -> RealArray:
    """In-band third-order distortion per user, up to a common scale.

    ``blocks[k]`` is the sub-band of user ``k``; every tuple adds the share of
    its product spectrum inside that sub-band times its array gain.
    """
    b = np.asarray(blocks, dtype=int)
    return np.sum(overlap[np.ix_(b, b, b, b)] * gains, axis=(1, 2, 3))


def schedule(users: Sequence[SphericalPoint], labels: Sequence[int], policy: SchedulePolicy,
             plan: SubbandPlan = SubbandPlan(),
             rng: Optional[np.random.Generator] = None, seed: Optional[int] = None,
             geometry: Optional[ArrayGeometry] = None) -> ScheduleAssignment:
    """Choose co-scheduled users and give each a contiguous sub-band.

    ``unaware`` samples users uniformly; ``aware-lite`` takes one random user
    from each of randomly chosen clusters. ``aware`` searches every
    one-per-cluster choice and every order of sub-bands for the least
    predicted in-band distortion (sum of its logarithm over users), which
    needs ``geometry``. ``coscheduled`` lists users in sub-band order.
    """
    policy = SchedulePolicy(policy)
    if len(users) != len(labels):
        raise ConfigurationError("every user needs a cluster label", "users")
    if len(users) < plan.n_coscheduled:
        raise ConfigurationError(f"{len(users)} users cannot fill {plan.n_coscheduled} slots",
                                 "schedule.n_coscheduled")
    if rng is None:
        rng = np.random.default_rng(seed)

    clusters: Dict[int, List[int]] = {}
    for index, label in enumerate(labels):
        clusters.setdefault(label, []).append(index)

    score = None
    if policy is SchedulePolicy.UNAWARE:
        chosen = tuple(sorted(int(i) for i in rng.choice(len(users), plan.n_coscheduled,
                                                          replace=False)))
    else:
        if len(clusters) < plan.n_coscheduled:
            raise ConfigurationError(
                f"{policy.value} policy needs {plan.n_coscheduled} clusters, got {len(clusters)}",
                "schedule.clusters")
        if policy is SchedulePolicy.AWARE_LITE:
            picked = rng.choice(sorted(clusters), plan.n_coscheduled, replace=False)
            chosen = tuple(sorted(int(rng.choice(clusters[c])) for c in picked))
        else:
            if geometry is None:
                raise ConfigurationError("the aware policy needs the array geometry", "geometry")
            chosen, score = _least_distortion(users, clusters, plan, geometry)

    ofdm = subband_allocation(plan.n_fft, plan.block, len(chosen), plan.offset)
    allocation = {user: ofdm.allocation[slot] for slot, user in enumerate(chosen)}
    return ScheduleAssignment(coscheduled=chosen, allocation=allocation, policy=policy,
                              seed=seed, score=score)


def _least_distortion(users: Sequence[SphericalPoint], clusters: Dict[int, List[int]],
                      plan: SubbandPlan,
                      geometry: ArrayGeometry) -> Tuple[Tuple[int, ...], float]:
    count = plan.n_coscheduled
    overlap = block_overlap(plan)
    best: Tuple[int, ...] = ()
    best_score = math.inf
    for cluster_set in itertools.combinations(sorted(clusters), count):
        for choice in itertools.product(*(clusters[c] for c in cluster_set)):
            gains = distortion_gains([users[i] for i in choice], geometry)
            for blocks in itertools.permutations(range(count)):
                levels = np.maximum(predicted_distortion(gains, overlap, blocks), _LEVEL_FLOOR)
                score = float(np.sum(np.log10(levels)))
                if score < best_score:
                    best = tuple(int(choice[k]) for k in np.argsort(blocks))
                    best_score = score
    log.debug("Aware schedule %s with predicted distortion score %.3f", best, best_score)
    return best, best_score


@dataclass
class SchedulingSetup:
    """Inputs of the scheduling experiment."""
    geometry: ArrayGeometry
    layout: ClusterLayout = field(default_factory=ClusterLayout)
    plan: SubbandPlan = field(default_factory=SubbandPlan)
    policies: Tuple[SchedulePolicy, ...] = (SchedulePolicy.AWARE, SchedulePolicy.UNAWARE)
    snr_db: Tuple[float, ...] = (-10.0, 0.0, 10.0, 20.0, 25.0)
    realizations: int = 20
    kind: PrecoderKind = PrecoderKind.MRT
    input_power: float = 1.0
    n_frames: int = 64


def scheduling_experiment(setup: SchedulingSetup, models: Dict[float, PaModel], seed: int,
                          workers: Optional[int] = None) -> List[RateRecord]:
    """Average sum rate per (policy, EVM, SNR) over independent user drops.

    Each realization draws its own user positions and unaware choices from a
    stream spawned off ``seed``; the standard error is across realizations.
    """
    generators = spawn_generators(seed, setup.realizations)

    def one_realization(rng: np.random.Generator) -> Dict[Tuple[str, float], List[float]]:
        points, labels = setup.layout.draw(rng)
        rates: Dict[Tuple[str, float], List[float]] = {}
        for policy in setup.policies:
            assignment = schedule(points, labels, policy, setup.plan, rng=rng,
                                  geometry=setup.geometry)
            chosen = [points[i] for i in assignment.coscheduled]
            ofdm = subband_allocation(setup.plan.n_fft, setup.plan.block, len(chosen),
                                      setup.plan.offset)
            for evm, model in models.items():
                state = link_state(users_from_points(chosen), setup.geometry, ofdm, model,
                                   setup.kind, setup.input_power, n_frames=setup.n_frames)
                rates[(policy.value, evm)] = rates_for_snr(state, setup.snr_db)
        return rates

    per_realization = ordered_map(one_realization, generators, workers)

    records = []
    for policy in setup.policies:
        for evm in models:
            table = np.array([r[(policy.value, evm)] for r in per_realization])
            mean = table.mean(axis=0)
            if len(per_realization) > 1:
                stderr = table.std(axis=0, ddof=1) / math.sqrt(len(per_realization))
            else:
                stderr = np.zeros_like(mean)
            for snr, value, error in zip(setup.snr_db, mean, stderr):
                records.append(RateRecord(policy.value, evm, snr, float(value), float(error)))
    log.info("Scheduling experiment: %d realizations, %d policies, %d EVM levels",
             setup.realizations, len(setup.policies), len(models))
    return records
