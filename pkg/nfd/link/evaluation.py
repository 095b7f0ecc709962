"""Link quality under nonlinear distortion: SINDR, sum rate and rate sweeps."""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..array.channel import LosChannel, SphericalPoint, UserChannelParams, user_steering
from ..array.geometry import ArrayGeometry
from ..exceptions import DomainError
from ..parallel import ordered_map
from ..spatial.radiation import CovarianceSpectrum, spectral_density
from ..tx.amplifier import PaModel, analytic_decomposition, apply_pa, decompose
from ..tx.waveform import (OfdmConfig, build_precoders, input_covariance, normalize_power,
                           simulate_ensemble, subcarrier_factors)
from ..types import (Component, ComplexArray, PrecoderKind, RealArray, ResponseMode,
                     SpectralEstimator)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LinkBudget:
    """Noise level set from an SNR relative to the received power reference."""
    snr_db: float
    noise_power: float

    def __post_init__(self):
        if not self.noise_power > 0:
            raise DomainError(f"noise power must be positive, got {self.noise_power}")

    @classmethod
    def from_snr(cls, snr_db: float, reference_power: float) -> "LinkBudget":
        if reference_power <= 0:
            raise DomainError(f"reference power must be positive, got {reference_power}")
        return cls(snr_db=snr_db, noise_power=reference_power / 10.0 ** (snr_db / 10.0))

    @property
    def snr(self) -> float:
        return 10.0 ** (self.snr_db / 10.0)


@dataclass(frozen=True)
class LinkState:
    """Everything a rate evaluation needs that does not depend on the noise level.

    ``coupling[s, k, i]`` is ``h_k^T G alpha P_{nu,i}`` and ``distortion[k, s]``
    the distortion PSD at user k on occupied subcarrier s.
    """
    coupling: ComplexArray
    distortion: RealArray
    mask: RealArray
    reference_power: float


@dataclass(frozen=True)
class RateRecord:
    label: str
    evm: float
    snr_db: float
    sum_rate: float
    stderr: float = 0.0


def sindr(k: int, channel: LosChannel, precoder: ComplexArray, gains: ComplexArray,
          s_dd: ComplexArray, noise_power: float,
          active: Optional[Sequence[bool]] = None) -> float:
    """SINDR of user ``k`` on one subcarrier.

    ``precoder`` already carries alpha; ``active`` marks users transmitting on
    this subcarrier (all by default).
    """
    n_users = channel.steering.shape[1]
    if not 0 <= k < n_users:
        raise DomainError(f"user index {k} outside [0, {n_users})")
    active = np.ones(n_users, dtype=bool) if active is None else np.asarray(active, dtype=bool)
    h_k = channel.matrix[:, k]
    received = h_k @ (gains[:, np.newaxis] * precoder)
    power = np.abs(received) ** 2
    if not active[k]:
        return 0.0
    interference = float(np.sum(power[active]) - power[k])
    a_k = channel.steering[:, k]
    distortion = abs(channel.factors[k]) ** 2 * float(np.real(a_k @ s_dd @ np.conj(a_k)))
    return float(power[k] / (max(interference, 0.0) + max(distortion, 0.0) + noise_power))


def sindr_table(state: LinkState, noise_power: float) -> RealArray:
    """SINDR for every user and occupied subcarrier, shape (K, S); zero where idle."""
    power = np.abs(state.coupling) ** 2
    active = state.mask[:, np.newaxis, :]
    desired = np.einsum("skk->sk", power)
    interference = np.sum(power * active, axis=2) - desired * state.mask
    gamma = desired / (np.maximum(interference, 0.0) + state.distortion.T + noise_power)
    return (gamma * state.mask).T


def sum_rate(gamma: RealArray, n_occupied: Optional[int] = None) -> float:
    """``(1/S) sum_k sum_nu log2(1 + gamma_k[nu])`` in bits/s/Hz."""
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma < 0):
        raise DomainError("SINDR values must be non-negative")
    n_occupied = gamma.shape[-1] if n_occupied is None else n_occupied
    if n_occupied == 0:
        return 0.0
    return float(np.sum(np.log2(1.0 + gamma)) / n_occupied)


def link_state(users: Sequence[UserChannelParams], geometry: ArrayGeometry, ofdm: OfdmConfig,
               model: PaModel, kind: PrecoderKind = PrecoderKind.MRT,
               input_power: float = 1.0, mode: ResponseMode = ResponseMode.EXACT,
               n_frames: int = 64, seed: int = 0,
               workers: Optional[int] = None) -> LinkState:
    """Precode, amplify and decompose once for a user set.

    Third-order memoryless PAs use the closed-form distortion spectrum; other
    models fall back to a periodogram over ``n_frames`` simulated frames.
    """
    n_users = len(users)
    n_ant = geometry.n_elements
    precoders = build_precoders(users, geometry, ofdm, kind, mode)
    mask = ofdm.mask(n_users)
    budget = input_power * ofdm.n_fft * n_ant / max(ofdm.n_occupied, 1)
    alpha = normalize_power(precoders, budget, mask)

    steering = user_steering(geometry, [u.position for u in users], mode)
    factors = subcarrier_factors(users, ofdm.occupied)
    lags = range(ofdm.n_fft)
    if model.is_third_order_memoryless:
        c_xx = input_covariance(precoders, ofdm, alpha, lags)
        decomposition = analytic_decomposition(model, c_xx)
        density = CovarianceSpectrum(decomposition, ofdm.n_fft)
    else:
        frames = simulate_ensemble(ofdm, precoders, alpha, n_frames, seed, kind=kind,
                                   transform=lambda f: apply_pa(model, f), workers=workers)
        decomposition = decompose(model, frames, lags=(0,))
        density = spectral_density(decomposition, ofdm, frames, SpectralEstimator.PERIODOGRAM)

    rows = steering.T
    occupied = list(ofdm.occupied)
    distortion = density.quadratic_form(rows, Component.DISTORTION)[:, occupied]
    distortion = distortion * np.abs(factors.T) ** 2
    # sum_nu tr(S_yy[nu]) = N tr(C_yy[0])
    transmitted = ofdm.n_fft * float(np.real(np.trace(decomposition.c_yy.zero_lag)))
    reference = transmitted / max(ofdm.n_occupied, 1)

    channels = steering[np.newaxis, :, :] * factors[:, np.newaxis, :]
    coupling = np.einsum("smk,m,smi->ski", channels, decomposition.gains, alpha * precoders)
    return LinkState(coupling=coupling, distortion=distortion, mask=mask,
                     reference_power=reference)


def rates_for_snr(state: LinkState, snr_db: Sequence[float]) -> List[float]:
    """Sum rate at each SNR, with noise set against the transmit power reference."""
    rates = []
    for value in snr_db:
        budget = LinkBudget.from_snr(value, state.reference_power)
        rates.append(sum_rate(sindr_table(state, budget.noise_power)))
    return rates


def rate_sweep(users: Sequence[UserChannelParams], geometry: ArrayGeometry, ofdm: OfdmConfig,
               models: Dict[float, PaModel], kinds: Sequence[PrecoderKind],
               snr_db: Sequence[float], input_power: float = 1.0,
               workers: Optional[int] = None, seed: int = 0,
               n_frames: int = 64) -> List[RateRecord]:
    """Sum rate over precoder x EVM x SNR, one cell row per (precoder, EVM, SNR).

    ``models`` maps the EVM label to its PA model. PA models without a closed
    form are simulated over ``n_frames`` frames from ``seed``.
    """
    cells = [(PrecoderKind(kind), evm, model) for kind in kinds for evm, model in models.items()]

    def run_cell(cell):
        kind, evm, model = cell
        state = link_state(users, geometry, ofdm, model, kind, input_power,
                           n_frames=n_frames, seed=seed, workers=workers)
        return [RateRecord(kind.value, evm, s, r) for s, r in zip(snr_db, rates_for_snr(state, snr_db))]

    records: List[RateRecord] = []
    for rows in ordered_map(run_cell, cells, workers):
        records.extend(rows)
    log.info("Rate sweep finished: %d cells, %d SNR points", len(cells), len(snr_db))
    return records


def users_from_points(points: Sequence[SphericalPoint]) -> List[UserChannelParams]:
    """Unit-gain, zero-delay users at ``points``."""
    return [UserChannelParams(position=p) for p in points]
