"""Multi-user OFDM precoding, time-domain synthesis and the active-RIS path."""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, TypeVar

import numpy as np
import scipy.linalg

from ..array.channel import SphericalPoint, UserChannelParams, relative_phases, user_steering
from ..array.geometry import ArrayGeometry
from ..exceptions import ConfigurationError, DomainError, IllConditionedError
from ..parallel import ordered_map, spawn_generators
from ..types import ComplexArray, PrecoderKind, RealArray, ResponseMode, SymbolKind

log = logging.getLogger(__name__)

T = TypeVar("T")

# Gram matrices above this condition number are treated as singular.
MAX_CONDITION_NUMBER = 1e12


@dataclass(frozen=True)
class OfdmConfig:
    """Subcarrier layout of one OFDM symbol.

    ``allocation`` of ``None`` means every user is served on every occupied
    subcarrier; otherwise it maps user index to its (disjoint) subcarriers.
    """
    n_fft: int
    occupied: Tuple[int, ...]
    allocation: Optional[Mapping[int, Tuple[int, ...]]] = None

    def __post_init__(self):
        if self.n_fft < 1:
            raise ConfigurationError(f"n_fft must be >= 1, got {self.n_fft}", "ofdm.n_fft")
        occupied = tuple(int(nu) for nu in self.occupied)
        if len(set(occupied)) != len(occupied):
            raise ConfigurationError("occupied subcarriers must be unique", "ofdm.occupied")
        bad = [nu for nu in occupied if not 0 <= nu < self.n_fft]
        if bad:
            raise ConfigurationError(f"subcarriers {bad} outside [0, {self.n_fft})",
                                     "ofdm.occupied")
        object.__setattr__(self, "occupied", occupied)

        if self.allocation is not None:
            seen: Dict[int, int] = {}
            allocation = {}
            for user, subcarriers in self.allocation.items():
                subcarriers = tuple(int(nu) for nu in subcarriers)
                for nu in subcarriers:
                    if nu not in occupied:
                        raise ConfigurationError(
                            f"user {user} allocated unoccupied subcarrier {nu}",
                            f"ofdm.allocation.{user}")
                    if nu in seen:
                        raise ConfigurationError(
                            f"subcarrier {nu} allocated to users {seen[nu]} and {user}",
                            f"ofdm.allocation.{user}")
                    seen[nu] = user
                allocation[int(user)] = subcarriers
            object.__setattr__(self, "allocation", allocation)

    @classmethod
    def shared(cls, n_fft: int, occupied: Optional[Sequence[int]] = None) -> "OfdmConfig":
        """All users on all occupied subcarriers (every subcarrier by default)."""
        if occupied is None:
            occupied = range(n_fft)
        return cls(n_fft=n_fft, occupied=tuple(occupied))

    @property
    def n_occupied(self) -> int:
        return len(self.occupied)

    @property
    def is_shared(self) -> bool:
        return self.allocation is None

    def mask(self, n_users: int) -> RealArray:
        """Allocation mask D, shape (S, K): 1 where user k is active on ``occupied[s]``."""
        if self.allocation is None:
            return np.ones((self.n_occupied, n_users))
        index = {nu: s for s, nu in enumerate(self.occupied)}
        mask = np.zeros((self.n_occupied, n_users))
        for user, subcarriers in self.allocation.items():
            if user >= n_users:
                raise ConfigurationError(f"allocation names user {user} but only "
                                         f"{n_users} users exist", "ofdm.allocation")
            for nu in subcarriers:
                mask[index[nu], user] = 1.0
        return mask


@dataclass(frozen=True)
class PrecodedFrame:
    """Pre-amplifier time-domain signal of one OFDM symbol.

    ``samples`` is M x N, ``symbols`` is K x S (zero where a user is idle).
    ``precoder_kind`` is ``None`` for the reflective RIS path.
    """
    samples: ComplexArray
    alpha: float
    precoder_kind: Optional[PrecoderKind]
    symbols: ComplexArray

    @property
    def energy(self) -> float:
        return float(np.sum(np.abs(self.samples) ** 2))


@dataclass(frozen=True)
class RisConfig:
    """Phase profile of an active RIS: conjugates the response of ``steer_from``."""
    steer_from: SphericalPoint
    mode: ResponseMode = ResponseMode.EXACT


@dataclass(frozen=True)
class CovarianceSequence:
    """Spatial covariance matrices ``C[tau]`` for a window of lags, shape (T, M, M)."""
    lags: Tuple[int, ...]
    values: ComplexArray = field(repr=False)

    def at(self, tau: int) -> ComplexArray:
        try:
            return self.values[self.lags.index(tau)]
        except ValueError:
            raise DomainError(f"lag {tau} not in stored window {self.lags}") from None

    @property
    def zero_lag(self) -> ComplexArray:
        return self.at(0)


def mrt_precoder(steering: ComplexArray, factors: ComplexArray) -> ComplexArray:
    """Conjugate beamforming ``A* F*`` (alpha applied separately)."""
    return np.conj(steering) * np.conj(factors)[np.newaxis, :]


def zf_precoder(steering: ComplexArray, factors: ComplexArray) -> ComplexArray:
    """Zero forcing ``A* (F A^T A*)^-1``, so that ``H^T P = I``."""
    gram = steering.T @ np.conj(steering)
    condition = float(np.linalg.cond(gram))
    if not math.isfinite(condition) or condition > MAX_CONDITION_NUMBER:
        raise IllConditionedError("user Gram matrix is singular; are two users co-located?",
                                  condition)
    # (F G)^-1 = G^-1 F^-1
    inverse = scipy.linalg.solve(gram, np.diag(1.0 / factors), assume_a="gen")
    return np.conj(steering) @ inverse


_PRECODERS: Dict[PrecoderKind, Callable[[ComplexArray, ComplexArray], ComplexArray]] = {
    PrecoderKind.MRT: mrt_precoder,
    PrecoderKind.ZF: zf_precoder,
}


def subcarrier_factors(users: Sequence[UserChannelParams], subcarriers: Sequence[int]) -> ComplexArray:
    """Diagonals of F_nu for every listed subcarrier, shape (S, K)."""
    gains = np.array([u.gain for u in users], dtype=complex)
    delays = np.array([u.delay for u in users], dtype=float)
    nu = np.asarray(subcarriers, dtype=float)[:, np.newaxis]
    return gains[np.newaxis, :] * np.exp(-2j * np.pi * delays[np.newaxis, :] * nu)


def build_precoders(users: Sequence[UserChannelParams], geometry: ArrayGeometry,
                    ofdm: OfdmConfig, kind: PrecoderKind = PrecoderKind.MRT,
                    mode: ResponseMode = ResponseMode.EXACT) -> ComplexArray:
    """Unnormalized precoders for every occupied subcarrier, shape (S, M, K)."""
    if not users:
        raise DomainError("at least one user is required")
    steering = user_steering(geometry, [u.position for u in users], mode)
    factors = subcarrier_factors(users, ofdm.occupied)
    precode = _PRECODERS[PrecoderKind(kind)]
    if ofdm.n_occupied == 0:
        return np.zeros((0, geometry.n_elements, len(users)), dtype=complex)
    if np.allclose(factors, factors[0]):
        single = precode(steering, factors[0])
        return np.repeat(single[np.newaxis], ofdm.n_occupied, axis=0)
    return np.stack([precode(steering, f) for f in factors])


def normalize_power(precoders: ComplexArray, power: float,
                    mask: Optional[RealArray] = None) -> float:
    """alpha with ``E[sum_n ||x_n||^2] = power * S`` for unit-variance symbols.

    With an allocation mask the idle precoder columns do not radiate and are
    left out of the Frobenius norm.
    """
    if power <= 0:
        raise DomainError(f"power budget must be positive, got {power}")
    n_sub = precoders.shape[0]
    active = precoders if mask is None else precoders * mask[:, np.newaxis, :]
    norm2 = float(np.sum(np.abs(active) ** 2))
    if norm2 == 0.0:
        raise DomainError("precoder has zero norm")
    return math.sqrt(power * n_sub / norm2)


def draw_symbols(rng: np.random.Generator, n_users: int, n_sub: int,
                 kind: SymbolKind = SymbolKind.GAUSSIAN) -> ComplexArray:
    """Unit-variance data symbols, shape (K, S)."""
    if SymbolKind(kind) is SymbolKind.QPSK:
        bits = rng.integers(0, 2, size=(2, n_users, n_sub))
        return ((1 - 2 * bits[0]) + 1j * (1 - 2 * bits[1])) / math.sqrt(2)
    return (rng.standard_normal((n_users, n_sub))
            + 1j * rng.standard_normal((n_users, n_sub))) / math.sqrt(2)


def synthesize(ofdm: OfdmConfig, precoders: ComplexArray, symbols: ComplexArray,
               alpha: float, kind: Optional[PrecoderKind] = PrecoderKind.MRT) -> PrecodedFrame:
    """Inverse-DFT synthesis ``x_n = (1/sqrt(N)) sum_nu alpha P_nu s_nu e^{j 2 pi nu n / N}``.

    Symbols on subcarriers a user is not allocated are zeroed.
    """
    n_sub, n_ant, n_users = precoders.shape if precoders.ndim == 3 else (0, 0, 0)
    if symbols.shape != (n_users, ofdm.n_occupied) or n_sub != ofdm.n_occupied:
        raise DomainError(f"symbols {symbols.shape} / precoders {precoders.shape} do not "
                          f"match {n_users} users on {ofdm.n_occupied} subcarriers")
    symbols = symbols * ofdm.mask(n_users).T
    spectrum = np.zeros((n_ant, ofdm.n_fft), dtype=complex)
    if n_sub:
        spectrum[:, list(ofdm.occupied)] = alpha * np.einsum("smk,ks->ms", precoders, symbols)
    samples = np.fft.ifft(spectrum, axis=1, norm="ortho")
    return PrecodedFrame(samples=samples, alpha=alpha, precoder_kind=kind, symbols=symbols)


def input_covariance(precoders: ComplexArray, ofdm: OfdmConfig, alpha: float,
                     lags: Sequence[int] = (0,)) -> CovarianceSequence:
    """Exact covariance of the cyclic OFDM frame with unit-variance symbols.

    ``C_xx[tau] = (1/N) sum_nu alpha^2 P_nu D_nu P_nu^H exp(j 2 pi nu tau / N)``.
    """
    n_users = precoders.shape[2]
    weighted = alpha * precoders * np.sqrt(ofdm.mask(n_users))[:, np.newaxis, :]
    nu = np.asarray(ofdm.occupied, dtype=float)
    values = []
    for tau in lags:
        phase = np.exp(2j * np.pi * nu * tau / ofdm.n_fft)
        values.append(np.einsum("s,smk,snk->mn", phase, weighted, np.conj(weighted))
                      / ofdm.n_fft)
    return CovarianceSequence(lags=tuple(int(t) for t in lags), values=np.array(values))


def input_spectra(precoders: ComplexArray, ofdm: OfdmConfig, alpha: float) -> ComplexArray:
    """Per-subcarrier input spectral matrices ``alpha^2 P_nu D_nu P_nu^H``, shape (S, M, M)."""
    n_users = precoders.shape[2]
    weighted = alpha * precoders * np.sqrt(ofdm.mask(n_users))[:, np.newaxis, :]
    return np.einsum("smk,snk->smn", weighted, np.conj(weighted))


def simulate_ensemble(ofdm: OfdmConfig, precoders: ComplexArray, alpha: float,
                      n_frames: int, seed: int,
                      symbol_kind: SymbolKind = SymbolKind.GAUSSIAN,
                      kind: Optional[PrecoderKind] = PrecoderKind.MRT,
                      transform: Optional[Callable[[PrecodedFrame], T]] = None,
                      workers: Optional[int] = None,
                      synthesizer: Optional[Callable[[ComplexArray], PrecodedFrame]] = None) -> List:
    """Monte-Carlo frames, each with its own RNG stream spawned from ``seed``.

    ``transform`` (e.g. PA application) runs inside the worker so only its
    result is kept. ``synthesizer`` turns a (K, S) symbol block into a frame
    in place of precoded synthesis; the RIS path passes ``ris_phase_shift``.
    """
    if n_frames < 1:
        raise DomainError(f"ensemble needs at least one frame, got {n_frames}")
    n_users = precoders.shape[2]
    generators = spawn_generators(seed, n_frames)

    def one_frame(rng: np.random.Generator):
        symbols = draw_symbols(rng, n_users, ofdm.n_occupied, symbol_kind)
        if synthesizer is None:
            frame = synthesize(ofdm, precoders, symbols, alpha, kind)
        else:
            frame = synthesizer(symbols)
        return frame if transform is None else transform(frame)

    log.debug("Simulating %d frames (%d users, %d subcarriers)",
              n_frames, n_users, ofdm.n_occupied)
    return ordered_map(one_frame, generators, workers)


def subband_allocation(n_fft: int, block: int, n_users: int, offset: int = 0) -> OfdmConfig:
    """Contiguous equal blocks: user k gets ``[offset + k*block, offset + (k+1)*block)``."""
    if block < 1 or n_users < 1 or offset < 0:
        raise ConfigurationError("block, users and offset must be positive", "ofdm.block")
    end = offset + block * n_users
    if end > n_fft:
        raise ConfigurationError(f"{n_users} blocks of {block} from {offset} exceed "
                                 f"n_fft={n_fft}", "ofdm.block")
    allocation = {k: tuple(range(offset + k * block, offset + (k + 1) * block))
                  for k in range(n_users)}
    return OfdmConfig(n_fft=n_fft, occupied=tuple(range(offset, end)), allocation=allocation)


def ris_phase_profile(config: RisConfig, geometry: ArrayGeometry) -> ComplexArray:
    """Diagonal of Phi, conjugating the response towards ``steer_from``."""
    mode = ResponseMode.FRESNEL if config.steer_from.is_far_field else config.mode
    phases = relative_phases(geometry, config.steer_from, mode)
    return np.exp(-1j * geometry.wavenumber * phases)


def ris_precoders(config: RisConfig, geometry: ArrayGeometry, impinging: ComplexArray,
                  factors: ComplexArray) -> ComplexArray:
    """RIS reflection written as per-subcarrier precoders ``Phi A F_nu``, shape (S, M, K).

    ``impinging`` is the M x K steering from the users towards the RIS and
    ``factors`` the (S, K) path gains.
    """
    phi = ris_phase_profile(config, geometry)
    reflected = phi[:, np.newaxis] * impinging
    return reflected[np.newaxis, :, :] * factors[:, np.newaxis, :]


def ris_phase_shift(config: RisConfig, geometry: ArrayGeometry, impinging: ComplexArray,
                    symbols: ComplexArray, ofdm: OfdmConfig,
                    factors: Optional[ComplexArray] = None) -> PrecodedFrame:
    """Signal at the RIS amplifiers ``x_n = Phi sum_k a_k s_k[n]``.

    The RIS is reflective, so no power normalization is applied (alpha = 1).
    """
    n_users = impinging.shape[1]
    if factors is None:
        factors = np.ones((ofdm.n_occupied, n_users), dtype=complex)
    precoders = ris_precoders(config, geometry, impinging, factors)
    return synthesize(ofdm, precoders, symbols, 1.0, kind=None)
