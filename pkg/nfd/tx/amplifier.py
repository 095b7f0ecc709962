"""Memory-polynomial power amplifier, EVM calibration and Bussgang decomposition."""

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import brentq

from ..exceptions import ConvergenceError, DomainError, EnsembleError
from ..types import ComplexArray, JsonDict, RealArray
from .waveform import CovarianceSequence, PrecodedFrame

log = logging.getLogger(__name__)

# Calibration is only defined below this EVM.
MAX_CALIBRATION_EVM = 0.3

EVM3_COEFFS = (1.042, -0.0212)


@dataclass(frozen=True)
class PaModel:
    """Memory polynomial ``sum_p sum_l beta_{2p+1}[l] x[n-l] |x[n-l]|^{2p}``.

    ``coeffs[p, l]`` holds beta_{2p+1}[l]; shape is (order + 1, memory + 1).
    """
    coeffs: ComplexArray = field(repr=False)
    name: Optional[str] = None

    def __post_init__(self):
        coeffs = np.atleast_2d(np.asarray(self.coeffs, dtype=complex))
        if coeffs.ndim != 2 or coeffs.size == 0:
            raise DomainError(f"coefficient table must be 2-D, got shape {coeffs.shape}")
        if coeffs[0, 0] == 0:
            raise DomainError("beta_1[0] must be non-zero")
        coeffs.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def third_order(cls, beta1: complex, beta3: complex,
                    name: Optional[str] = None) -> "PaModel":
        return cls(np.array([[beta1], [beta3]], dtype=complex), name=name)

    @classmethod
    def linear(cls) -> "PaModel":
        return cls.third_order(1.0, 0.0, name="linear")

    @property
    def order(self) -> int:
        return self.coeffs.shape[0] - 1

    @property
    def memory(self) -> int:
        return self.coeffs.shape[1] - 1

    @property
    def is_third_order_memoryless(self) -> bool:
        return self.memory == 0 and self.order <= 1

    @property
    def beta1(self) -> complex:
        return complex(self.coeffs[0, 0])

    @property
    def beta3(self) -> complex:
        return complex(self.coeffs[1, 0]) if self.order >= 1 else 0j

    def to_dict(self) -> JsonDict:
        """Coefficients as nested ``[[re, im], ...]`` lists, order-major."""
        return {
            "coeffs": [[[float(c.real), float(c.imag)] for c in row] for row in self.coeffs],
        }

    @classmethod
    def from_dict(cls, data: JsonDict) -> "PaModel":
        rows = data["coeffs"]
        table = np.array([[complex(*pair) for pair in row] for row in rows], dtype=complex)
        return cls(table, name=data.get("name"))

    def __eq__(self, other):
        if not isinstance(other, PaModel):
            return NotImplemented
        return self.coeffs.shape == other.coeffs.shape and bool(np.all(self.coeffs == other.coeffs))

    def __hash__(self):
        return hash(self.coeffs.tobytes())


@dataclass(frozen=True)
class AmplifiedFrame:
    """PA output together with the frame that drove it."""
    input: PrecodedFrame
    samples: ComplexArray


@dataclass(frozen=True)
class BussgangDecomposition:
    """``y_n = G x_n + d_n`` with ``d_n`` uncorrelated with ``x_n``.

    ``gains`` is the diagonal of G. ``cross_correlation`` is the largest
    per-antenna normalized correlation between d and x (``None`` for analytic
    decompositions built without frames).
    """
    gains: ComplexArray
    c_xx: CovarianceSequence
    c_yy: CovarianceSequence
    c_dd: CovarianceSequence
    analytic: bool
    cross_correlation: Optional[float] = None

    @property
    def lags(self) -> Tuple[int, ...]:
        return self.c_xx.lags

    def linear_covariance(self) -> CovarianceSequence:
        """``C_uu[tau] = G C_xx[tau] G^H``."""
        g = self.gains
        return CovarianceSequence(self.lags,
                                  g[np.newaxis, :, np.newaxis] * self.c_xx.values
                                  * np.conj(g)[np.newaxis, np.newaxis, :])

    def split(self, frame: AmplifiedFrame) -> Tuple[ComplexArray, ComplexArray]:
        """Linear part ``u = G x`` and distortion ``d = y - G x`` of one frame."""
        linear = self.gains[:, np.newaxis] * frame.input.samples
        return linear, frame.samples - linear

    def distortion_ratio(self) -> float:
        """``E||d||^2 / E||u||^2`` at lag zero."""
        linear = float(np.real(np.trace(self.linear_covariance().zero_lag)))
        distortion = float(np.real(np.trace(self.c_dd.zero_lag)))
        return distortion / linear if linear > 0 else math.inf


def amplify(model: PaModel, samples: ComplexArray) -> ComplexArray:
    """Apply the polynomial along the last axis with circular memory taps."""
    samples = np.asarray(samples, dtype=complex)
    length = samples.shape[-1]
    if length <= model.memory:
        raise DomainError(f"frame of {length} samples is shorter than PA memory {model.memory}")
    out = np.zeros_like(samples)
    for tap in range(model.memory + 1):
        delayed = np.roll(samples, tap, axis=-1) if tap else samples
        power = np.abs(delayed) ** 2
        # Horner over |x|^2
        poly = np.full(samples.shape, model.coeffs[model.order, tap], dtype=complex)
        for p in range(model.order - 1, -1, -1):
            poly = poly * power + model.coeffs[p, tap]
        out += poly * delayed
    return out


def apply_pa(model: PaModel, frame: PrecodedFrame) -> AmplifiedFrame:
    """Amplify every antenna of ``frame`` with the shared PA model."""
    return AmplifiedFrame(input=frame, samples=amplify(model, frame.samples))


def analytic_evm(model: PaModel, input_power: float = 1.0) -> float:
    """EVM ``sqrt(E|d|^2 / E|u|^2)`` of a third-order memoryless PA, Gaussian input."""
    _require_third_order(model)
    if input_power < 0:
        raise DomainError(f"input power must be non-negative, got {input_power}")
    gain = abs(model.beta1 + 2 * model.beta3 * input_power)
    if gain == 0:
        return math.inf
    return math.sqrt(2.0) * abs(model.beta3) * input_power / gain


def measure_evm(model: PaModel, n_samples: int, rng: Union[int, np.random.Generator],
                input_power: float = 1.0) -> float:
    """Monte-Carlo EVM with a per-sample least-squares Bussgang gain."""
    if n_samples < 2:
        raise EnsembleError(f"EVM estimate needs at least 2 samples, got {n_samples}")
    rng = np.random.default_rng(rng)
    scale = math.sqrt(input_power / 2)
    x = scale * (rng.standard_normal(n_samples) + 1j * rng.standard_normal(n_samples))
    y = amplify(model, x)
    gain = np.vdot(x, y) / np.vdot(x, x)
    d = y - gain * x
    return float(math.sqrt(np.sum(np.abs(d) ** 2) / np.sum(np.abs(gain * x) ** 2)))


def calibrate_evm(target_evm: float, input_power: float = 1.0) -> PaModel:
    """Third-order memoryless PA hitting ``target_evm`` at ``input_power``.

    The ratio ``c = beta3/beta1`` is found by root finding (``brentq``) on the
    closed-form EVM of a third-order memoryless PA with complex Gaussian
    input, and beta1 is chosen so that output power equals input power.
    No samples are drawn; ``measure_evm`` checks the result by Monte Carlo.
    """
    if target_evm < 0 or input_power <= 0:
        raise DomainError(f"need target_evm >= 0 and input_power > 0, "
                          f"got {target_evm}, {input_power}")
    if target_evm == 0:
        return PaModel.linear()
    if target_evm >= MAX_CALIBRATION_EVM:
        raise ConvergenceError(f"EVM target {target_evm:.3f} unattainable "
                               f"(calibration range is below {MAX_CALIBRATION_EVM})")
    s = input_power

    def evm_gap(c: float) -> float:
        return math.sqrt(2.0) * abs(c) * s / abs(1.0 + 2.0 * c * s) - target_evm

    # EVM grows without bound as c approaches the gain-cancelling pole -1/(2s)
    pole = -1.0 / (2.0 * s)
    try:
        c = brentq(evm_gap, pole * (1 - 1e-9), 0.0, xtol=1e-15, rtol=1e-13)
    except ValueError as e:
        raise ConvergenceError(f"EVM calibration failed for target {target_evm}: {e}") from e
    power_ratio = 1.0 + 4.0 * c * s + 6.0 * c * c * s * s
    if power_ratio <= 0:
        raise ConvergenceError(f"no power-preserving beta1 for target {target_evm}")
    beta1 = power_ratio ** -0.5
    log.debug("Calibrated EVM %.4f: beta1=%.6f beta3=%.6f", target_evm, beta1, c * beta1)
    return PaModel.third_order(beta1, c * beta1)


@lru_cache(maxsize=None)
def _calibrated_preset(target_evm: float) -> PaModel:
    model = calibrate_evm(target_evm)
    return PaModel(model.coeffs, name=f"evm{round(target_evm * 100)}")


def preset(name: str) -> PaModel:
    """Named PA models: ``evm3`` (quoted coefficients), ``evm5``, ``evm10``, ``linear``."""
    if name == "linear":
        return PaModel.linear()
    if name == "evm3":
        return PaModel.third_order(*EVM3_COEFFS, name="evm3")
    if name in PRESET_TARGETS:
        return _calibrated_preset(PRESET_TARGETS[name])
    raise DomainError(f"unknown PA preset {name!r}; known: {sorted(PRESET_NAMES)}")


PRESET_TARGETS: Dict[str, float] = {"evm5": 0.05, "evm10": 0.10}
PRESET_NAMES = ("evm3", "evm5", "evm10", "linear")


def bussgang_gain(model: PaModel, input_power: Union[float, RealArray]) -> ComplexArray:
    """Per-antenna Bussgang gain ``beta1 + 2 beta3 sigma_m^2``."""
    _require_third_order(model)
    sigma2 = np.atleast_1d(np.asarray(input_power, dtype=float))
    return model.beta1 + 2.0 * model.beta3 * sigma2


def output_covariance(model: PaModel, c_xx: CovarianceSequence) -> CovarianceSequence:
    """Closed-form output covariance for jointly circular Gaussian input.

    ``C_yy[tau] = G C_xx[tau] G^H + 2|beta3|^2 (C o conj(C) o C)`` with
    ``G = diag(beta1 + 2 beta3 diag(C_xx[0]))``.
    """
    _require_third_order(model)
    zero = c_xx.zero_lag
    _require_psd(zero)
    gains = bussgang_gain(model, np.real(np.diag(zero)))
    linear = (gains[np.newaxis, :, np.newaxis] * c_xx.values
              * np.conj(gains)[np.newaxis, np.newaxis, :])
    cubic = 2.0 * abs(model.beta3) ** 2 * np.abs(c_xx.values) ** 2 * c_xx.values
    return CovarianceSequence(c_xx.lags, linear + cubic)


def analytic_decomposition(model: PaModel, c_xx: CovarianceSequence) -> BussgangDecomposition:
    """Bussgang decomposition from the input covariance alone (third-order PA)."""
    c_yy = output_covariance(model, c_xx)
    gains = bussgang_gain(model, np.real(np.diag(c_xx.zero_lag)))
    c_dd = 2.0 * abs(model.beta3) ** 2 * np.abs(c_xx.values) ** 2 * c_xx.values
    return BussgangDecomposition(gains=gains, c_xx=c_xx, c_yy=c_yy,
                                 c_dd=CovarianceSequence(c_xx.lags, c_dd), analytic=True)


def empirical_covariance(frames: Sequence[ComplexArray], lags: Sequence[int]) -> CovarianceSequence:
    """Ensemble estimate of ``E[x_n x_{n-tau}^H]`` over cyclic frames (M x N each)."""
    values = []
    for tau in lags:
        acc = sum(f @ np.conj(np.roll(f, tau, axis=1)).T for f in frames)
        values.append(acc / (len(frames) * frames[0].shape[1]))
    return CovarianceSequence(tuple(int(t) for t in lags), np.array(values))


def decompose(model: PaModel, frames: Sequence[AmplifiedFrame], lags: Sequence[int] = (0,),
              min_frames: int = 1,
              c_xx: Optional[CovarianceSequence] = None) -> BussgangDecomposition:
    """Split amplified frames into linear and distortion parts.

    The third-order memoryless PA uses the closed-form covariances (from
    ``c_xx`` when given, else from the ensemble input covariance); other
    models use ensemble estimates throughout.
    """
    if len(frames) < max(min_frames, 1):
        raise EnsembleError(f"ensemble has {len(frames)} frames, need at least {min_frames}")
    lags = tuple(int(t) for t in lags)
    if 0 not in lags:
        lags = (0,) + lags
    inputs = [f.input.samples for f in frames]
    outputs = [f.samples for f in frames]

    if model.is_third_order_memoryless:
        if c_xx is None:
            c_xx = empirical_covariance(inputs, lags)
        result = analytic_decomposition(model, c_xx)
    else:
        c_xx = empirical_covariance(inputs, lags)
        x_power = sum(np.sum(np.abs(x) ** 2, axis=1) for x in inputs)
        cross = sum(np.sum(y * np.conj(x), axis=1) for x, y in zip(inputs, outputs))
        gains = np.where(x_power > 0, cross / np.where(x_power > 0, x_power, 1.0), model.beta1)
        c_yy = empirical_covariance(outputs, lags)
        c_uu = (gains[np.newaxis, :, np.newaxis] * c_xx.values
                * np.conj(gains)[np.newaxis, np.newaxis, :])
        result = BussgangDecomposition(gains=gains, c_xx=c_xx, c_yy=c_yy,
                                       c_dd=CovarianceSequence(lags, c_yy.values - c_uu),
                                       analytic=False)

    correlation = _cross_correlation(result, frames)
    log.debug("Bussgang decomposition over %d frames: max |corr(d, x)| = %.2e",
              len(frames), correlation)
    return BussgangDecomposition(gains=result.gains, c_xx=result.c_xx, c_yy=result.c_yy,
                                 c_dd=result.c_dd, analytic=result.analytic,
                                 cross_correlation=correlation)


def _cross_correlation(result: BussgangDecomposition, frames: Sequence[AmplifiedFrame]) -> float:
    cross: List = []
    d_power = 0.0
    x_power = 0.0
    for frame in frames:
        _, d = result.split(frame)
        x = frame.input.samples
        cross.append(np.sum(d * np.conj(x), axis=1))
        d_power = d_power + np.sum(np.abs(d) ** 2, axis=1)
        x_power = x_power + np.sum(np.abs(x) ** 2, axis=1)
    numerator = np.abs(np.sum(cross, axis=0))
    denominator = np.sqrt(d_power * x_power)
    ratio = np.divide(numerator, denominator, out=np.zeros_like(numerator),
                      where=denominator > 0)
    return float(np.max(ratio))


def _require_third_order(model: PaModel) -> None:
    if not model.is_third_order_memoryless:
        raise DomainError(f"closed form needs a third-order memoryless PA, got order "
                          f"{model.order} memory {model.memory}")


def _require_psd(matrix: ComplexArray) -> None:
    eigenvalues = np.linalg.eigvalsh((matrix + np.conj(matrix).T) / 2)
    trace = float(np.real(np.trace(matrix)))
    if eigenvalues.min() < -1e-9 * max(trace, 1e-300):
        raise DomainError(f"zero-lag covariance is not PSD (min eigenvalue {eigenvalues.min():.3e})")
