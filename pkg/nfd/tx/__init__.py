"""Transmit chain: OFDM precoding and power amplifier models."""

from .waveform import (CovarianceSequence, OfdmConfig, PrecodedFrame, RisConfig, mrt_precoder,
                       normalize_power, ris_phase_shift, synthesize, zf_precoder)
from .amplifier import (AmplifiedFrame, BussgangDecomposition, PaModel, apply_pa, bussgang_gain,
                        calibrate_evm, decompose, output_covariance)

__all__ = [
    "CovarianceSequence",
    "OfdmConfig",
    "PrecodedFrame",
    "RisConfig",
    "mrt_precoder",
    "normalize_power",
    "ris_phase_shift",
    "synthesize",
    "zf_precoder",
    "AmplifiedFrame",
    "BussgangDecomposition",
    "PaModel",
    "apply_pa",
    "bussgang_gain",
    "calibrate_evm",
    "decompose",
    "output_covariance",
]
