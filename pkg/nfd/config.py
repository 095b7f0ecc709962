"""Scenario configuration for nearfield-distortion.

Scenarios are YAML or JSON files. Angles are in degrees, distances in meters
and SNRs in dB at this boundary; everything downstream works in radians.
"""

import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml

from .array.channel import SphericalPoint, UserChannelParams
from .array.geometry import ArrayGeometry
from .exceptions import ConfigurationError, NfdError
from .tx.amplifier import MAX_CALIBRATION_EVM, PRESET_NAMES, PaModel, calibrate_evm, preset
from .tx.waveform import OfdmConfig, RisConfig, subband_allocation
from .types import (ArrayMode, Experiment, JsonDict, PathLike, PrecoderKind, ResponseMode,
                    ScanAxis, SchedulePolicy, SpectralEstimator, SymbolKind)


def _fields_from(cls, data: Any, path: str) -> Dict[str, Any]:
    """Check ``data`` is a mapping holding only fields of ``cls``."""
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"expected a mapping, got {type(data).__name__}", path)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigurationError(f"unknown field(s) {unknown}", path)
    return dict(data)


def _choice(value: Any, enum_cls, path: str) -> None:
    try:
        enum_cls(value)
    except ValueError:
        options = [e.value for e in enum_cls]
        raise ConfigurationError(f"{value!r} is not one of {options}", path) from None


DEFAULT_PRESET = "evm3"


def _join(path: str, name: str) -> str:
    return f"{path}.{name}" if path else name


def _as_float(value: Any, path: str) -> Optional[float]:
    if value is None:
        return None
    if isinstance(value, bool):
        raise ConfigurationError(f"must be a number, got {value!r}", path)
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            pass
    raise ConfigurationError(f"must be a number, got {value!r}", path)


def _coerce_numbers(section: Any, path: str) -> None:
    """Check numeric fields of a section, parsing numbers YAML left as text.

    YAML 1.1 only reads exponents with a sign (``3.0e+9``), so ``3.0e9``
    arrives as a string.
    """
    for f in dataclasses.fields(section):
        value = getattr(section, f.name)
        where = _join(path, f.name)
        if value is None:
            if f.type is float or f.type is int:
                raise ConfigurationError("must not be null", where)
            continue
        if f.type in (float, Optional[float]):
            setattr(section, f.name, _as_float(value, where))
        elif f.type == List[float]:
            if not isinstance(value, list):
                raise ConfigurationError(f"expected a list, got {value!r}", where)
            setattr(section, f.name, [_as_float(v, f"{where}[{i}]") for i, v in enumerate(value)])
        elif f.type in (int, Optional[int]):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigurationError(f"must be an integer, got {value!r}", where)


@dataclass
class GeometryConfig:
    """UPA size plus either a wavelength or a carrier frequency."""
    m_y: int = 20
    m_z: int = 20
    wavelength: Optional[float] = None
    carrier_hz: Optional[float] = None
    spacing_wavelengths: float = 0.5

    def validate(self, path: str = "geometry") -> None:
        for name in ("m_y", "m_z"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ConfigurationError(f"must be an integer >= 1, got {value!r}", _join(path, name))
        if (self.wavelength is None) == (self.carrier_hz is None):
            raise ConfigurationError("give exactly one of wavelength or carrier_hz", path)
        if self.wavelength is not None and not self.wavelength > 0:
            raise ConfigurationError("must be positive", _join(path, "wavelength"))
        if self.carrier_hz is not None and not self.carrier_hz > 0:
            raise ConfigurationError("must be positive", _join(path, "carrier_hz"))
        if not self.spacing_wavelengths > 0:
            raise ConfigurationError("must be positive", _join(path, "spacing_wavelengths"))

    def to_geometry(self) -> ArrayGeometry:
        if self.carrier_hz is not None:
            return ArrayGeometry.from_carrier(self.m_y, self.m_z, self.carrier_hz,
                                              self.spacing_wavelengths)
        spacing = self.spacing_wavelengths * self.wavelength
        return ArrayGeometry(self.m_y, self.m_z, spacing, spacing, self.wavelength)


@dataclass
class UserConfig:
    """One user; ``range_m`` of ``None`` places it in the far field."""
    azimuth_deg: float = 0.0
    elevation_deg: float = 0.0
    range_m: Optional[float] = None
    gain: List[float] = field(default_factory=lambda: [1.0, 0.0])
    delay: float = 0.0
    cluster: Optional[int] = None

    def validate(self, path: str) -> None:
        for name in ("azimuth_deg", "elevation_deg"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not -90.0 <= value <= 90.0:
                raise ConfigurationError(f"must lie in [-90, 90], got {value!r}", _join(path, name))
        if self.range_m is not None and not (math.isfinite(self.range_m) and self.range_m > 0):
            raise ConfigurationError(f"must be positive or null, got {self.range_m!r}",
                                     _join(path, "range_m"))
        if len(self.gain) != 2 or self.gain[0] == 0 and self.gain[1] == 0:
            raise ConfigurationError("must be a non-zero [re, im] pair", _join(path, "gain"))

    def to_point(self) -> SphericalPoint:
        return SphericalPoint.from_degrees(self.azimuth_deg, self.elevation_deg, self.range_m)

    def to_params(self) -> UserChannelParams:
        return UserChannelParams(self.to_point(), complex(*self.gain), self.delay)


@dataclass
class PaConfig:
    """At most one of a preset name, a coefficient table or an EVM target.

    With none of them set the model is the ``evm3`` preset.
    """
    preset: Optional[str] = None
    coeffs: Optional[List[List[List[float]]]] = None
    target_evm: Optional[float] = None

    def validate(self, path: str = "pa") -> None:
        given = [name for name in ("preset", "coeffs", "target_evm") if getattr(self, name) is not None]
        if len(given) > 1:
            raise ConfigurationError(f"give at most one of preset, coeffs, target_evm; got {given}", path)
        if self.preset is not None and self.preset not in PRESET_NAMES:
            raise ConfigurationError(f"unknown preset {self.preset!r}; known: {list(PRESET_NAMES)}",
                                     _join(path, "preset"))
        if self.target_evm is not None and not 0 <= self.target_evm < MAX_CALIBRATION_EVM:
            raise ConfigurationError(f"must lie in [0, {MAX_CALIBRATION_EVM})",
                                     _join(path, "target_evm"))
        if self.coeffs is not None:
            try:
                PaModel.from_dict({"coeffs": self.coeffs})
            except (TypeError, ValueError, NfdError) as e:
                raise ConfigurationError(f"invalid coefficient table: {e}", _join(path, "coeffs")) from e

    def to_model(self) -> PaModel:
        if self.coeffs is not None:
            return PaModel.from_dict({"coeffs": self.coeffs})
        if self.target_evm is not None:
            return calibrate_evm(self.target_evm)
        return preset(self.preset or DEFAULT_PRESET)


@dataclass
class OfdmSection:
    """Subcarrier layout, power operating point and symbol statistics."""
    n_fft: int = 128
    occupied: Optional[List[int]] = None
    allocation: str = "shared"
    block: Optional[int] = None
    offset: int = 0
    input_power: float = 1.0
    precoder: str = "mrt"
    symbols: str = "gaussian"
    frames: int = 64
    min_frames: int = 1

    def validate(self, path: str = "ofdm") -> None:
        if not isinstance(self.n_fft, int) or self.n_fft < 1:
            raise ConfigurationError(f"must be an integer >= 1, got {self.n_fft!r}", _join(path, "n_fft"))
        if self.allocation not in ("shared", "subband"):
            raise ConfigurationError("must be 'shared' or 'subband'", _join(path, "allocation"))
        if self.allocation == "subband" and (self.block is None or self.block < 1):
            raise ConfigurationError("sub-band allocation needs a block size >= 1", _join(path, "block"))
        if self.occupied is not None:
            bad = [nu for nu in self.occupied if not 0 <= nu < self.n_fft]
            if bad:
                raise ConfigurationError(f"subcarriers {bad} outside [0, {self.n_fft})",
                                         _join(path, "occupied"))
        if self.offset < 0:
            raise ConfigurationError("must be >= 0", _join(path, "offset"))
        if not self.input_power > 0:
            raise ConfigurationError("must be positive", _join(path, "input_power"))
        _choice(self.precoder, PrecoderKind, _join(path, "precoder"))
        _choice(self.symbols, SymbolKind, _join(path, "symbols"))
        if self.min_frames < 1 or self.frames < self.min_frames:
            raise ConfigurationError(f"need frames >= min_frames >= 1, got {self.frames} "
                                     f"and {self.min_frames}", _join(path, "frames"))

    def to_ofdm(self, n_users: int) -> OfdmConfig:
        if self.allocation == "subband":
            return subband_allocation(self.n_fft, self.block, n_users, self.offset)
        return OfdmConfig.shared(self.n_fft, self.occupied)


@dataclass
class RisSection:
    """Direction (and optional range) whose phase profile the RIS conjugates."""
    steer_azimuth_deg: float = 0.0
    steer_elevation_deg: float = 0.0
    steer_range_m: Optional[float] = None
    response: str = "exact"

    def validate(self, path: str = "ris") -> None:
        for name in ("steer_azimuth_deg", "steer_elevation_deg"):
            if not -90.0 <= getattr(self, name) <= 90.0:
                raise ConfigurationError("must lie in [-90, 90]", _join(path, name))
        if self.steer_range_m is not None and not self.steer_range_m > 0:
            raise ConfigurationError("must be positive or null", _join(path, "steer_range_m"))
        _choice(self.response, ResponseMode, _join(path, "response"))

    def to_ris(self) -> RisConfig:
        point = SphericalPoint.from_degrees(self.steer_azimuth_deg, self.steer_elevation_deg,
                                            self.steer_range_m)
        return RisConfig(steer_from=point, mode=ResponseMode(self.response))


@dataclass
class LinkSection:
    """Sum-rate sweep grid."""
    snr_db: List[float] = field(default_factory=lambda: [-10.0, 0.0, 10.0, 20.0, 30.0])
    precoders: List[str] = field(default_factory=lambda: ["mrt", "zf"])
    evm_levels: List[float] = field(default_factory=lambda: [0.0, 0.03])

    def validate(self, path: str = "link") -> None:
        if not self.snr_db:
            raise ConfigurationError("at least one SNR is required", _join(path, "snr_db"))
        for i, kind in enumerate(self.precoders):
            _choice(kind, PrecoderKind, f"{path}.precoders[{i}]")
        for i, evm in enumerate(self.evm_levels):
            if not 0 <= evm < MAX_CALIBRATION_EVM:
                raise ConfigurationError(f"must lie in [0, {MAX_CALIBRATION_EVM})",
                                         f"{path}.evm_levels[{i}]")


@dataclass
class ScheduleSection:
    """Cluster geometry, sub-band plan and sweep of the scheduling experiment."""
    cluster_azimuths_deg: List[float] = field(default_factory=lambda: [-40.0, -10.0, 20.0, 50.0])
    cluster_elevation_deg: float = 0.0
    users_per_cluster: int = 3
    jitter_deg: float = 1.5
    n_coscheduled: int = 4
    block: int = 30
    offset: int = 4
    policies: List[str] = field(default_factory=lambda: ["aware", "unaware"])
    evm_levels: List[float] = field(default_factory=lambda: [0.0, 0.05, 0.10])
    snr_db: List[float] = field(default_factory=lambda: [-10.0, 0.0, 10.0, 20.0, 25.0])
    realizations: int = 20
    precoder: str = "mrt"

    def validate(self, path: str = "schedule", n_fft: int = 128) -> None:
        if not self.cluster_azimuths_deg:
            raise ConfigurationError("at least one cluster is required",
                                     _join(path, "cluster_azimuths_deg"))
        for i, az in enumerate(self.cluster_azimuths_deg):
            if not -90.0 < az < 90.0:
                raise ConfigurationError("must lie in (-90, 90)", f"{path}.cluster_azimuths_deg[{i}]")
        if self.users_per_cluster < 1:
            raise ConfigurationError("must be >= 1", _join(path, "users_per_cluster"))
        if self.jitter_deg < 0:
            raise ConfigurationError("must be >= 0", _join(path, "jitter_deg"))
        if self.n_coscheduled < 1:
            raise ConfigurationError("must be >= 1", _join(path, "n_coscheduled"))
        if self.offset + self.block * self.n_coscheduled > n_fft or self.block < 1:
            raise ConfigurationError(f"{self.n_coscheduled} blocks of {self.block} from "
                                     f"{self.offset} do not fit {n_fft} subcarriers",
                                     _join(path, "block"))
        for i, policy in enumerate(self.policies):
            _choice(policy, SchedulePolicy, f"{path}.policies[{i}]")
        for i, evm in enumerate(self.evm_levels):
            if not 0 <= evm < MAX_CALIBRATION_EVM:
                raise ConfigurationError(f"must lie in [0, {MAX_CALIBRATION_EVM})",
                                         f"{path}.evm_levels[{i}]")
        if self.realizations < 1:
            raise ConfigurationError("must be >= 1", _join(path, "realizations"))
        _choice(self.precoder, PrecoderKind, _join(path, "precoder"))


@dataclass
class ScanAxisConfig:
    axis: str = "azimuth"
    start: float = -90.0
    stop: float = 90.0
    step: Optional[float] = None

    def validate(self, path: str) -> None:
        _choice(self.axis, ScanAxis, _join(path, "axis"))
        if self.step is not None and not self.step > 0:
            raise ConfigurationError("must be positive", _join(path, "step"))
        if self.stop < self.start:
            raise ConfigurationError("stop must not be below start", _join(path, "stop"))
        if self.axis in ("azimuth", "elevation") and not (-90 <= self.start and self.stop <= 90):
            raise ConfigurationError("angles must lie in [-90, 90]", path)
        if self.axis == "range" and not self.start > 0:
            raise ConfigurationError("ranges must be positive", _join(path, "start"))


@dataclass
class ScanSection:
    """Radiation grid, spectral estimator and peak-matching tolerances.

    ``fixed`` holds the non-scanned coordinates by key ``azimuth_deg``,
    ``elevation_deg``, ``range_m`` (null for far field) and ``subcarrier``
    (null integrates over the band).
    """
    axes: List[ScanAxisConfig] = field(default_factory=lambda: [ScanAxisConfig()])
    fixed: Dict[str, Optional[float]] = field(default_factory=dict)
    estimator: str = "periodogram"
    order: int = 1
    min_prominence_db: float = 6.0
    floor_db: Optional[float] = 20.0
    angle_tolerance_deg: float = 1.0
    range_tolerance: float = 0.1

    def validate(self, path: str = "scan") -> None:
        if not 1 <= len(self.axes) <= 2:
            raise ConfigurationError("one or two axes are required", _join(path, "axes"))
        for i, axis in enumerate(self.axes):
            axis.validate(f"{path}.axes[{i}]")
        names = [a.axis for a in self.axes]
        if len(set(names)) != len(names):
            raise ConfigurationError(f"duplicate axes {names}", _join(path, "axes"))
        allowed = {"azimuth_deg", "elevation_deg", "range_m", "subcarrier"}
        unknown = sorted(set(self.fixed) - allowed)
        if unknown:
            raise ConfigurationError(f"unknown fixed coordinate(s) {unknown}", _join(path, "fixed"))
        _choice(self.estimator, SpectralEstimator, _join(path, "estimator"))
        if self.order < 1:
            raise ConfigurationError("must be >= 1", _join(path, "order"))
        if self.angle_tolerance_deg <= 0 or self.range_tolerance <= 0:
            raise ConfigurationError("tolerances must be positive", path)

    @classmethod
    def from_dict(cls, data: Any, path: str = "scan") -> "ScanSection":
        values = _fields_from(cls, data, path)
        axes = values.pop("axes", None)
        section = cls(**values)
        _coerce_numbers(section, path)
        if axes is not None:
            if not isinstance(axes, list):
                raise ConfigurationError("expected a list", _join(path, "axes"))
            section.axes = [ScanAxisConfig(**_fields_from(ScanAxisConfig, a, f"{path}.axes[{i}]"))
                            for i, a in enumerate(axes)]
            for i, axis in enumerate(section.axes):
                _coerce_numbers(axis, f"{path}.axes[{i}]")
        return section


@dataclass
class OutputSection:
    """Where artifacts go, worker count and PSD reporting units."""
    directory: str = "./output"
    workers: int = 1
    psd_reference: str = "relative"
    transmit_power_w: Optional[float] = None
    bandwidth_hz: Optional[float] = None

    def validate(self, path: str = "output") -> None:
        if not isinstance(self.workers, int) or self.workers < 1:
            raise ConfigurationError("must be an integer >= 1", _join(path, "workers"))
        if self.psd_reference not in ("relative", "absolute"):
            raise ConfigurationError("must be 'relative' or 'absolute'", _join(path, "psd_reference"))
        if self.psd_reference == "absolute" and not (self.transmit_power_w and self.bandwidth_hz):
            raise ConfigurationError("absolute PSD needs transmit_power_w and bandwidth_hz", path)


_SECTIONS = {
    "geometry": GeometryConfig,
    "pa": PaConfig,
    "ofdm": OfdmSection,
    "ris": RisSection,
    "link": LinkSection,
    "schedule": ScheduleSection,
    "output": OutputSection,
}


@dataclass
class Scenario:
    """A complete, reproducible experiment description."""

    name: str = "scenario"
    experiment: str = "radiate"
    mode: str = "elaa"
    rng_seed: Optional[int] = None
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    users: List[UserConfig] = field(default_factory=list)
    pa: PaConfig = field(default_factory=PaConfig)
    ofdm: OfdmSection = field(default_factory=OfdmSection)
    ris: Optional[RisSection] = None
    link: LinkSection = field(default_factory=LinkSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    scan: ScanSection = field(default_factory=ScanSection)
    output: OutputSection = field(default_factory=OutputSection)

    @classmethod
    def from_file(cls, config_path: PathLike) -> "Scenario":
        """Load a scenario from a YAML or JSON file."""
        path = Path(config_path)

        if not path.exists():
            raise FileNotFoundError(f"Scenario file not found: {config_path}")

        with open(path, 'r', encoding='utf-8') as f:
            try:
                if path.suffix.lower() in ['.yaml', '.yml']:
                    data = yaml.safe_load(f)
                elif path.suffix.lower() == '.json':
                    data = json.load(f)
                else:
                    raise ConfigurationError(f"Unsupported scenario file format: {path.suffix}")
            except (yaml.YAMLError, json.JSONDecodeError) as e:
                raise ConfigurationError(f"cannot parse {path}: {e}") from e

        scenario = cls.from_dict(data)
        scenario._load_env_overrides()
        return scenario

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Scenario":
        """Create a scenario from plain data, reporting bad fields by dotted path."""
        values = _fields_from(cls, data, "")
        if values.get("rng_seed") is None:
            raise ConfigurationError("a seed is mandatory", "rng_seed")
        try:
            for name, section_cls in _SECTIONS.items():
                if name in values and values[name] is not None:
                    values[name] = section_cls(**_fields_from(section_cls, values[name], name))
                    _coerce_numbers(values[name], name)
            if "scan" in values:
                values["scan"] = ScanSection.from_dict(values["scan"])
            users = values.get("users") or []
            if not isinstance(users, list):
                raise ConfigurationError("expected a list", "users")
            values["users"] = [UserConfig(**_fields_from(UserConfig, u, f"users[{i}]"))
                               for i, u in enumerate(users)]
            for i, user in enumerate(values["users"]):
                _coerce_numbers(user, f"users[{i}]")
        except TypeError as e:
            raise ConfigurationError(f"malformed scenario: {e}") from e
        return cls(**values)

    def to_dict(self) -> Dict[str, Any]:
        """Convert the scenario to plain data."""
        return dataclasses.asdict(self)

    def save(self, config_path: PathLike) -> None:
        """Save the scenario to a YAML or JSON file."""
        path = Path(config_path)
        data = self.to_dict()

        with open(path, 'w', encoding='utf-8') as f:
            if path.suffix.lower() in ['.yaml', '.yml']:
                yaml.safe_dump(data, f, default_flow_style=False, indent=2, sort_keys=False)
            elif path.suffix.lower() == '.json':
                json.dump(data, f, indent=2)
            else:
                raise ConfigurationError(f"Unsupported scenario file format: {path.suffix}")

    def validate(self) -> None:
        """Validate every section; the first problem is raised with its path."""
        if self.rng_seed is None:
            raise ConfigurationError("a seed is mandatory", "rng_seed")
        if not isinstance(self.rng_seed, int) or self.rng_seed < 0:
            raise ConfigurationError(f"must be a non-negative integer, got {self.rng_seed!r}",
                                     "rng_seed")
        _choice(self.experiment, Experiment, "experiment")
        _choice(self.mode, ArrayMode, "mode")
        self.geometry.validate()
        needs_users = self.experiment not in (Experiment.CALIBRATE.value, Experiment.SCHEDULE.value)
        if needs_users and not self.users:
            raise ConfigurationError(f"experiment {self.experiment!r} needs at least one user",
                                     "users")
        for i, user in enumerate(self.users):
            user.validate(f"users[{i}]")
        self.pa.validate()
        self.ofdm.validate()
        if self.ofdm.allocation == "subband" and self.users:
            end = self.ofdm.offset + self.ofdm.block * len(self.users)
            if end > self.ofdm.n_fft:
                raise ConfigurationError(f"{len(self.users)} blocks of {self.ofdm.block} from "
                                         f"{self.ofdm.offset} exceed n_fft={self.ofdm.n_fft}",
                                         "ofdm.block")
        if self.mode == ArrayMode.RIS.value and self.ris is None:
            raise ConfigurationError("RIS mode needs a ris section", "ris")
        if self.ris is not None:
            self.ris.validate()
        self.link.validate()
        if self.experiment == Experiment.SCHEDULE.value:
            self.schedule.validate(n_fft=self.ofdm.n_fft)
        self.scan.validate()
        self.output.validate()

    def fingerprint(self) -> str:
        """SHA-256 of the canonical JSON form."""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    # Convenience accessors for the library layer

    def user_points(self) -> List[SphericalPoint]:
        return [u.to_point() for u in self.users]

    def user_params(self) -> List[UserChannelParams]:
        return [u.to_params() for u in self.users]

    def pa_model(self) -> PaModel:
        return self.pa.to_model()

    def ofdm_config(self) -> OfdmConfig:
        return self.ofdm.to_ofdm(len(self.users))

    def _load_env_overrides(self):
        """Load environment variable overrides."""
        if os.environ.get("NFD_OUTPUT_DIR"):
            self.output.directory = os.environ["NFD_OUTPUT_DIR"]
        if os.environ.get("NFD_WORKERS"):
            try:
                self.output.workers = int(os.environ["NFD_WORKERS"])
            except ValueError:
                raise ConfigurationError(f"NFD_WORKERS must be an integer, got "
                                         f"{os.environ['NFD_WORKERS']!r}", "output.workers") from None
