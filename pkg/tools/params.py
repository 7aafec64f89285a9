"""
Physical constants, validated configuration models and config file I/O.

Config files are JSON with unit-suffixed keys. Parsing (types, unknown keys,
required fields) is pydantic's job; physical range checks live in
``validate`` so that an out-of-range config can still be built and every
violation reported at once.
"""

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import scipy.constants
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from shared.config import GRID_FMAX_HZ, GRID_FMIN_HZ, GRID_POINTS, GRID_SCALE
from tools.exceptions import ConfigError, ConfigValidationError
from tools.loss_chain import DERIVED_STAGES, EfficiencyChain, resolve_chain

logger = logging.getLogger(__name__)

# file keys are the unit-suffixed aliases only; in-code updates go through with_updates()
_FROZEN = ConfigDict(frozen=True, extra="forbid")


class PhysicalConstants(BaseModel):
    model_config = _FROZEN

    c: float = Field(scipy.constants.c, alias="c_m_per_s")
    hbar: float = Field(scipy.constants.hbar, alias="hbar_j_s")


DEFAULT_CONSTANTS = PhysicalConstants()


def _amplitude_from_power(data: dict, amplitude_key: str, power_key: str) -> dict:
    if power_key not in data:
        return data
    if amplitude_key in data:
        raise ValueError(f"give either '{amplitude_key}' or '{power_key}', not both")
    data = dict(data)
    power = data.pop(power_key)
    if isinstance(power, (int, float)):
        # a negative power reflectivity is carried through as NaN and reported by validate()
        data[amplitude_key] = math.sqrt(power) if power >= 0 else float("nan")
    else:
        data[amplitude_key] = power
    return data


class DetectorConfig(BaseModel):
    model_config = _FROZEN

    wavelength: float = Field(alias="wavelength_m")
    power_bs: float = Field(alias="power_bs_w")
    r_s: float = Field(alias="r_s_amplitude")
    r_m: float = Field(alias="r_m_amplitude")
    detuning: float = Field(0.0, alias="detuning_rad")
    michelson_offset: float = Field(0.0, alias="offset_rad")
    eta_det: float = Field(alias="eta_det")
    mirror_mass: float = Field(alias="mirror_mass_kg")

    @model_validator(mode="before")
    @classmethod
    def _normalize(cls, data: Any):
        if not isinstance(data, dict):
            return data
        data = _amplitude_from_power(data, "r_s_amplitude", "R_s_power")
        data = _amplitude_from_power(data, "r_m_amplitude", "R_m_power")
        if "offset_pi_over" in data:
            if "offset_rad" in data:
                raise ValueError("give either 'offset_rad' or 'offset_pi_over', not both")
            data = dict(data)
            divisor = data.pop("offset_pi_over")
            if isinstance(divisor, bool) or not isinstance(divisor, (int, float)) or divisor == 0:
                raise ValueError(f"'offset_pi_over' must be a nonzero number, got {divisor!r}")
            data["offset_rad"] = math.pi / divisor
        return data

    @property
    def t_s(self) -> float:
        # lossless mirror; any SRM loss is booked as an efficiency stage
        return math.sqrt(1.0 - self.r_s ** 2)


class SqueezerConfig(BaseModel):
    model_config = _FROZEN

    source_sqz_db: float = Field(alias="source_sqz_db")
    source_antisqz_db: Optional[float] = Field(None, alias="source_antisqz_db")
    phase_jitter_rms: float = Field(0.0, alias="phase_jitter_rms_rad")

    @property
    def antisqz_db(self) -> float:
        return self.source_sqz_db if self.source_antisqz_db is None else self.source_antisqz_db

    @property
    def antisqz_assumed_pure(self) -> bool:
        return self.source_antisqz_db is None


class ClassicalLine(BaseModel):
    model_config = _FROZEN

    frequency: float = Field(alias="f_hz")
    amplitude: float = Field(alias="amp_m")
    width: float = Field(1.0, alias="width_hz")


class ClassicalNoiseConfig(BaseModel):
    model_config = _FROZEN

    amp_1hz: float = Field(0.0, alias="amp_1hz_m")
    slope: float = Field(2.0, alias="slope")
    lines: Tuple[ClassicalLine, ...] = Field((), alias="lines")


class ReadoutConfig(BaseModel):
    model_config = _FROZEN

    dark_noise_db_below_shot: float = 6.0
    include_dark_noise: bool = False
    offset_convention: Literal["phase", "fringe"] = "phase"

    @property
    def dark_noise_floor(self) -> Optional[float]:
        if not self.include_dark_noise:
            return None
        return 10.0 ** (-self.dark_noise_db_below_shot / 10.0)


class ReferenceValues(BaseModel):
    """Measured values quoted alongside model predictions in reports."""

    model_config = _FROZEN

    shot_floor_m: Optional[float] = None
    squeezed_floor_m: Optional[float] = None
    squeeze_factor: Optional[float] = None
    monitor_measured_db: Optional[float] = None
    output_power_w: Optional[float] = None
    calibration_uncertainty: Optional[float] = None
    shot_limited_above_hz: Optional[float] = None


class GridConfig(BaseModel):
    model_config = _FROZEN

    fmin: float = Field(GRID_FMIN_HZ, alias="fmin_hz")
    fmax: float = Field(GRID_FMAX_HZ, alias="fmax_hz")
    points: int = GRID_POINTS
    scale: Literal["log", "linear"] = GRID_SCALE


class ToolkitConfig(BaseModel):
    model_config = _FROZEN

    description: str = ""
    constants: PhysicalConstants = DEFAULT_CONSTANTS
    detector: DetectorConfig
    squeezer: SqueezerConfig = SqueezerConfig(source_sqz_db=0.0)
    classical: ClassicalNoiseConfig = ClassicalNoiseConfig()
    chains: Dict[str, EfficiencyChain] = Field(default_factory=dict)
    readout: ReadoutConfig = ReadoutConfig()
    reference: ReferenceValues = ReferenceValues()
    grid: GridConfig = GridConfig()

    def chain(self, preset: str) -> EfficiencyChain:
        """Named efficiency chain with derived stages filled from the detector geometry."""
        if preset not in self.chains:
            raise ConfigError(f"no efficiency chain preset '{preset}' (have: {sorted(self.chains)})")
        d = self.detector
        return resolve_chain(
            self.chains[preset], d.r_s, d.r_m, d.detuning, d.michelson_offset, self.readout.offset_convention
        )

    def with_updates(self, **sections) -> "ToolkitConfig":
        """Copy with nested field updates, e.g. with_updates(detector={"power_bs": 0.03})."""
        update = {}
        for section, values in sections.items():
            update[section] = getattr(self, section).model_copy(update=values)
        return self.model_copy(update=update)


@dataclass(frozen=True)
class Violation:
    field: str
    value: Any
    rule: str

    def __str__(self):
        return f"{self.field} = {self.value!r}: {self.rule}"


def _check(violations: List[Violation], ok: bool, field: str, value: Any, rule: str):
    # NaN fails every comparison, so it is reported like any other range violation
    if not ok:
        violations.append(Violation(field, value, rule))


def validate(config: Union[ToolkitConfig, DetectorConfig, SqueezerConfig, ClassicalNoiseConfig]) -> List[Violation]:
    """Every violated invariant, with field name, value and rule. Empty means valid."""
    if isinstance(config, DetectorConfig):
        return _validate_detector(config, "detector")
    if isinstance(config, SqueezerConfig):
        return _validate_squeezer(config, "squeezer")
    if isinstance(config, ClassicalNoiseConfig):
        return _validate_classical(config, "classical")

    v: List[Violation] = []
    k = config.constants
    _check(v, k.c > 0, "constants.c", k.c, "must be > 0")
    _check(v, k.hbar > 0, "constants.hbar", k.hbar, "must be > 0")
    v += _validate_detector(config.detector, "detector")
    v += _validate_squeezer(config.squeezer, "squeezer")
    v += _validate_classical(config.classical, "classical")
    for name, chain in config.chains.items():
        _check(v, len(chain.stages) > 0, f"chains.{name}", [], "chain must have at least one stage")
        for i, stage in enumerate(chain.stages):
            path = f"chains.{name}[{i}].eta"
            if stage.derived is not None:
                _check(v, stage.derived in DERIVED_STAGES, f"chains.{name}[{i}].derived", stage.derived,
                       f"must be one of {DERIVED_STAGES}")
            else:
                _check(v, 0 < stage.eta <= 1, path, stage.eta, "must satisfy 0 < eta <= 1")
    g = config.grid
    _check(v, g.fmin > 0, "grid.fmin", g.fmin, "must be > 0")
    _check(v, g.points >= 1, "grid.points", g.points, "must be >= 1")
    _check(v, g.points == 1 or g.fmax > g.fmin, "grid.fmax", g.fmax, "must exceed grid.fmin")
    _check(v, config.readout.dark_noise_db_below_shot > 0, "readout.dark_noise_db_below_shot",
           config.readout.dark_noise_db_below_shot, "must be > 0")
    return v


def _validate_detector(d: DetectorConfig, prefix: str) -> List[Violation]:
    v: List[Violation] = []
    _check(v, d.wavelength > 0, f"{prefix}.wavelength", d.wavelength, "must be > 0")
    _check(v, d.power_bs > 0, f"{prefix}.power_bs", d.power_bs, "must be > 0")
    _check(v, 0 < d.r_s < 1, f"{prefix}.r_s", d.r_s, "must satisfy 0 < r_s < 1")
    _check(v, 0 < d.r_m <= 1, f"{prefix}.r_m", d.r_m, "must satisfy 0 < r_m <= 1")
    _check(v, 0 < d.eta_det <= 1, f"{prefix}.eta_det", d.eta_det, "must satisfy 0 < eta_det <= 1")
    _check(v, d.mirror_mass > 0, f"{prefix}.mirror_mass", d.mirror_mass, "must be > 0")
    _check(v, math.isfinite(d.detuning), f"{prefix}.detuning", d.detuning, "must be finite")
    _check(v, math.isfinite(d.michelson_offset), f"{prefix}.michelson_offset", d.michelson_offset, "must be finite")
    return v


def _validate_squeezer(s: SqueezerConfig, prefix: str) -> List[Violation]:
    v: List[Violation] = []
    _check(v, s.source_sqz_db >= 0, f"{prefix}.source_sqz_db", s.source_sqz_db, "must be >= 0")
    _check(v, s.antisqz_db >= s.source_sqz_db, f"{prefix}.source_antisqz_db", s.antisqz_db,
           "must be >= source_sqz_db (uncertainty bound)")
    _check(v, s.phase_jitter_rms >= 0, f"{prefix}.phase_jitter_rms", s.phase_jitter_rms, "must be >= 0")
    return v


def _validate_classical(c: ClassicalNoiseConfig, prefix: str) -> List[Violation]:
    v: List[Violation] = []
    _check(v, c.amp_1hz >= 0, f"{prefix}.amp_1hz", c.amp_1hz, "must be >= 0")
    _check(v, c.slope > 0, f"{prefix}.slope", c.slope, "must be > 0")
    seen = set()
    for i, line in enumerate(c.lines):
        _check(v, line.frequency > 0, f"{prefix}.lines[{i}].frequency", line.frequency, "must be > 0")
        _check(v, line.frequency not in seen, f"{prefix}.lines[{i}].frequency", line.frequency,
               "line frequencies must be distinct")
        _check(v, line.amplitude >= 0, f"{prefix}.lines[{i}].amplitude", line.amplitude, "must be >= 0")
        _check(v, line.width > 0, f"{prefix}.lines[{i}].width", line.width, "must be > 0")
        seen.add(line.frequency)
    return v


def parse_config(data: dict) -> ToolkitConfig:
    """Build a config from already-decoded JSON, raising ConfigError/ConfigValidationError."""
    try:
        config = ToolkitConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"config does not match the schema:\n{e}") from e
    violations = validate(config)
    if violations:
        raise ConfigValidationError(violations)
    return config


def load_config(path: Union[str, Path]) -> ToolkitConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    config = parse_config(data)
    logger.debug("loaded config %s", path)
    if config.squeezer.antisqz_assumed_pure:
        logger.info("source_antisqz_db not set; assuming a pure squeezed state")
    return config


def to_json_dict(config: ToolkitConfig) -> dict:
    """JSON-ready dict using the file schema (amplitude reflectivities, unit-suffixed keys)."""
    data = config.model_dump(by_alias=True, exclude={"chains"})
    data["squeezer"] = config.squeezer.model_dump(by_alias=True, exclude_none=True)
    data["chains"] = {name: chain.to_json_list() for name, chain in config.chains.items()}
    return data


def serialize(config: ToolkitConfig) -> str:
    # json writes floats with repr(), the shortest text that round-trips exactly
    return json.dumps(to_json_dict(config), indent=2, ensure_ascii=False) + "\n"


def dump_config(config: ToolkitConfig, path: Union[str, Path]) -> Path:
    from tools.file_utils import atomic_write_text

    return atomic_write_text(path, serialize(config))
