"""
Efficiency chains between the squeezer and the photocurrent.

A chain is an ordered list of power-efficiency stages. Each stage mixes the
squeezed field with vacuum (V' = eta*V + 1 - eta), so only the product of the
stage efficiencies matters for the detected level; the order is kept for the
per-stage report. Stages may be plain numbers or derived from the detector
geometry (the signal-recycling cavity reflection of the squeezed field).
"""

import cmath
import logging
import math
from dataclasses import dataclass, field
from typing import List, Literal, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict, model_validator

from tools.exceptions import DomainError, InfeasibleMeasurementError, SingularityError
from tools.gaussian_state import (
    QuadratureState,
    SqueezeLevel,
    apply_loss,
    dephase,
    from_db,
    variance_to_db,
)

logger = logging.getLogger(__name__)

SINGULARITY_EPS = 1e-12
OffsetConvention = Literal["phase", "fringe"]
DERIVED_STAGES = ("src_reflection",)


class EfficiencyStage(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str
    eta: Optional[float] = None
    derived: Optional[Literal["src_reflection"]] = None

    @model_validator(mode="after")
    def _has_source(self):
        if self.eta is None and self.derived is None:
            raise ValueError(f"stage '{self.name}' needs either 'eta' or 'derived'")
        return self

    def to_json_dict(self) -> dict:
        # derived stages are recomputed on load, so only the recipe is stored
        if self.derived is not None:
            return {"name": self.name, "derived": self.derived}
        return {"name": self.name, "eta": self.eta}


class EfficiencyChain(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    stages: Tuple[EfficiencyStage, ...] = ()

    @model_validator(mode="before")
    @classmethod
    def _accept_list(cls, data):
        if isinstance(data, (list, tuple)):
            return {"stages": list(data)}
        return data

    @classmethod
    def from_etas(cls, etas: Sequence[float], names: Sequence[str] = None) -> "EfficiencyChain":
        names = names or [f"stage_{i + 1}" for i in range(len(etas))]
        return cls(stages=tuple(EfficiencyStage(name=n, eta=float(e)) for n, e in zip(names, etas)))

    @property
    def is_resolved(self) -> bool:
        return all(s.eta is not None for s in self.stages)

    def to_json_list(self) -> list:
        return [s.to_json_dict() for s in self.stages]


@dataclass(frozen=True)
class Propagation:
    source: QuadratureState
    state: QuadratureState
    level: SqueezeLevel
    r_eff: float
    composite_eta: float
    jitter_sigma: float
    dark_noise_floor: Optional[float] = None


@dataclass
class StageRow:
    name: str
    eta: float
    cumulative_eta: float
    cumulative_db: float
    derived: Optional[str] = None


@dataclass
class ChainReport:
    preset: str
    direction: str
    stages: List[StageRow]
    composite_eta: float
    input_db: float
    detected_db: float
    r_eff: float
    antisqz_db: Optional[float] = None
    jitter_sigma: float = 0.0
    reference_db: Optional[float] = None
    residual_db: Optional[float] = None
    notes: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "preset": self.preset,
            "direction": self.direction,
            "stages": [row.__dict__ for row in self.stages],
            "composite_eta": self.composite_eta,
            "input_db": self.input_db,
            "detected_db": self.detected_db,
            "r_eff": self.r_eff,
            "antisqz_db": self.antisqz_db,
            "jitter_sigma_rad": self.jitter_sigma,
            "reference_db": self.reference_db,
            "residual_db": self.residual_db,
            "notes": list(self.notes),
        }


def composite(chain: EfficiencyChain) -> float:
    """Product of the stage efficiencies."""
    if not chain.stages:
        raise DomainError("efficiency chain is empty")
    if not chain.is_resolved:
        missing = [s.name for s in chain.stages if s.eta is None]
        raise DomainError(f"chain has unresolved derived stages: {missing}")
    return math.prod(s.eta for s in chain.stages)


def _round_trip(r_s: float, r_m: float, phi: float) -> complex:
    denom = 1.0 - r_s * r_m * cmath.exp(-2j * phi)
    if abs(denom) < SINGULARITY_EPS:
        raise SingularityError(
            f"signal-recycling cavity is singular (|1 - r_s r_m e^-2i phi| = {abs(denom):.3g})"
        )
    return denom


def offset_r_m(r_m: float, offset: float, convention: OffsetConvention = "phase") -> float:
    """Michelson reflectivity reduced by the static differential offset."""
    if convention == "fringe":
        return r_m * math.cos(offset)
    return r_m * math.cos(2.0 * offset)


def fringe_factor(offset: float, convention: OffsetConvention = "phase") -> float:
    """Fraction of the beamsplitter power leaving the Michelson dark port."""
    if convention == "fringe":
        return math.sin(0.5 * offset) ** 2
    return math.sin(offset) ** 2


def src_reflection_efficiency(
    r_s: float,
    r_m: float,
    phi: float = 0.0,
    offset: float = 0.0,
    convention: OffsetConvention = "phase",
) -> float:
    """Power reflectivity of the signal-recycling cavity seen by the injected squeezed field."""
    r_m_eff = offset_r_m(r_m, offset, convention)
    round_trip = cmath.exp(-2j * phi)
    denom = _round_trip(r_s, r_m_eff, phi)
    r_cav = (r_m_eff * round_trip - r_s) / denom
    return abs(r_cav) ** 2


def dark_port_power(
    power: float,
    offset: float,
    r_s: float,
    r_m: float,
    phi: float = 0.0,
    convention: OffsetConvention = "phase",
) -> float:
    """Carrier power at the output: P * fringe factor * SRC transmission t_s^2/|1 - r_s r_m e^-2i phi|^2.

    This is a model, not a calibrated prediction; the measured output power is
    compared against it in reports.
    """
    t_s2 = 1.0 - r_s * r_s
    transmission = t_s2 / abs(_round_trip(r_s, r_m, phi)) ** 2
    return power * fringe_factor(offset, convention) * transmission


def resolve_chain(
    chain: EfficiencyChain,
    r_s: float,
    r_m: float,
    phi: float = 0.0,
    offset: float = 0.0,
    convention: OffsetConvention = "phase",
) -> EfficiencyChain:
    """Fill in the efficiency of derived stages from the detector geometry."""
    stages = []
    for stage in chain.stages:
        if stage.derived == "src_reflection":
            eta = src_reflection_efficiency(r_s, r_m, phi, offset, convention)
            stage = stage.model_copy(update={"eta": eta})
        stages.append(stage)
    return EfficiencyChain(stages=tuple(stages))


def apply_dark_noise(variance: float, floor: float) -> float:
    """Add a squeezing-independent electronic floor, referenced to the unsqueezed (vacuum + floor) level."""
    return (variance + floor) / (1.0 + floor)


def propagate(
    squeezer,
    chain: EfficiencyChain,
    jitter_sigma: float = None,
    dark_noise_floor: float = None,
) -> Propagation:
    """Send the OPO output through the chain, then average over squeeze-phase jitter."""
    if jitter_sigma is None:
        jitter_sigma = squeezer.phase_jitter_rms
    source = from_db(squeezer.source_sqz_db, squeezer.antisqz_db)
    eta = composite(chain)
    state = dephase(apply_loss(source, eta), jitter_sigma)
    variance = state.v_min
    if dark_noise_floor is not None:
        variance = apply_dark_noise(variance, dark_noise_floor)
    level = SqueezeLevel(variance_to_db(variance))
    r_eff = -0.5 * math.log(variance)
    logger.debug(
        "propagated %.3f dB through eta=%.5f (sigma=%.3g rad) -> %.3f dB, r_eff=%.4f",
        squeezer.source_sqz_db, eta, jitter_sigma, level.db, r_eff,
    )
    return Propagation(source, state, level, r_eff, eta, jitter_sigma, dark_noise_floor)


def effective_squeeze(squeezer, chain: EfficiencyChain, jitter_sigma: float = None,
                      dark_noise_floor: float = None) -> float:
    return propagate(squeezer, chain, jitter_sigma, dark_noise_floor).r_eff


def infer_source(measured: Union[SqueezeLevel, float], monitor_chain: EfficiencyChain) -> SqueezeLevel:
    """Invert V_meas = eta*V_src + (1 - eta) for the squeezing at the OPO output."""
    if not isinstance(measured, SqueezeLevel):
        measured = SqueezeLevel(float(measured))
    eta = composite(monitor_chain)
    v_src = (measured.variance - (1.0 - eta)) / eta
    if v_src <= 0:
        raise InfeasibleMeasurementError(
            f"{measured.db:.3f} dB cannot be measured through an efficiency of {eta:.4f}: "
            f"the implied source variance is {v_src:.4g} <= 0"
        )
    return SqueezeLevel(variance_to_db(v_src))


def _stage_rows(source: QuadratureState, chain: EfficiencyChain) -> List[StageRow]:
    rows = []
    cumulative = 1.0
    for stage in chain.stages:
        cumulative *= stage.eta
        after = apply_loss(source, cumulative)
        rows.append(StageRow(stage.name, stage.eta, cumulative, after.squeeze_db, stage.derived))
    return rows


def chain_report(
    squeezer,
    chain: EfficiencyChain,
    preset: str = "injection",
    jitter_sigma: float = None,
    dark_noise_floor: float = None,
) -> ChainReport:
    """Forward report: source squeezing stage by stage down to the detected level."""
    result = propagate(squeezer, chain, jitter_sigma, dark_noise_floor)
    report = ChainReport(
        preset=preset,
        direction="forward",
        stages=_stage_rows(result.source, chain),
        composite_eta=result.composite_eta,
        input_db=squeezer.source_sqz_db,
        detected_db=result.level.db,
        r_eff=result.r_eff,
        antisqz_db=squeezer.antisqz_db,
        jitter_sigma=result.jitter_sigma,
    )
    if result.jitter_sigma > 0 or dark_noise_floor is not None:
        # no power is lost here; the row carries the level after jitter and electronic noise
        report.stages.append(
            StageRow("readout_jitter_dark_noise", 1.0, result.composite_eta, result.level.db, "readout")
        )
    if getattr(squeezer, "antisqz_assumed_pure", False):
        report.notes.append("anti-squeezing not configured; pure-state value assumed")
    if dark_noise_floor is not None:
        report.notes.append(f"electronic noise floor {dark_noise_floor:.4g} shot units included")
    else:
        report.notes.append("electronic noise floor not included (pre-dark-noise level)")
    return report


def inference_report(
    measured_db: float,
    monitor_chain: EfficiencyChain,
    reference_db: float = None,
    preset: str = "monitor",
) -> ChainReport:
    """Inverse report: source squeezing inferred from a monitored measurement."""
    inferred = infer_source(measured_db, monitor_chain)
    report = ChainReport(
        preset=preset,
        direction="inverse",
        stages=_stage_rows(from_db(inferred.db), monitor_chain),
        composite_eta=composite(monitor_chain),
        input_db=measured_db,
        detected_db=inferred.db,
        r_eff=inferred.r,
        reference_db=reference_db,
    )
    if reference_db is not None:
        report.residual_db = inferred.db - reference_db
        # the monitor path may hold losses beyond QE x homodyne efficiency; the residual is reported, not fitted
        report.notes.append(
            f"inferred {inferred.db:.3f} dB vs quoted {reference_db:.3f} dB (residual {report.residual_db:+.3f} dB)"
        )
    return report
