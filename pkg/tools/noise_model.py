"""
Displacement noise model of a signal-recycled Michelson interferometer.

All spectral densities are one-sided amplitude spectral densities in m/sqrt(Hz).
Squeezing only acts on the shot-noise component; radiation pressure is kept
in the budget for completeness but has never been observed at these scales,
so reports mark it as model-only.
"""

import cmath
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from tools.exceptions import DomainError, SingularityError
from tools.loss_chain import SINGULARITY_EPS, EfficiencyChain, effective_squeeze
from tools.params import (
    DEFAULT_CONSTANTS,
    ClassicalNoiseConfig,
    DetectorConfig,
    PhysicalConstants,
    SqueezerConfig,
    ToolkitConfig,
)

logger = logging.getLogger(__name__)

BUDGET_COLUMNS = ["f_hz", "shot", "rad_pressure", "classical", "total"]
CSV_FLOAT_FORMAT = "%.17g"

ArrayLike = Union[float, Sequence[float], np.ndarray]


@dataclass
class NoiseBudget:
    frequencies: np.ndarray
    components: Dict[str, np.ndarray]
    total: np.ndarray
    r_eff: float = 0.0
    squeezing: bool = False
    notes: List[str] = field(default_factory=list)

    @property
    def classical_total(self) -> np.ndarray:
        return np.hypot(self.components["classical"], self.components["lines"])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "f_hz": self.frequencies,
                "shot": self.components["shot"],
                "rad_pressure": self.components["radiation_pressure"],
                "classical": self.classical_total,
                "total": self.total,
            },
            columns=BUDGET_COLUMNS,
        )


def _positive(name: str, value: ArrayLike):
    if np.any(np.asarray(value) <= 0):
        raise DomainError(f"{name} must be positive")


def frequency_grid(fmin: float, fmax: float, points: int, scale: str = "log") -> np.ndarray:
    if points < 1:
        raise DomainError(f"grid needs at least one point, got {points}")
    if fmin <= 0:
        raise DomainError(f"grid start must be positive, got {fmin}")
    if points == 1:
        return np.array([float(fmin)])
    if fmax <= fmin:
        raise DomainError(f"grid end {fmax} must exceed start {fmin}")
    if scale == "linear":
        return np.linspace(fmin, fmax, points)
    if scale == "log":
        return np.geomspace(fmin, fmax, points)
    raise DomainError(f"unknown grid scale '{scale}'")


def shot_noise_asd(power: float, wavelength: float, constants: PhysicalConstants = DEFAULT_CONSTANTS) -> float:
    """Shot noise of a simple Michelson on a dark fringe: sqrt(hbar c lambda / (pi P))."""
    _positive("power", power)
    _positive("wavelength", wavelength)
    return math.sqrt(constants.hbar * constants.c * wavelength / (math.pi * power))


def radiation_pressure_asd(
    power: float,
    wavelength: float,
    mirror_mass: float,
    f: ArrayLike,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
):
    """Radiation-pressure noise sqrt(hbar P / (pi^3 c lambda m^2 f^4)); scales as sqrt(P)/(m f^2)."""
    for name, value in (("power", power), ("wavelength", wavelength), ("mirror mass", mirror_mass), ("frequency", f)):
        _positive(name, value)
    f = np.asarray(f, dtype=float)
    value = np.sqrt(constants.hbar * power / (math.pi ** 3 * constants.c * wavelength * mirror_mass ** 2)) / f ** 2
    return float(value) if value.ndim == 0 else value


def recycling_gain(r_s: float, r_m: float, phi: float) -> float:
    """|t_s / (1 - r_s r_m e^{-2i phi})|^2 with t_s = sqrt(1 - r_s^2)."""
    if not (0 <= r_s < 1 and 0 <= r_m <= 1):
        raise DomainError(f"need 0 <= r_s < 1 and 0 <= r_m <= 1, got r_s={r_s}, r_m={r_m}")
    denom = 1.0 - r_s * r_m * cmath.exp(-2j * phi)
    if abs(denom) < SINGULARITY_EPS:
        raise SingularityError(f"recycling gain diverges at r_s={r_s}, r_m={r_m}, phi={phi}")
    return (1.0 - r_s * r_s) / abs(denom) ** 2


def srmi_shot_asd(
    detector: DetectorConfig,
    r_eff: float = 0.0,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
) -> float:
    """Shot-noise-limited SRMI sensitivity: |G|^{-1/2} sqrt(hbar c lambda / (pi eta P)) e^{-r_eff}."""
    gain = recycling_gain(detector.r_s, detector.r_m, detector.detuning)
    base = shot_noise_asd(detector.eta_det * detector.power_bs, detector.wavelength, constants)
    return base / math.sqrt(gain) * math.exp(-r_eff)


def classical_amp_for_crossover(level: float, f_cross: float, slope: float) -> float:
    """amp_1hz that puts amp_1hz * f^-slope at `level` when f = f_cross."""
    return level * f_cross ** slope


def classical_power_law_asd(cfg: ClassicalNoiseConfig, f: ArrayLike):
    _positive("frequency", f)
    f = np.asarray(f, dtype=float)
    return cfg.amp_1hz * f ** (-cfg.slope)


def classical_lines_asd(cfg: ClassicalNoiseConfig, f: ArrayLike):
    """Narrow Lorentzian features added in quadrature; amplitude is the peak ASD, width the HWHM."""
    f = np.asarray(f, dtype=float)
    power = np.zeros_like(f)
    for line in cfg.lines:
        detune = (f - line.frequency) / line.width
        power = power + line.amplitude ** 2 / (1.0 + detune ** 2)
    return np.sqrt(power)


def classical_floor_asd(cfg: ClassicalNoiseConfig, f: ArrayLike):
    value = np.hypot(classical_power_law_asd(cfg, f), classical_lines_asd(cfg, f))
    return float(value) if np.ndim(value) == 0 else value


def _resolve_r_eff(config: ToolkitConfig, squeezer, chain, r_eff) -> float:
    if r_eff is not None:
        return float(r_eff)
    if squeezer is None:
        return 0.0
    if chain is None:
        chain = config.chain("injection")
    return effective_squeeze(squeezer, chain, dark_noise_floor=config.readout.dark_noise_floor)


def assemble_budget(
    config: ToolkitConfig,
    squeezer: Optional[SqueezerConfig],
    chain: Optional[EfficiencyChain],
    grid: ArrayLike,
    r_eff: Optional[float] = None,
) -> NoiseBudget:
    """Per-component ASDs and their quadrature sum on `grid`.

    `squeezer=None` means no squeezing. With a squeezer, the squeeze factor is
    propagated through `chain` (the injection preset when None) unless `r_eff`
    overrides it.
    """
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    if grid.size == 0:
        raise DomainError("frequency grid is empty")
    if grid.size > 1 and np.any(np.diff(grid) <= 0):
        raise DomainError("frequency grid must be strictly increasing")
    _positive("frequency", grid)

    detector = config.detector
    constants = config.constants
    squeeze = _resolve_r_eff(config, squeezer, chain, r_eff)

    shot = np.full(grid.shape, srmi_shot_asd(detector, squeeze, constants))
    rad = radiation_pressure_asd(detector.power_bs, detector.wavelength, detector.mirror_mass, grid, constants)
    classical = classical_power_law_asd(config.classical, grid)
    lines = classical_lines_asd(config.classical, grid)
    total = np.sqrt(shot ** 2 + rad ** 2 + classical ** 2 + lines ** 2)

    budget = NoiseBudget(
        frequencies=grid,
        components={"shot": shot, "radiation_pressure": rad, "classical": classical, "lines": lines},
        total=total,
        r_eff=squeeze,
        squeezing=squeezer is not None or (r_eff is not None and r_eff != 0),
    )
    budget.notes.append("radiation pressure is model-only (never observed at these scales)")
    if detector.detuning != 0:
        budget.notes.append(f"detuning {detector.detuning:.4g} rad is an extrapolation; fitted operating point is 0")
        logger.debug("detuned recycling gain (phi=%.4g rad) is extrapolated", detector.detuning)
    return budget


def crossover_frequency(budget: NoiseBudget) -> Optional[float]:
    """Lowest frequency where the classical floor drops to the shot level (log-log interpolation)."""
    shot = budget.components["shot"]
    excess = np.log(np.maximum(budget.classical_total, 1e-300)) - np.log(shot)
    f = budget.frequencies
    for i in range(len(f) - 1):
        if excess[i] >= 0 > excess[i + 1]:
            w = excess[i] / (excess[i] - excess[i + 1])
            return float(math.exp(math.log(f[i]) + w * (math.log(f[i + 1]) - math.log(f[i]))))
    return None


def snr_gain(r_eff: float):
    """SNR improvement e^{r_eff} and detection-rate gain (SNR ratio cubed, isotropic sources)."""
    if r_eff < 0:
        raise DomainError(f"r_eff must be non-negative, got {r_eff}")
    ratio = math.exp(r_eff)
    return ratio, ratio ** 3


def write_budget_csv(budget: NoiseBudget, path: Union[str, Path]) -> Path:
    from tools.file_utils import atomic_write_text

    text = budget.to_frame().to_csv(index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    return atomic_write_text(path, text)


def read_budget_csv(path: Union[str, Path]) -> pd.DataFrame:
    frame = pd.read_csv(path, dtype=float, float_precision="round_trip")
    if list(frame.columns) != BUDGET_COLUMNS:
        raise DomainError(f"{path} is not a budget CSV (columns {list(frame.columns)})")
    return frame
