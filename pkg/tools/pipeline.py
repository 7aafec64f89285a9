"""
Subcommand pipelines: config and input files in, artifacts and a JSON-ready summary out.

Every run_* function returns a PipelineResult; main.py prints the summary and
writes the run manifest next to each artifact.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from shared.config import (
    DURATION_S,
    FIT_BAND_HZ,
    FLOOR_BAND_HZ,
    SAMPLE_RATE_HZ,
    SEGMENT_LENGTH,
    SHOT_BAND_HZ,
    SYNTH_BAND_HZ,
)
from tools.exceptions import ConfigValidationError, InputFileError
from tools.file_utils import atomic_write_text, write_json
from tools.fitting import FitProblem, FitSpectrum, fit, fit_report, parse_free, profile
from tools.loss_chain import chain_report, dark_port_power, inference_report
from tools.noise_model import (
    assemble_budget,
    crossover_frequency,
    frequency_grid,
    snr_gain,
    write_budget_csv,
)
from tools.params import ToolkitConfig, Violation, load_config
from tools.spectra import (
    Spectrum,
    band_median,
    line_snr,
    read_spectrum_csv,
    synthesize,
    welch_asd,
    write_spectrum_csv,
    write_timeseries,
)

logger = logging.getLogger(__name__)


@dataclass
class PipelineResult:
    summary: dict
    artifacts: List[Path] = field(default_factory=list)


def summary_path(artifact: Path) -> Path:
    return artifact.with_name(artifact.stem + ".summary.json")


def load_spectrum(path) -> Spectrum:
    path = Path(path)
    if not path.is_file():
        raise InputFileError(f"spectrum file not found: {path}")
    try:
        return read_spectrum_csv(path)
    except (OSError, ValueError, KeyError, pd.errors.ParserError) as e:
        raise InputFileError(f"cannot read spectrum {path}: {e}") from e


# 1. Noise budget with and without squeezing

def output_power_report(config: ToolkitConfig) -> dict:
    """Modelled dark-port carrier power for both offset conventions against the measured value."""
    d = config.detector
    model = {
        convention: dark_port_power(d.power_bs, d.michelson_offset, d.r_s, d.r_m, d.detuning, convention)
        for convention in ("phase", "fringe")
    }
    report = {
        "convention": config.readout.offset_convention,
        "model_w": model[config.readout.offset_convention],
        "model_phase_w": model["phase"],
        "model_fringe_w": model["fringe"],
        "measured_w": config.reference.output_power_w,
    }
    measured = config.reference.output_power_w
    if measured:
        report["model_over_measured"] = report["model_w"] / measured
        if not 0.5 <= report["model_over_measured"] <= 2.0:
            logger.warning(
                "modelled output power %.3g W differs from the measured %.3g W (offset convention '%s')",
                report["model_w"], measured, report["convention"],
            )
    return report


def run_budget(
    config: ToolkitConfig,
    out: Path,
    squeezing: bool = False,
    fmin: Optional[float] = None,
    fmax: Optional[float] = None,
    points: Optional[int] = None,
    scale: Optional[str] = None,
    r_eff: Optional[float] = None,
) -> PipelineResult:
    g = config.grid
    grid = frequency_grid(
        g.fmin if fmin is None else fmin,
        g.fmax if fmax is None else fmax,
        g.points if points is None else points,
        g.scale if scale is None else scale,
    )
    budget = assemble_budget(config, config.squeezer if squeezing else None, None, grid,
                             r_eff if squeezing else None)
    reference = assemble_budget(config, None, None, grid[:1])

    floor = float(budget.components["shot"][0])
    unsqueezed = float(reference.components["shot"][0])
    snr_ratio, rate_gain = snr_gain(budget.r_eff)
    if config.detector.detuning != 0:
        logger.warning("detuning %.4g rad is outside the fitted operating point; recycling gain is extrapolated",
                       config.detector.detuning)
    summary = {
        "squeezing": squeezing,
        "r_eff": budget.r_eff,
        "floor_m_per_sqrthz": floor,
        "unsqueezed_floor_m_per_sqrthz": unsqueezed,
        "floor_ratio": floor / unsqueezed,
        "crossover_hz": crossover_frequency(budget),
        "snr_gain": {"snr_ratio": snr_ratio, "rate_gain": rate_gain},
        "grid": {"fmin_hz": float(grid[0]), "fmax_hz": float(grid[-1]), "points": int(grid.size)},
        "output_power": output_power_report(config),
        "notes": list(budget.notes),
    }
    ref = config.reference
    if ref.shot_floor_m and not squeezing:
        summary["reference_floor_m_per_sqrthz"] = ref.shot_floor_m
        summary["within_calibration"] = abs(floor / ref.shot_floor_m - 1.0) <= (ref.calibration_uncertainty or 0.0)
    if squeezing and ref.squeezed_floor_m:
        summary["reference_floor_m_per_sqrthz"] = ref.squeezed_floor_m

    out = Path(out)
    write_budget_csv(budget, out)
    summary_file = write_json(summary_path(out), summary)
    logger.info("budget written to %s (%d points)", out, grid.size)
    return PipelineResult(summary, [out, summary_file])


# 2. Efficiency chain reports

def run_chain(
    config: ToolkitConfig,
    preset: str,
    report_path: Optional[Path] = None,
    direction: Optional[str] = None,
    measured_db: Optional[float] = None,
) -> PipelineResult:
    """Forward propagation for the injection path, inference for the monitor path."""
    chain = config.chain(preset)
    direction = direction or ("inverse" if preset == "monitor" else "forward")
    if direction == "inverse":
        measured = measured_db if measured_db is not None else config.reference.monitor_measured_db
        if measured is None:
            raise InputFileError("inverse chain report needs a measured level (--measured-db or reference)")
        report = inference_report(measured, chain, config.squeezer.source_sqz_db, preset)
        if report.residual_db is not None and abs(report.residual_db) > 0.1:
            logger.warning("inferred source level misses the quoted value by %+.3f dB", report.residual_db)
    else:
        report = chain_report(config.squeezer, chain, preset, dark_noise_floor=config.readout.dark_noise_floor)
        if config.squeezer.antisqz_assumed_pure:
            logger.warning("anti-squeezing not configured; pure-state value assumed")
    summary = report.to_dict()
    artifacts = []
    if report_path is not None:
        artifacts.append(write_json(report_path, summary))
    return PipelineResult(summary, artifacts)


# 3. Synthetic detector output

def run_synth(
    config: ToolkitConfig,
    out: Path,
    seed: int,
    squeezing: bool = False,
    sample_rate: float = SAMPLE_RATE_HZ,
    duration: float = DURATION_S,
    line: Optional[Tuple[float, float]] = None,
    band: Optional[Tuple[float, float]] = None,
    r_eff: Optional[float] = None,
    segment_length: int = SEGMENT_LENGTH,
) -> PipelineResult:
    """Time series plus its Welch spectrum; `out` is the time-series path, the spectrum gets `.csv`."""
    g = config.grid
    if band is None:
        band = (max(SYNTH_BAND_HZ[0], g.fmin), min(SYNTH_BAND_HZ[1], g.fmax))
    grid = frequency_grid(g.fmin, g.fmax, g.points, g.scale)
    budget = assemble_budget(config, config.squeezer if squeezing else None, None, grid,
                             r_eff if squeezing else None)
    ts = synthesize(budget, sample_rate, duration, seed, line=line, band=band)
    spectrum = welch_asd(ts, segment_length=segment_length)

    out = Path(out)
    ts_path = write_timeseries(ts, out)
    spec_path = write_spectrum_csv(spectrum, out.with_suffix(".csv"))
    summary = {
        "squeezing": squeezing,
        "r_eff": budget.r_eff,
        "seed": seed,
        "sample_rate_hz": sample_rate,
        "n_samples": len(ts.samples),
        "band_hz": list(band),
        "line": list(line) if line is not None else None,
        "n_averages": spectrum.n_averages,
        "resolution_hz": spectrum.resolution,
        "shot_band_median": _safe_band_median(spectrum, SHOT_BAND_HZ),
        "floor_band_median": _safe_band_median(spectrum, FLOOR_BAND_HZ),
        "timeseries": str(ts_path),
        "spectrum": str(spec_path),
    }
    return PipelineResult(summary, [ts_path, spec_path])


def _safe_band_median(spectrum: Spectrum, band: Tuple[float, float]) -> Optional[float]:
    f = spectrum.frequencies
    if band[0] < f[0] or band[1] > f[-1]:
        return None
    return band_median(spectrum, *band)


# 4. Calibration-line SNR comparison

def compare_snr(spec_a: Spectrum, spec_b: Spectrum, f0: float, floor_band=FLOOR_BAND_HZ) -> dict:
    """b relative to a; a is normally the unsqueezed spectrum."""
    a = line_snr(spec_a, f0, floor_band)
    b = line_snr(spec_b, f0, floor_band)
    snr_ratio = b.snr / a.snr
    return {
        "f0_hz": f0,
        "floor_band_hz": list(floor_band),
        "a": a.__dict__,
        "b": b.__dict__,
        "floor_ratio": b.floor_asd / a.floor_asd,
        "amplitude_ratio": b.amplitude / a.amplitude,
        "snr_ratio": snr_ratio,
        "implied_r_eff": math.log(snr_ratio),
        "rate_gain": snr_ratio ** 3,
    }


def run_snr(spectrum_a, spectrum_b, f0: float, floor_band=FLOOR_BAND_HZ, out: Optional[Path] = None) -> PipelineResult:
    summary = compare_snr(load_spectrum(spectrum_a), load_spectrum(spectrum_b), f0, floor_band)
    summary["spectrum_a"], summary["spectrum_b"] = str(spectrum_a), str(spectrum_b)
    artifacts = [write_json(out, summary)] if out is not None else []
    return PipelineResult(summary, artifacts)


# 5. Model fitting and objective profiles

def build_problem(
    config: ToolkitConfig,
    spectrum,
    free: str,
    spectrum_sqz=None,
    mask: Sequence[float] = (),
    band: Tuple[float, float] = FIT_BAND_HZ,
    initial: Optional[Dict[str, float]] = None,
    r_eff: Optional[float] = None,
) -> FitProblem:
    spectra = [FitSpectrum(load_spectrum(spectrum), squeezing=False, label=str(spectrum))]
    if spectrum_sqz is not None:
        spectra.append(FitSpectrum(load_spectrum(spectrum_sqz), squeezing=True, label=str(spectrum_sqz)))
    return FitProblem(
        spectra=tuple(spectra),
        free=parse_free(free, config),
        config=config,
        initial=initial or {},
        fit_band=band,
        mask=tuple(mask),
        r_eff=r_eff,
    )


def run_fit(problem: FitProblem, out: Optional[Path] = None) -> PipelineResult:
    result = fit(problem)
    report = fit_report(result)
    report["spectra"] = [{"label": s.label, "squeezing": s.squeezing} for s in problem.spectra]
    artifacts = [write_json(out, report)] if out is not None else []
    return PipelineResult(report, artifacts)


def run_profile(
    problem: FitProblem,
    parameter: str,
    grid: np.ndarray,
    mode: str,
    out: Path,
) -> PipelineResult:
    result = profile(problem, parameter, grid, mode)
    frame = pd.DataFrame({result.parameter: result.values, "objective": result.objective})
    out = Path(out)
    atomic_write_text(out, frame.to_csv(index=False, float_format="%.17g", lineterminator="\n"))
    summary = {
        "parameter": result.parameter,
        "mode": result.mode,
        "points": int(result.values.size),
        "argmin": result.argmin,
        "objective_min": float(np.min(result.objective)),
        "objective_span": float(np.ptp(result.objective)),
    }
    return PipelineResult(summary, [out])


# 6. Config validation

def run_validate(path) -> List[Violation]:
    """Every violated invariant of the config at `path`; schema errors still raise ConfigError."""
    try:
        load_config(path)
    except ConfigValidationError as e:
        return e.violations
    return []
