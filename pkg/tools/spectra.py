"""
Synthetic detector output and its spectral estimation.

Synthesis colors white Gaussian noise in the frequency domain so that its
expected one-sided PSD equals the budget's total ASD squared, then adds an
optional sinusoidal calibration line in the time domain. Estimation is the
averaged modified periodogram (Welch):

    PSD_k = 2 |FFT(w * x)_k|^2 / (fs * sum(w^2))      interior bins

with w the periodic Hann taper w[n] = 0.5 - 0.5 cos(2 pi n / N) unless another
window is named. DC and Nyquist bins are not doubled.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy import signal

from shared.config import (
    FLOOR_BAND_HZ,
    LINE_GUARD_BINS,
    MIN_BAND_BINS,
    OVERLAP_FRACTION,
    RNG_ALGORITHM,
    SEGMENT_LENGTH,
    WINDOW,
)
from tools.exceptions import (
    AliasingError,
    DegenerateSegmentError,
    DomainError,
    EmptyBandError,
    GridCoverageError,
    LineNotFoundError,
)
from tools.file_utils import atomic_write_bytes, atomic_write_text, read_json, write_json
from tools.noise_model import NoiseBudget

logger = logging.getLogger(__name__)

MIN_SYNTH_SAMPLES = 2 ** 12
SPECTRUM_COLUMNS = ["f_hz", "asd_m_per_sqrthz"]
WINDOW_ALIASES = {"rectangular": "boxcar", "rect": "boxcar", "hanning": "hann"}


@dataclass(frozen=True)
class TimeSeries:
    sample_rate: float
    samples: np.ndarray
    seed: Optional[int] = None
    rng_algorithm: str = RNG_ALGORITHM
    line: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        if not self.sample_rate > 0:
            raise DomainError(f"sample rate must be positive, got {self.sample_rate}")
        if len(self.samples) < 2:
            raise DomainError("a time series needs at least two samples")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class Spectrum:
    frequencies: np.ndarray
    asd: np.ndarray
    resolution: float
    n_averages: int
    window: str = WINDOW
    sample_rate: Optional[float] = None
    dc_asd: float = 0.0

    def __post_init__(self):
        if len(self.frequencies) != len(self.asd):
            raise DomainError("frequencies and asd differ in length")
        if np.any(self.asd < 0):
            raise DomainError("ASD values must be non-negative")
        if len(self.frequencies) > 1 and np.any(np.diff(self.frequencies) <= 0):
            raise DomainError("spectrum frequencies must be strictly increasing")
        if len(self.frequencies) and self.frequencies[0] <= 0:
            raise DomainError("spectrum frequencies must be positive (DC is kept in dc_asd)")

    @property
    def psd(self) -> np.ndarray:
        return self.asd ** 2


@dataclass(frozen=True)
class LineSNR:
    snr: float
    amplitude: float
    peak_asd: float
    floor_asd: float
    f_peak: float


def _target_asd(budget: NoiseBudget, freqs: np.ndarray) -> np.ndarray:
    grid = budget.frequencies
    if len(grid) == 1:
        return np.full(freqs.shape, budget.total[0])
    return np.interp(np.log(freqs), np.log(grid), budget.total)


def synthesize(
    budget: NoiseBudget,
    sample_rate: float,
    duration: float,
    seed: int,
    line: Optional[Tuple[float, float]] = None,
    band: Optional[Tuple[float, float]] = None,
) -> TimeSeries:
    """Gaussian displacement noise realizing budget.total inside `band`, plus an optional line.

    `band` defaults to the span of the budget grid; bins outside it carry no power.
    `line` is (f0 in Hz, amplitude in m).
    """
    n = int(round(duration * sample_rate))
    if n < MIN_SYNTH_SAMPLES:
        raise DomainError(f"need duration*sample_rate >= {MIN_SYNTH_SAMPLES}, got {n}")
    nyquist = 0.5 * sample_rate
    grid = budget.frequencies
    f_lo, f_hi = band if band is not None else (grid[0], grid[-1])
    if f_hi > nyquist:
        raise AliasingError(f"band edge {f_hi:g} Hz is above the Nyquist frequency {nyquist:g} Hz")
    if f_lo < grid[0] * (1 - 1e-12) or f_hi > grid[-1] * (1 + 1e-12) or f_lo > f_hi:
        raise GridCoverageError(
            f"budget grid [{grid[0]:g}, {grid[-1]:g}] Hz does not span the band [{f_lo:g}, {f_hi:g}] Hz"
        )
    if line is not None:
        f0, _ = line
        if f0 >= nyquist:
            raise AliasingError(f"line at {f0:g} Hz is at or above the Nyquist frequency {nyquist:g} Hz")
        if f0 <= 0:
            raise DomainError(f"line frequency must be positive, got {f0}")

    freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate)
    in_band = (freqs >= f_lo) & (freqs <= f_hi) & (freqs > 0)
    psd = np.zeros_like(freqs)
    psd[in_band] = _target_asd(budget, freqs[in_band]) ** 2

    rng = np.random.default_rng(seed)
    re = rng.standard_normal(freqs.size)
    im = rng.standard_normal(freqs.size)
    # E|X_k|^2 = PSD_k * fs * n / 2 so that the one-sided periodogram is unbiased
    scale = np.sqrt(psd * sample_rate * n / 2.0)
    spectrum = scale * (re + 1j * im) / np.sqrt(2.0)
    if n % 2 == 0:
        spectrum[-1] = scale[-1] * re[-1]
    spectrum[0] = 0.0
    samples = np.fft.irfft(spectrum, n)

    if line is not None:
        f0, amplitude = line
        t = np.arange(n) / sample_rate
        samples = samples + amplitude * np.sin(2.0 * np.pi * f0 * t)

    logger.debug("synthesized %d samples at %g Hz (seed=%s, band=[%g, %g])", n, sample_rate, seed, f_lo, f_hi)
    return TimeSeries(sample_rate, samples, seed, RNG_ALGORITHM, tuple(line) if line is not None else None)


def welch_asd(
    ts: TimeSeries,
    segment_length: int = SEGMENT_LENGTH,
    overlap_fraction: float = OVERLAP_FRACTION,
    window: str = WINDOW,
) -> Spectrum:
    """One-sided ASD by averaged, windowed periodograms (density scaling)."""
    n = len(ts.samples)
    if segment_length < 2 or segment_length > n:
        raise DegenerateSegmentError(f"segment length {segment_length} does not fit a series of {n} samples")
    if not 0.0 <= overlap_fraction < 1.0:
        raise DomainError(f"overlap fraction must lie in [0, 1), got {overlap_fraction}")
    noverlap = int(round(segment_length * overlap_fraction))
    if noverlap >= segment_length:
        raise DegenerateSegmentError("overlap leaves no new samples per segment")
    taper = WINDOW_ALIASES.get(window, window)

    freqs, psd = signal.welch(
        ts.samples,
        fs=ts.sample_rate,
        window=taper,
        nperseg=segment_length,
        noverlap=noverlap,
        detrend=False,
        return_onesided=True,
        scaling="density",
        average="mean",
    )
    n_averages = (n - segment_length) // (segment_length - noverlap) + 1
    return Spectrum(
        frequencies=freqs[1:],
        asd=np.sqrt(psd[1:]),
        resolution=ts.sample_rate / segment_length,
        n_averages=int(n_averages),
        window=window,
        sample_rate=ts.sample_rate,
        dc_asd=float(np.sqrt(psd[0])),
    )


def model_spectrum(budget: NoiseBudget) -> Spectrum:
    """Noiseless spectrum holding the budget total, for self-consistency fits."""
    f = budget.frequencies
    resolution = float(np.median(np.diff(f))) if len(f) > 1 else 0.0
    return Spectrum(f.copy(), budget.total.copy(), resolution, 0, window="model")


def _band_mask(spec: Spectrum, f_lo: float, f_hi: float) -> np.ndarray:
    return (spec.frequencies >= f_lo) & (spec.frequencies <= f_hi)


def band_median(spec: Spectrum, f_lo: float, f_hi: float) -> float:
    """Median ASD over [f_lo, f_hi]; robust against narrow lines."""
    values = spec.asd[_band_mask(spec, f_lo, f_hi)]
    if values.size < MIN_BAND_BINS:
        raise EmptyBandError(
            f"band [{f_lo:g}, {f_hi:g}] Hz holds {values.size} bins, need at least {MIN_BAND_BINS}"
        )
    return float(np.median(values))


def line_snr(
    spec: Spectrum,
    f0: float,
    floor_band: Tuple[float, float] = FLOOR_BAND_HZ,
    guard_bins: int = LINE_GUARD_BINS,
) -> LineSNR:
    """Peak ASD at f0 over the floor median, and the line amplitude from its excess power."""
    f = spec.frequencies
    if not f[0] <= f0 <= f[-1]:
        raise DomainError(f"f0={f0:g} Hz lies outside the spectrum [{f[0]:g}, {f[-1]:g}] Hz")
    k0 = int(np.argmin(np.abs(f - f0)))
    lo, hi = max(k0 - guard_bins, 0), min(k0 + guard_bins, len(f) - 1)
    if floor_band[0] <= f[hi] and f[lo] <= floor_band[1]:
        raise DomainError(
            f"floor band [{floor_band[0]:g}, {floor_band[1]:g}] Hz overlaps the line at {f0:g} Hz +/- {guard_bins} bins"
        )
    floor = band_median(spec, *floor_band)

    k_peak = lo + int(np.argmax(spec.asd[lo:hi + 1]))
    peak = float(spec.asd[k_peak])
    if peak < 2.0 * floor:
        raise LineNotFoundError(f"no line at {f0:g} Hz: peak {peak:.3g} is below twice the floor {floor:.3g}")

    p_lo, p_hi = max(k_peak - guard_bins, 0), min(k_peak + guard_bins, len(f) - 1)
    excess = np.sum(spec.psd[p_lo:p_hi + 1] - floor ** 2) * spec.resolution
    amplitude = float(np.sqrt(2.0 * max(excess, 0.0)))
    return LineSNR(peak / floor, amplitude, peak, floor, float(f[k_peak]))


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def write_spectrum_csv(spec: Spectrum, path: Union[str, Path]) -> Path:
    path = Path(path)
    frame = pd.DataFrame({"f_hz": spec.frequencies, "asd_m_per_sqrthz": spec.asd}, columns=SPECTRUM_COLUMNS)
    atomic_write_text(path, frame.to_csv(index=False, float_format="%.17g", lineterminator="\n"))
    write_json(
        _sidecar(path),
        {
            "resolution_hz": spec.resolution,
            "n_averages": spec.n_averages,
            "window": spec.window,
            "sample_rate_hz": spec.sample_rate,
            "dc_asd_m_per_sqrthz": spec.dc_asd,
        },
    )
    return path


def read_spectrum_csv(path: Union[str, Path]) -> Spectrum:
    path = Path(path)
    frame = pd.read_csv(path, dtype=float, float_precision="round_trip")
    if list(frame.columns) != SPECTRUM_COLUMNS:
        raise DomainError(f"{path} is not a spectrum CSV (columns {list(frame.columns)})")
    f = frame["f_hz"].to_numpy()
    meta = read_json(_sidecar(path)) if _sidecar(path).exists() else {}
    resolution = meta.get("resolution_hz") or (float(np.median(np.diff(f))) if len(f) > 1 else 0.0)
    return Spectrum(
        frequencies=f,
        asd=frame["asd_m_per_sqrthz"].to_numpy(),
        resolution=float(resolution),
        n_averages=int(meta.get("n_averages", 0)),
        window=meta.get("window", WINDOW),
        sample_rate=meta.get("sample_rate_hz"),
        dc_asd=float(meta.get("dc_asd_m_per_sqrthz", 0.0)),
    )


def write_timeseries(ts: TimeSeries, path: Union[str, Path]) -> Path:
    """Little-endian float64 frames plus a JSON sidecar (rate, seed, units)."""
    path = Path(path)
    atomic_write_bytes(path, np.asarray(ts.samples, dtype="<f8").tobytes())
    write_json(
        _sidecar(path),
        {
            "sample_rate_hz": ts.sample_rate,
            "n_samples": len(ts.samples),
            "dtype": "<f8",
            "units": "m",
            "seed": ts.seed,
            "rng_algorithm": ts.rng_algorithm,
            "line": list(ts.line) if ts.line is not None else None,
        },
    )
    return path


def read_timeseries(path: Union[str, Path]) -> TimeSeries:
    path = Path(path)
    meta = read_json(_sidecar(path))
    samples = np.fromfile(path, dtype="<f8")
    if samples.size != meta["n_samples"]:
        raise DomainError(f"{path} holds {samples.size} samples, sidecar says {meta['n_samples']}")
    line = tuple(meta["line"]) if meta.get("line") else None
    return TimeSeries(meta["sample_rate_hz"], samples, meta.get("seed"), meta.get("rng_algorithm", RNG_ALGORITHM), line)
