import math

import numpy as np
import pytest

from conftest import LINE_AMP, LINE_F0, MEASURED_R_EFF
from tools.exceptions import (
    AliasingError,
    DegenerateSegmentError,
    DomainError,
    EmptyBandError,
    GridCoverageError,
    LineNotFoundError,
)
from tools.noise_model import NoiseBudget
from tools.pipeline import compare_snr
from tools.spectra import (
    Spectrum,
    TimeSeries,
    band_median,
    line_snr,
    read_spectrum_csv,
    read_timeseries,
    synthesize,
    welch_asd,
    write_spectrum_csv,
    write_timeseries,
)

FS = 256000.0
SEG = 8192
# 64 Welch averages at 50 % overlap
N_64 = 63 * SEG // 2 + SEG
DURATION_64 = N_64 / FS


def flat_budget(level, fmin=10.0, fmax=FS / 2):
    f = np.array([fmin, fmax])
    return NoiseBudget(frequencies=f, components={}, total=np.full(2, level))


def test_flat_budget_recovered():
    spec = welch_asd(synthesize(flat_budget(3e-17), FS, DURATION_64, seed=1))
    assert spec.n_averages == 64
    assert spec.resolution == FS / SEG
    for lo, hi in ((2000.0, 10000.0), (20000.0, 40000.0), (60000.0, 120000.0)):
        assert band_median(spec, lo, hi) == pytest.approx(3e-17, rel=0.05)


def test_same_seed_is_bit_identical():
    budget = flat_budget(1e-16)
    a = synthesize(budget, FS, 0.1, seed=7, line=(LINE_F0, LINE_AMP))
    b = synthesize(budget, FS, 0.1, seed=7, line=(LINE_F0, LINE_AMP))
    c = synthesize(budget, FS, 0.1, seed=8, line=(LINE_F0, LINE_AMP))
    np.testing.assert_array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, c.samples)
    assert a.rng_algorithm == "numpy.random.PCG64"


def test_hann_tone_on_a_bin_centre():
    ts = synthesize(flat_budget(0.0), FS, DURATION_64, seed=1, line=(LINE_F0, LINE_AMP))
    spec = welch_asd(ts)
    k0 = int(np.argmin(np.abs(spec.frequencies - LINE_F0)))
    power = spec.psd * spec.resolution
    assert power[k0] == pytest.approx(LINE_AMP ** 2 / 3, rel=1e-6)
    assert power[k0 - 1] == pytest.approx(LINE_AMP ** 2 / 12, rel=1e-6)
    assert power[k0 + 1] == pytest.approx(LINE_AMP ** 2 / 12, rel=1e-6)
    others = np.delete(power, [k0 - 1, k0, k0 + 1])
    assert others.max() < 1e-12 * power[k0]


def test_rectangular_tone_peak():
    ts = synthesize(flat_budget(0.0), FS, DURATION_64, seed=1, line=(LINE_F0, LINE_AMP))
    spec = welch_asd(ts, window="rectangular")
    k0 = int(np.argmin(np.abs(spec.frequencies - LINE_F0)))
    assert spec.psd[k0] * spec.resolution == pytest.approx(LINE_AMP ** 2 / 2, rel=1e-6)


def test_white_noise_level():
    sigma = 2.0
    rng = np.random.default_rng(4)
    ts = TimeSeries(FS, rng.normal(0.0, sigma, N_64))
    spec = welch_asd(ts)
    assert band_median(spec, 5000.0, 120000.0) == pytest.approx(sigma * math.sqrt(2.0 / FS), rel=0.05)


def test_constant_signal_lands_in_dc_bin():
    ts = TimeSeries(FS, np.full(N_64, 2.0))
    spec = welch_asd(ts, window="rectangular")
    assert spec.dc_asd == pytest.approx(math.sqrt(4.0 * SEG / FS), rel=1e-9)
    assert spec.asd.max() < 1e-9 * spec.dc_asd
    assert spec.frequencies[0] > 0


def test_parseval_over_band():
    level, lo, hi = 5e-17, 20000.0, 60000.0
    ts = synthesize(flat_budget(level), FS, 4.0, seed=3, band=(lo, hi))
    expected = level ** 2 * (hi - lo)
    assert np.var(ts.samples) == pytest.approx(expected, rel=0.03)


def test_estimator_spread_shrinks_with_averages():
    budget = flat_budget(1.0)
    n_128 = 127 * SEG // 2 + SEG

    def spread(n, seed):
        spec = welch_asd(synthesize(budget, FS, n / FS, seed=seed))
        band = (spec.frequencies >= 10000.0) & (spec.frequencies <= 100000.0)
        return np.std(spec.asd[band])

    ratio = np.mean([spread(N_64, s) for s in range(3)]) / np.mean([spread(n_128, s) for s in range(3)])
    assert ratio == pytest.approx(math.sqrt(2.0), rel=0.08)


def test_synthesized_budget_matches_model(synthesized_pair):
    spec_off, _, off, _ = synthesized_pair
    f = spec_off.frequencies
    model = np.interp(np.log(f), np.log(off.frequencies), off.total)
    for lo, hi in ((15000.0, 16000.0), (30000.0, 31000.0), (44000.0, 49000.0), (52000.0, 60000.0),
                   (80000.0, 90000.0)):
        band = (f >= lo) & (f <= hi)
        ratio = spec_off.asd[band] / model[band]
        assert np.median(ratio) == pytest.approx(1.0, abs=0.05)
    shot_band = (f >= 44000.0) & (f <= 49000.0)
    assert band_median(spec_off, 44000.0, 49000.0) == pytest.approx(np.median(model[shot_band]), rel=0.05)
    assert band_median(spec_off, 52000.0, 60000.0) == pytest.approx(6.9e-17, rel=0.10)


def test_squeezing_raises_line_snr(synthesized_pair):
    spec_off, spec_on, _, _ = synthesized_pair
    result = compare_snr(spec_off, spec_on, LINE_F0, (52000.0, 60000.0))
    assert result["floor_ratio"] == pytest.approx(math.exp(-MEASURED_R_EFF), rel=0.05)
    assert result["amplitude_ratio"] == pytest.approx(1.0, abs=0.03)
    assert result["snr_ratio"] == pytest.approx(1.44, abs=0.07)
    assert result["implied_r_eff"] == pytest.approx(MEASURED_R_EFF, abs=0.05)
    assert result["a"]["amplitude"] == pytest.approx(LINE_AMP, rel=0.03)


def test_line_snr_doubles_when_floor_halves():
    rng = np.random.default_rng(9)
    f = np.arange(1, 4001) * 31.25
    noise = 1e-17 * (1.0 + 0.01 * rng.standard_normal(f.size))
    k0 = int(np.argmin(np.abs(f - LINE_F0)))
    asd = noise.copy()
    asd[k0] = 1e-15
    half = noise / 2
    half[k0] = 1e-15
    a = line_snr(Spectrum(f, asd, 31.25, 64), LINE_F0)
    b = line_snr(Spectrum(f, half, 31.25, 64), LINE_F0)
    assert b.snr / a.snr == pytest.approx(2.0, rel=1e-2)
    assert a.f_peak == f[k0]


def test_line_snr_errors():
    f = np.arange(1, 4001) * 31.25
    flat = Spectrum(f, np.full(f.size, 1e-17), 31.25, 64)
    with pytest.raises(LineNotFoundError):
        line_snr(flat, LINE_F0)
    with pytest.raises(DomainError):
        line_snr(flat, 200000.0)
    with pytest.raises(DomainError):
        line_snr(flat, 52000.0)


def test_band_median_needs_bins():
    f = np.arange(1, 101) * 31.25
    spec = Spectrum(f, np.ones(f.size), 31.25, 1)
    with pytest.raises(EmptyBandError):
        band_median(spec, 1000.0, 1100.0)
    assert band_median(spec, 100.0, 3000.0) == 1.0


def test_synthesis_guards(tabletop_budget):
    with pytest.raises(AliasingError):
        synthesize(tabletop_budget, 150000.0, 1.0, seed=1)
    with pytest.raises(AliasingError):
        synthesize(tabletop_budget, FS, 1.0, seed=1, line=(FS / 2, 1e-14), band=(5000.0, 100000.0))
    with pytest.raises(GridCoverageError):
        synthesize(tabletop_budget, FS, 1.0, seed=1, band=(500.0, 100000.0))
    with pytest.raises(DomainError):
        synthesize(tabletop_budget, FS, 0.01, seed=1)


def test_welch_guards():
    ts = TimeSeries(FS, np.zeros(4096))
    with pytest.raises(DegenerateSegmentError):
        welch_asd(ts, segment_length=8192)
    with pytest.raises(DomainError):
        welch_asd(ts, segment_length=1024, overlap_fraction=1.0)


def test_spectrum_rejects_bad_input():
    with pytest.raises(DomainError):
        Spectrum(np.array([1.0, 2.0]), np.array([1.0]), 1.0, 1)
    with pytest.raises(DomainError):
        Spectrum(np.array([0.0, 1.0]), np.array([1.0, 1.0]), 1.0, 1)
    with pytest.raises(DomainError):
        Spectrum(np.array([1.0, 2.0]), np.array([1.0, -1.0]), 1.0, 1)


def test_spectrum_and_timeseries_files(tmp_path):
    ts = synthesize(flat_budget(1e-16), FS, 0.1, seed=5, line=(LINE_F0, LINE_AMP))
    spec = welch_asd(ts, segment_length=4096)
    spec_path = write_spectrum_csv(spec, tmp_path / "spec.csv")
    again = read_spectrum_csv(spec_path)
    np.testing.assert_array_equal(again.asd, spec.asd)
    assert (again.resolution, again.n_averages, again.dc_asd) == (spec.resolution, spec.n_averages, spec.dc_asd)

    ts_path = write_timeseries(ts, tmp_path / "series.f64")
    loaded = read_timeseries(ts_path)
    np.testing.assert_array_equal(loaded.samples, ts.samples)
    assert (loaded.sample_rate, loaded.seed, loaded.line) == (FS, 5, (LINE_F0, LINE_AMP))
