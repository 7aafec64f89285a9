import math

import numpy as np
import pytest

from tools.exceptions import DomainError, InfeasibleMeasurementError, SingularityError
from tools.gaussian_state import variance_to_db
from tools.loss_chain import (
    EfficiencyChain,
    EfficiencyStage,
    apply_dark_noise,
    chain_report,
    composite,
    dark_port_power,
    effective_squeeze,
    infer_source,
    inference_report,
    propagate,
    src_reflection_efficiency,
)
from tools.params import SqueezerConfig

R_S = math.sqrt(0.925)
R_M = math.sqrt(0.995)
SOURCE = SqueezerConfig(source_sqz_db=9.3)


def test_composite_is_product():
    chain = EfficiencyChain.from_etas([0.775, 0.96, 0.93])
    assert composite(chain) == pytest.approx(0.69192, rel=1e-12)
    with pytest.raises(DomainError):
        composite(EfficiencyChain())
    with pytest.raises(DomainError):
        composite(EfficiencyChain(stages=[EfficiencyStage(name="src", derived="src_reflection")]))


def test_composite_ignores_stage_order():
    rng = np.random.default_rng(41)
    for _ in range(1000):
        etas = rng.uniform(0.05, 1.0, size=rng.integers(2, 8))
        eta = composite(EfficiencyChain.from_etas(etas))
        shuffled = composite(EfficiencyChain.from_etas(rng.permutation(etas)))
        assert abs(shuffled - eta) <= 4 * np.spacing(eta)


def test_src_reflection_stays_a_fraction():
    rng = np.random.default_rng(42)
    for _ in range(1000):
        r_s = rng.uniform(0.0, 0.999)
        r_m = rng.uniform(1e-3, 1.0)
        phi = rng.uniform(-math.pi, math.pi)
        offset = rng.uniform(0.0, 0.1)
        for convention in ("phase", "fringe"):
            eta = src_reflection_efficiency(r_s, r_m, phi, offset, convention)
            assert 0.0 < eta <= 1.0 + 1e-12


def test_src_reflection_on_resonance():
    assert src_reflection_efficiency(R_S, R_M) == pytest.approx(0.77296, abs=1e-4)
    assert src_reflection_efficiency(0.9, 0.9) == pytest.approx(0.0, abs=1e-24)
    assert src_reflection_efficiency(0.0, R_M) == pytest.approx(0.995)
    # static Michelson offset is a small correction
    with_offset = src_reflection_efficiency(R_S, R_M, 0.0, math.pi / 238)
    assert with_offset == pytest.approx(0.7456, abs=2e-3)


def test_src_reflection_singular():
    with pytest.raises(SingularityError):
        src_reflection_efficiency(1.0 - 1e-13, 1.0)


def test_forward_chain_reaches_about_three_db():
    chain = EfficiencyChain.from_etas([0.775, 0.96, 0.93, src_reflection_efficiency(R_S, R_M)])
    result = propagate(SOURCE, chain)
    assert result.composite_eta == pytest.approx(0.53483, abs=1e-4)
    assert result.level.db == pytest.approx(2.7736, abs=1e-3)
    assert abs(result.level.db - 3.0) <= 0.5


def test_shipped_injection_chain(tabletop_config):
    report = chain_report(tabletop_config.squeezer, tabletop_config.chain("injection"))
    assert 2.5 <= report.detected_db <= 3.5
    rows = report.stages
    assert [row.name for row in rows][-1] == "src_reflection"
    assert rows[-1].cumulative_eta == pytest.approx(report.composite_eta)
    # cumulative squeezing falls stage by stage
    assert all(a.cumulative_db > b.cumulative_db for a, b in zip(rows, rows[1:]))
    assert rows[-1].cumulative_db == pytest.approx(report.detected_db)
    assert any("pure-state" in note for note in report.notes)


def test_inverse_monitor_chain():
    monitor = EfficiencyChain.from_etas([0.93, 0.992])
    inferred = infer_source(7.4, monitor)
    assert inferred.db == pytest.approx(9.4575, abs=1e-3)
    assert abs(inferred.db - 9.3) <= 0.3
    report = inference_report(7.4, monitor, reference_db=9.3)
    assert report.direction == "inverse"
    assert report.residual_db == pytest.approx(0.1575, abs=1e-3)


def test_infeasible_measurement():
    with pytest.raises(InfeasibleMeasurementError):
        infer_source(20.0, EfficiencyChain.from_etas([0.5]))


def test_forward_inverse_round_trip():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        source_db = rng.uniform(0.0, 15.0)
        etas = rng.uniform(0.3, 1.0, size=rng.integers(1, 5))
        chain = EfficiencyChain.from_etas(etas)
        detected = propagate(SqueezerConfig(source_sqz_db=source_db), chain).level
        assert infer_source(detected, chain).db == pytest.approx(source_db, abs=1e-9)


def test_more_loss_means_less_squeezing():
    levels = [propagate(SOURCE, EfficiencyChain.from_etas([eta])).level.db for eta in np.linspace(1.0, 0.1, 10)]
    assert all(a > b for a, b in zip(levels, levels[1:]))
    assert levels[0] == pytest.approx(9.3)


def test_phase_jitter_costs_squeezing():
    chain = EfficiencyChain.from_etas([0.9])
    clean = propagate(SOURCE, chain).level.db
    assert propagate(SOURCE, chain, jitter_sigma=0.05).level.db < clean
    assert effective_squeeze(SOURCE, chain) == pytest.approx(clean / (20 * math.log10(math.e)))


def test_report_ends_at_detected_level_with_jitter_and_dark_noise():
    chain = EfficiencyChain.from_etas([0.775, 0.96, 0.93])
    plain = chain_report(SOURCE, chain)
    assert len(plain.stages) == 3
    extras = ({"jitter_sigma": 0.05}, {"dark_noise_floor": 0.25}, {"jitter_sigma": 0.05, "dark_noise_floor": 0.25})
    for kwargs in extras:
        report = chain_report(SOURCE, chain, **kwargs)
        rows = report.stages
        assert len(rows) == 4
        assert rows[-1].derived == "readout"
        assert rows[-1].eta == 1.0
        assert rows[-1].cumulative_eta == pytest.approx(report.composite_eta)
        assert rows[-1].cumulative_db == pytest.approx(report.detected_db)
        assert rows[-1].cumulative_db < rows[-2].cumulative_db


def test_dark_noise_floor():
    assert apply_dark_noise(1.0, 0.25) == 1.0
    chain = EfficiencyChain.from_etas([0.9])
    assert propagate(SOURCE, chain, dark_noise_floor=0.25).level.db < propagate(SOURCE, chain).level.db


def test_dark_port_power():
    phase = dark_port_power(0.057, math.pi / 238, R_S, R_M)
    assert phase == pytest.approx(4.51e-4, rel=1e-2)
    fringe = dark_port_power(0.057, math.pi / 238, R_S, R_M, convention="fringe")
    assert fringe == pytest.approx(phase / 4, rel=1e-3)
    assert dark_port_power(0.057, 0.0, R_S, R_M) == 0.0


def test_pure_level_reported_in_db():
    chain = EfficiencyChain.from_etas([0.5])
    state = propagate(SOURCE, chain).state
    assert variance_to_db(state.v_min) == pytest.approx(propagate(SOURCE, chain).level.db)
