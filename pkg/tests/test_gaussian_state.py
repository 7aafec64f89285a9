import math

import numpy as np
import pytest

from tools.exceptions import DomainError
from tools.gaussian_state import (
    DB_PER_NEPER,
    QuadratureState,
    SqueezeLevel,
    apply_loss,
    db_to_r,
    db_to_variance,
    dephase,
    from_db,
    measured_variance,
    r_to_db,
    rotate,
    squeezed,
    vacuum,
    variance_to_db,
)


def test_vacuum_is_isotropic():
    state = vacuum()
    angles = np.linspace(0, math.pi, 7)
    np.testing.assert_allclose(measured_variance(state, angles), 1.0)
    assert state.is_pure


def test_squeezed_state_variances():
    state = squeezed(0.5, 0.5)
    assert state.v_min == pytest.approx(math.exp(-1.0))
    assert state.v_max == pytest.approx(math.exp(1.0))
    assert state.squeeze_db == pytest.approx(r_to_db(0.5))
    assert state.antisqueeze_db == pytest.approx(r_to_db(0.5))
    assert state.is_pure


def test_readout_angle_selects_quadrature():
    state = squeezed(0.4, 0.6, theta=0.3)
    assert measured_variance(state, 0.3) == pytest.approx(state.v_min)
    assert measured_variance(state, 0.3 + math.pi / 2) == pytest.approx(state.v_max)


def test_uncertainty_bound_enforced():
    with pytest.raises(DomainError):
        QuadratureState(0.5, 1.5)
    with pytest.raises(DomainError):
        squeezed(0.5, 0.2)
    with pytest.raises(DomainError):
        QuadratureState(2.0, 1.0)
    with pytest.raises(DomainError):
        QuadratureState(-1.0, 2.0)


def test_rotation_is_mod_pi():
    state = squeezed(0.3, 0.3, theta=0.2)
    assert rotate(state, math.pi).theta == pytest.approx(0.2)
    assert rotate(state, 0.1).theta == pytest.approx(0.3)


def test_loss_limits():
    state = from_db(9.3)
    assert apply_loss(state, 1.0) == state
    lost = apply_loss(state, 0.0)
    assert (lost.v_min, lost.v_max) == (1.0, 1.0)
    with pytest.raises(DomainError):
        apply_loss(state, 1.1)


def test_loss_composes_multiplicatively():
    state = from_db(9.3, 12.0)
    twice = apply_loss(apply_loss(state, 0.775), 0.96)
    once = apply_loss(state, 0.775 * 0.96)
    assert twice.v_min == pytest.approx(once.v_min, rel=1e-14, abs=0)
    assert twice.v_max == pytest.approx(once.v_max, rel=1e-14, abs=0)


def random_state(rng):
    r = rng.uniform(0.0, 2.0)
    return squeezed(r, r + rng.uniform(0.0, 1.0), rng.uniform(0.0, math.pi))


def test_loss_contracts_towards_vacuum_random():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        state = random_state(rng)
        eta = rng.uniform(0.0, 1.0)
        out = apply_loss(state, eta)
        assert abs(out.v_min - 1.0) == pytest.approx(eta * abs(state.v_min - 1.0), rel=1e-12, abs=1e-15)
        assert abs(out.v_max - 1.0) == pytest.approx(eta * abs(state.v_max - 1.0), rel=1e-12, abs=1e-15)
        assert out.theta == state.theta


def test_loss_composition_random():
    rng = np.random.default_rng(12)
    for _ in range(1000):
        state = random_state(rng)
        eta1, eta2 = rng.uniform(0.0, 1.0, 2)
        twice = apply_loss(apply_loss(state, eta1), eta2)
        once = apply_loss(state, eta1 * eta2)
        assert twice.v_min == pytest.approx(once.v_min, rel=1e-12)
        assert twice.v_max == pytest.approx(once.v_max, rel=1e-12)


def test_dephase_preserves_variance_sum_random():
    rng = np.random.default_rng(13)
    for _ in range(1000):
        state = random_state(rng)
        out = dephase(state, rng.uniform(0.0, 3.0))
        assert out.v_min + out.v_max == pytest.approx(state.v_min + state.v_max, rel=1e-12)
        assert state.v_min - 1e-12 <= out.v_min <= out.v_max <= state.v_max + 1e-12


def test_dephase_matches_monte_carlo_average():
    state = from_db(6.0, 12.0)
    sigma = 0.1
    rng = np.random.default_rng(5)
    kicks = rng.normal(0.0, sigma, 200_000)
    sampled = np.mean(measured_variance(state, state.theta + kicks))
    assert dephase(state, sigma).v_min == pytest.approx(sampled, rel=1e-2)


def test_dephase_limits():
    state = from_db(9.3)
    assert dephase(state, 0.0) == state
    smeared = dephase(state, 10.0)
    assert smeared.v_min == pytest.approx(smeared.v_max, rel=1e-9)
    assert smeared.v_min + smeared.v_max == pytest.approx(state.v_min + state.v_max)
    with pytest.raises(DomainError):
        dephase(state, -0.1)


def test_random_operations_stay_physical():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        r = rng.uniform(0.0, 2.0)
        state = squeezed(r, r + rng.uniform(0.0, 1.0), rng.uniform(0, math.pi))
        eta = rng.uniform(0.0, 1.0)
        out = dephase(apply_loss(rotate(state, rng.uniform(-3, 3)), eta), rng.uniform(0.0, 0.5))
        assert out.v_min * out.v_max >= 1.0 - 1e-9
        # loss only ever pulls the squeezed quadrature towards vacuum
        assert state.v_min - 1e-12 <= apply_loss(state, eta).v_min <= 1.0 + 1e-12


def test_db_conversions():
    assert db_to_variance(10.0) == pytest.approx(0.1)
    assert variance_to_db(0.5) == pytest.approx(3.0103, abs=1e-4)
    assert DB_PER_NEPER == pytest.approx(8.6859, abs=1e-4)
    assert r_to_db(0.36) == pytest.approx(3.127, abs=1e-3)
    assert db_to_r(r_to_db(0.36)) == pytest.approx(0.36)
    with pytest.raises(DomainError):
        variance_to_db(0.0)


def test_db_round_trip_random():
    rng = np.random.default_rng(2)
    for db in rng.uniform(-20.0, 20.0, 1000):
        assert variance_to_db(db_to_variance(db)) == pytest.approx(db, abs=1e-9)


def test_squeeze_level():
    level = SqueezeLevel(3.0)
    assert level.variance == pytest.approx(0.501187, rel=1e-5)
    assert level.r == pytest.approx(3.0 / DB_PER_NEPER)
    with pytest.raises(DomainError):
        SqueezeLevel(float("inf"))
