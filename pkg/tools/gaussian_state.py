"""
Single-mode Gaussian quadrature states at one sideband frequency.

States are kept in principal-axis form: the squeezed and anti-squeezed
variances in shot-noise units (vacuum = 1) plus the orientation of the
squeezed quadrature relative to the readout quadrature. Isotropic loss,
rotation and Gaussian phase jitter are all closed on this form, so no
covariance matrix is needed.

Squeeze convention: the displacement ASD scales by e^{-r}, so the variance
scales by e^{-2r} and 1 unit of r is 20*log10(e) ~ 8.686 dB.
"""

import math
from dataclasses import dataclass

import numpy as np

from tools.exceptions import DomainError

DB_PER_NEPER = 20.0 * math.log10(math.e)
HEISENBERG_RTOL = 1e-9


def _wrap(theta: float) -> float:
    # orientation of a quadrature ellipse is only defined mod pi
    return float(theta) % math.pi


@dataclass(frozen=True)
class QuadratureState:
    v_min: float
    v_max: float
    theta: float = 0.0

    def __post_init__(self):
        if not (self.v_min > 0 and self.v_max > 0):
            raise DomainError(f"variances must be positive, got ({self.v_min}, {self.v_max})")
        if self.v_max < self.v_min:
            raise DomainError(f"v_max={self.v_max} is below v_min={self.v_min}")
        if self.v_min * self.v_max < 1.0 - HEISENBERG_RTOL:
            raise DomainError(
                f"state violates the uncertainty bound: v_min*v_max = {self.v_min * self.v_max:.6g} < 1"
            )

    @property
    def squeeze_db(self) -> float:
        return variance_to_db(self.v_min)

    @property
    def antisqueeze_db(self) -> float:
        return -variance_to_db(self.v_max)

    @property
    def purity_product(self) -> float:
        return self.v_min * self.v_max

    @property
    def is_pure(self) -> bool:
        return abs(self.purity_product - 1.0) <= 1e-12


@dataclass(frozen=True)
class SqueezeLevel:
    """Squeezing depth in dB, positive below shot noise."""

    db: float

    def __post_init__(self):
        if not math.isfinite(self.db):
            raise DomainError(f"squeeze level must be finite, got {self.db}")

    @property
    def variance(self) -> float:
        return db_to_variance(self.db)

    @property
    def r(self) -> float:
        return db_to_r(self.db)


def vacuum() -> QuadratureState:
    return QuadratureState(1.0, 1.0, 0.0)


def squeezed(r: float, r_anti: float, theta: float = 0.0) -> QuadratureState:
    """Squeezed state with v_min = e^{-2r}, v_max = e^{+2 r_anti}."""
    if r < 0 or r_anti < r:
        raise DomainError(f"need r_anti >= r >= 0, got r={r}, r_anti={r_anti}")
    return QuadratureState(math.exp(-2.0 * r), math.exp(2.0 * r_anti), _wrap(theta))


def from_db(sqz_db: float, antisqz_db: float = None, theta: float = 0.0) -> QuadratureState:
    """Build a state from squeezing/anti-squeezing levels in dB; anti-squeezing defaults to the pure value."""
    if antisqz_db is None:
        antisqz_db = sqz_db
    return squeezed(db_to_r(sqz_db), db_to_r(antisqz_db), theta)


def rotate(state: QuadratureState, phi: float) -> QuadratureState:
    return QuadratureState(state.v_min, state.v_max, _wrap(state.theta + phi))


def apply_loss(state: QuadratureState, eta: float) -> QuadratureState:
    """Mix with vacuum on a beamsplitter of power transmission eta: V' = eta*V + (1 - eta)."""
    if not 0.0 <= eta <= 1.0:
        raise DomainError(f"efficiency must lie in [0, 1], got {eta}")
    return QuadratureState(
        eta * state.v_min + (1.0 - eta),
        eta * state.v_max + (1.0 - eta),
        state.theta,
    )


def dephase(state: QuadratureState, sigma: float) -> QuadratureState:
    """Average over zero-mean Gaussian squeeze-angle jitter of RMS sigma.

    E[sin^2 dtheta] = (1 - exp(-2 sigma^2)) / 2 moves that fraction of the
    variance difference between the principal quadratures; the sum is preserved.
    """
    if sigma < 0:
        raise DomainError(f"phase jitter must be non-negative, got {sigma}")
    mix = 0.5 * (1.0 - math.exp(-2.0 * sigma * sigma))
    spread = (state.v_max - state.v_min) * mix
    v_min = state.v_min + spread
    v_max = state.v_max - spread
    if v_max < v_min:
        # full randomization limit, equal up to round-off
        v_min = v_max = 0.5 * (state.v_min + state.v_max)
    return QuadratureState(v_min, v_max, state.theta)


def measured_variance(state: QuadratureState, theta_lo: float):
    """Variance seen by a homodyne readout at angle theta_lo (scalar or array)."""
    delta = np.asarray(theta_lo, dtype=float) - state.theta
    value = state.v_min * np.cos(delta) ** 2 + state.v_max * np.sin(delta) ** 2
    return float(value) if np.ndim(value) == 0 else value


def db_to_variance(db: float) -> float:
    return 10.0 ** (-db / 10.0)


def variance_to_db(v: float) -> float:
    if v <= 0:
        raise DomainError(f"variance must be positive, got {v}")
    return -10.0 * math.log10(v)


def r_to_db(r: float) -> float:
    return DB_PER_NEPER * r


def db_to_r(db: float) -> float:
    return db / DB_PER_NEPER
