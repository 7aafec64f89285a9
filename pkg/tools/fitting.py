"""
Least-squares estimation of detector parameters from measured or synthesized spectra.

The objective is the mean squared log10 ratio of model to data ASD over the
fit band, with bins around registered lines masked. The optimizer is bounded
Nelder-Mead on parameters rescaled to [0, 1] (log-scaled for power and the
classical amplitude), restarted from the best point until a restart stops
improving or the evaluation budget runs out.

Only the product eta_det * power_bs enters the shot floor, and from a single
spectrum only G(detuning) * power_bs is identifiable. Detuning becomes
identifiable once a squeezing-on spectrum is fitted with chain-derived
squeezing, because the signal-recycling reflection stage depends on it.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize
from tqdm import tqdm

from shared.config import (
    FIT_BAND_HZ,
    FIT_FTOL,
    FIT_MAX_EVALS,
    FIT_RESTARTS,
    FIT_XTOL,
    LINE_GUARD_BINS,
    MAX_WORKERS,
    SHOW_PROGRESS,
)
from tools.exceptions import DegenerateDataError, FitSetupError, SqzLabError
from tools.noise_model import assemble_budget, recycling_gain
from tools.params import ToolkitConfig
from tools.spectra import Spectrum

logger = logging.getLogger(__name__)

# name -> (config section, unit)
PARAMETERS = {
    "power_bs": ("detector", "W"),
    "detuning": ("detector", "rad"),
    "eta_det": ("detector", ""),
    "amp_1hz": ("classical", "m/sqrt(Hz) Hz^slope"),
    "slope": ("classical", ""),
    "r_eff": (None, ""),
}
ALIASES = {"P": "power_bs", "phi": "detuning", "eta": "eta_det", "amp": "amp_1hz"}
LOG_SCALED = {"power_bs", "amp_1hz"}
LOSS_LOG_ASD = "log_asd_mse"
PENALTY = 1e6


@dataclass(frozen=True)
class FitSpectrum:
    spectrum: Spectrum
    squeezing: bool = False
    label: str = ""


@dataclass
class FitProblem:
    spectra: Tuple[FitSpectrum, ...]
    free: Dict[str, Tuple[float, float]]
    config: ToolkitConfig
    initial: Dict[str, float] = field(default_factory=dict)
    fit_band: Tuple[float, float] = FIT_BAND_HZ
    loss: str = LOSS_LOG_ASD
    mask: Tuple[float, ...] = ()
    r_eff: Optional[float] = None
    chain_preset: str = "injection"
    max_evals: int = FIT_MAX_EVALS
    xtol: float = FIT_XTOL
    ftol: float = FIT_FTOL
    restarts: int = FIT_RESTARTS

    def __post_init__(self):
        if isinstance(self.spectra, (FitSpectrum, Spectrum)):
            self.spectra = (self.spectra,)
        self.spectra = tuple(s if isinstance(s, FitSpectrum) else FitSpectrum(s) for s in self.spectra)
        self.free = {canonical_name(k): tuple(v) for k, v in self.free.items()}
        self.initial = {canonical_name(k): float(v) for k, v in self.initial.items()}
        self.mask = tuple(float(f) for f in self.mask)
        check_problem(self)

    @property
    def names(self) -> List[str]:
        return list(self.free)

    @property
    def has_squeezed(self) -> bool:
        return any(s.squeezing for s in self.spectra)


@dataclass
class FitResult:
    estimates: Dict[str, float]
    uncertainties: Dict[str, float]
    units: Dict[str, str]
    residual_rms: float
    objective: float
    n_evals: int
    converged: bool
    covariance: np.ndarray
    initial: Dict[str, float]
    bounds: Dict[str, Tuple[float, float]]
    n_bins: int
    masked_hz: List[float]
    fit_band: Tuple[float, float]
    trace: List[float] = field(default_factory=list)
    restarts_used: int = 0
    derived: Dict[str, float] = field(default_factory=dict)


@dataclass
class ProfileResult:
    parameter: str
    values: np.ndarray
    objective: np.ndarray
    mode: str
    estimates: List[Dict[str, float]] = field(default_factory=list)

    @property
    def argmin(self) -> float:
        return float(self.values[int(np.argmin(self.objective))])


def canonical_name(name: str) -> str:
    name = ALIASES.get(name.strip(), name.strip())
    if name not in PARAMETERS:
        raise FitSetupError(f"unknown fit parameter '{name}' (known: {sorted(PARAMETERS)} and aliases {sorted(ALIASES)})")
    return name


def current_value(config: ToolkitConfig, name: str, r_eff: Optional[float] = None) -> Optional[float]:
    section, _ = PARAMETERS[name]
    if section is None:
        return r_eff
    return float(getattr(getattr(config, section), name))


def default_bounds(config: ToolkitConfig, name: str) -> Tuple[float, float]:
    if name == "power_bs":
        return (1e-3, 1.0)
    if name == "detuning":
        return (-0.5, 0.5)
    if name == "eta_det":
        return (0.05, 1.0)
    if name == "slope":
        return (0.5, 16.0)
    if name == "r_eff":
        return (0.0, 3.0)
    amp = config.classical.amp_1hz
    if amp <= 0:
        raise FitSetupError("amp_1hz needs explicit bounds when the configured amplitude is zero")
    return (amp / 1e3, amp * 1e3)


def parse_free(text: str, config: ToolkitConfig) -> Dict[str, Tuple[float, float]]:
    """'P,phi' or 'P=0.01:0.2,phi' -> {name: (lo, hi)}; missing bounds get defaults."""
    free = {}
    for item in filter(None, (part.strip() for part in text.split(","))):
        name, _, bounds = item.partition("=")
        name = canonical_name(name)
        if bounds:
            try:
                lo, hi = (float(b) for b in bounds.split(":"))
            except ValueError as e:
                raise FitSetupError(f"bounds for '{name}' must look like lo:hi, got '{bounds}'") from e
            free[name] = (lo, hi)
        else:
            free[name] = default_bounds(config, name)
    return free


def check_problem(problem: FitProblem):
    """Raise FitSetupError for ill-posed problems, including the known parameter degeneracies."""
    if not problem.spectra:
        raise FitSetupError("fit problem has no spectra")
    if not problem.free:
        raise FitSetupError("fit problem has no free parameters")
    if problem.loss != LOSS_LOG_ASD:
        raise FitSetupError(f"unknown loss '{problem.loss}' (supported: {LOSS_LOG_ASD})")
    for name, (lo, hi) in problem.free.items():
        if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
            raise FitSetupError(f"bounds for '{name}' must be finite with lo < hi, got ({lo}, {hi})")
        if name in LOG_SCALED and lo <= 0:
            raise FitSetupError(f"'{name}' is fitted on a log scale and needs lo > 0")

    free = set(problem.free)
    if {"power_bs", "eta_det"} <= free:
        raise FitSetupError(
            "power_bs and eta_det are degenerate (the floor depends only on eta_det * power_bs); pin one of them"
        )
    if "r_eff" in free and not problem.has_squeezed:
        raise FitSetupError("r_eff is free but no squeezing-on spectrum is given")
    if "detuning" in free:
        if not problem.has_squeezed:
            raise FitSetupError(
                "detuning is degenerate with power_bs on unsqueezed data (only G(detuning) * power_bs is "
                "identifiable); add a squeezing-on spectrum"
            )
        if "r_eff" in free or problem.r_eff is not None:
            raise FitSetupError("detuning can only be fitted with chain-derived squeezing (r_eff not set)")

    if problem.has_squeezed and "r_eff" not in free and problem.r_eff is None:
        if problem.chain_preset not in problem.config.chains:
            raise FitSetupError(
                f"squeezing-on spectrum needs r_eff or the '{problem.chain_preset}' efficiency chain preset"
            )

    lo, hi = problem.fit_band
    if not lo < hi:
        raise FitSetupError(f"fit band must satisfy lo < hi, got {problem.fit_band}")
    for s in problem.spectra:
        f = s.spectrum.frequencies
        tol = 1e-9 * hi
        if lo < f[0] - tol or hi > f[-1] + tol:
            raise FitSetupError(f"fit band [{lo:g}, {hi:g}] Hz is not within the spectrum [{f[0]:g}, {f[-1]:g}] Hz")


def line_mask(spectrum: Spectrum, lines: Sequence[float], guard_bins: int = LINE_GUARD_BINS) -> np.ndarray:
    """True for bins kept; False within +/- guard_bins of each line's nearest bin."""
    f = spectrum.frequencies
    keep = np.ones(f.shape, dtype=bool)
    for f0 in lines:
        if f[0] <= f0 <= f[-1]:
            k0 = int(np.argmin(np.abs(f - f0)))
            keep[max(k0 - guard_bins, 0):k0 + guard_bins + 1] = False
    return keep


def log_asd_objective(model: np.ndarray, data: np.ndarray) -> float:
    """Mean squared log10(model / data); invariant under a common positive scale factor."""
    return float(np.mean(np.log10(model / data) ** 2))


class _Evaluator:
    """Objective in normalized coordinates; remembers the best point and evaluation count."""

    def __init__(self, problem: FitProblem):
        self.problem = problem
        self.names = problem.names
        lines = list(problem.mask) + [line.frequency for line in problem.config.classical.lines]
        self.segments = []
        self.masked: List[float] = sorted(set(lines))
        lo, hi = problem.fit_band
        for s in problem.spectra:
            spec = s.spectrum
            keep = (spec.frequencies >= lo) & (spec.frequencies <= hi) & line_mask(spec, lines)
            data = spec.asd[keep]
            if data.size == 0:
                raise FitSetupError(f"no unmasked bins in the fit band {problem.fit_band}")
            if np.any(~(data > 0)):
                raise DegenerateDataError("spectrum has non-positive ASD bins inside the fit band")
            self.segments.append((spec.frequencies[keep], data, s.squeezing))
        self.n_bins = sum(len(seg[1]) for seg in self.segments)
        self.n_evals = 0
        self.best_f = math.inf
        self.best_u: Optional[np.ndarray] = None
        self.trace: List[float] = []

    def to_physical(self, u: np.ndarray) -> Dict[str, float]:
        values = {}
        for name, ui in zip(self.names, np.clip(u, 0.0, 1.0)):
            lo, hi = self.problem.free[name]
            if name in LOG_SCALED:
                x = math.exp(math.log(lo) + ui * (math.log(hi) - math.log(lo)))
            else:
                x = lo + ui * (hi - lo)
            values[name] = float(min(max(x, lo), hi))
        return values

    def to_normalized(self, values: Dict[str, float]) -> np.ndarray:
        u = []
        for name in self.names:
            lo, hi = self.problem.free[name]
            x = min(max(values[name], lo), hi)
            if name in LOG_SCALED:
                u.append((math.log(x) - math.log(lo)) / (math.log(hi) - math.log(lo)))
            else:
                u.append((x - lo) / (hi - lo))
        return np.array(u)

    def jacobian_diag(self, values: Dict[str, float]) -> np.ndarray:
        """dx/du for each parameter at `values`."""
        scale = []
        for name in self.names:
            lo, hi = self.problem.free[name]
            scale.append(values[name] * math.log(hi / lo) if name in LOG_SCALED else hi - lo)
        return np.array(scale)

    def model_config(self, values: Dict[str, float]) -> Tuple[ToolkitConfig, Optional[float]]:
        updates: Dict[str, Dict[str, float]] = {}
        for name, value in values.items():
            section, _ = PARAMETERS[name]
            if section is not None:
                updates.setdefault(section, {})[name] = value
        config = self.problem.config.with_updates(**updates) if updates else self.problem.config
        return config, values.get("r_eff", self.problem.r_eff)

    def objective_at(self, values: Dict[str, float]) -> float:
        config, r_eff = self.model_config(values)
        squeezer = config.squeezer
        ratios = []
        try:
            for freqs, data, squeezing in self.segments:
                if squeezing:
                    budget = assemble_budget(config, squeezer, config.chain(self.problem.chain_preset), freqs, r_eff)
                else:
                    budget = assemble_budget(config, None, None, freqs)
                ratios.append(np.log10(budget.total / data))
        except SqzLabError as e:
            logger.debug("model not evaluable at %s: %s", values, e)
            return PENALTY
        value = float(np.mean(np.concatenate(ratios) ** 2))
        return value if math.isfinite(value) else PENALTY

    def __call__(self, u: np.ndarray) -> float:
        self.n_evals += 1
        value = self.objective_at(self.to_physical(u))
        if value < self.best_f:
            self.best_f, self.best_u = value, np.clip(np.array(u, dtype=float), 0.0, 1.0)
        return value

    def record(self, _xk=None):
        self.trace.append(self.best_f)


def _initial_simplex(u0: np.ndarray, step: float = 0.1) -> np.ndarray:
    simplex = [u0]
    for i in range(len(u0)):
        vertex = u0.copy()
        vertex[i] = u0[i] + step if u0[i] + step <= 1.0 else u0[i] - step
        simplex.append(vertex)
    return np.array(simplex)


def initial_values(problem: FitProblem) -> Dict[str, float]:
    values = {}
    for name, (lo, hi) in problem.free.items():
        guess = problem.initial.get(name)
        if guess is None:
            guess = current_value(problem.config, name, problem.r_eff)
        if guess is None:
            guess = 0.5 * (lo + hi)
        values[name] = min(max(guess, lo), hi)
    return values


def _hessian(func, u: np.ndarray, h: float = 1e-3) -> np.ndarray:
    # central differences around a point kept h inside the unit box
    c = np.clip(u, h, 1.0 - h)
    n = len(c)
    hess = np.zeros((n, n))
    f0 = func(c)
    for i in range(n):
        e_i = np.eye(n)[i] * h
        hess[i, i] = (func(c + e_i) - 2.0 * f0 + func(c - e_i)) / h ** 2
        for j in range(i + 1, n):
            e_j = np.eye(n)[j] * h
            value = (func(c + e_i + e_j) - func(c + e_i - e_j) - func(c - e_i + e_j) + func(c - e_i - e_j)) / (4 * h ** 2)
            hess[i, j] = hess[j, i] = value
    return hess


def _derived(evaluator: _Evaluator, values: Dict[str, float]) -> Dict[str, float]:
    config, r_eff = evaluator.model_config(values)
    d = config.detector
    derived = {"eta_power_w": d.eta_det * d.power_bs}
    try:
        derived["recycling_gain"] = recycling_gain(d.r_s, d.r_m, d.detuning)
    except SqzLabError:
        pass
    if evaluator.problem.has_squeezed:
        if r_eff is None:
            budget = assemble_budget(config, config.squeezer, config.chain(evaluator.problem.chain_preset),
                                     evaluator.segments[0][0][:1])
            r_eff = budget.r_eff
        derived["r_eff_used"] = float(r_eff)
    return derived


def fit(problem: FitProblem) -> FitResult:
    """Minimize the log-ASD objective; returns the best point found even when the budget runs out."""
    evaluator = _Evaluator(problem)
    start = initial_values(problem)
    u_best = evaluator.to_normalized(start)
    f_best = evaluator(u_best)
    evaluator.record()
    bounds = [(0.0, 1.0)] * len(u_best)
    converged = False
    attempts = 0

    for attempt in range(problem.restarts + 1):
        remaining = problem.max_evals - evaluator.n_evals
        if remaining <= len(u_best) + 1:
            break
        attempts = attempt + 1
        res = minimize(
            evaluator,
            x0=u_best,
            method="Nelder-Mead",
            bounds=bounds,
            callback=evaluator.record,
            options={
                "xatol": problem.xtol,
                "fatol": problem.ftol,
                "maxfev": remaining,
                "initial_simplex": _initial_simplex(u_best),
            },
        )
        improved = evaluator.best_f < f_best - problem.ftol
        u_best, f_best = evaluator.best_u, evaluator.best_f
        converged = bool(res.success)
        logger.debug("Nelder-Mead pass %d: objective %.6g after %d evaluations (%s)",
                     attempt + 1, f_best, evaluator.n_evals, res.message)
        if not converged or (attempt > 0 and not improved):
            break

    n_evals = evaluator.n_evals
    estimates = evaluator.to_physical(u_best)

    hess = _hessian(lambda u: evaluator.objective_at(evaluator.to_physical(u)), u_best)
    cov_u = 2.0 * f_best / evaluator.n_bins * np.linalg.pinv(hess)
    jac = evaluator.jacobian_diag(estimates)
    covariance = cov_u * np.outer(jac, jac)
    sigma = np.sqrt(np.clip(np.diag(covariance), 0.0, None))

    if not converged:
        logger.warning("fit stopped after %d evaluations without meeting the convergence criteria", n_evals)
    return FitResult(
        estimates=estimates,
        uncertainties=dict(zip(evaluator.names, (float(s) for s in sigma))),
        units={name: PARAMETERS[name][1] for name in evaluator.names},
        residual_rms=math.sqrt(f_best),
        objective=f_best,
        n_evals=n_evals,
        converged=converged,
        covariance=covariance,
        initial=start,
        bounds=dict(problem.free),
        n_bins=evaluator.n_bins,
        masked_hz=evaluator.masked,
        fit_band=tuple(problem.fit_band),
        trace=list(evaluator.trace),
        restarts_used=max(attempts - 1, 0),
        derived=_derived(evaluator, estimates),
    )


def _pinned_problem(problem: FitProblem, parameter: str, value: float, start: Dict[str, float]) -> FitProblem:
    free = {k: v for k, v in problem.free.items() if k != parameter}
    section, _ = PARAMETERS[parameter]
    config, r_eff = problem.config, problem.r_eff
    if section is None:
        r_eff = value
    else:
        config = config.with_updates(**{section: {parameter: value}})
    initial = {k: v for k, v in start.items() if k in free}
    return FitProblem(
        spectra=problem.spectra, free=free, config=config, initial=initial, fit_band=problem.fit_band,
        loss=problem.loss, mask=problem.mask, r_eff=r_eff, chain_preset=problem.chain_preset,
        max_evals=problem.max_evals, xtol=problem.xtol, ftol=problem.ftol, restarts=problem.restarts,
    )


def profile(
    problem: FitProblem,
    parameter: str,
    grid: Sequence[float],
    mode: str = "reoptimize",
    max_workers: int = MAX_WORKERS,
) -> ProfileResult:
    """Objective along a 1-D slice with `parameter` pinned at each grid value.

    mode="reoptimize" re-fits the remaining free parameters at every point;
    mode="hold" keeps them at the problem's initial values.
    """
    parameter = canonical_name(parameter)
    if mode not in ("reoptimize", "hold"):
        raise FitSetupError(f"profile mode must be 'reoptimize' or 'hold', got '{mode}'")
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    if grid.size == 0:
        raise FitSetupError("profile grid is empty")
    if parameter in problem.free:
        lo, hi = problem.free[parameter]
        if np.any(grid < lo) or np.any(grid > hi):
            raise FitSetupError(f"profile grid leaves the bounds ({lo}, {hi}) of '{parameter}'")
    start = initial_values(problem)
    evaluator = _Evaluator(problem)
    others_free = any(name != parameter for name in problem.free)

    def evaluate(value: float) -> Tuple[float, Dict[str, float]]:
        if mode == "hold" or not others_free:
            values = {**start, parameter: float(value)}
            return evaluator.objective_at(values), values
        result = fit(_pinned_problem(problem, parameter, value, start))
        return result.objective, {**result.estimates, parameter: float(value)}

    workers = max(1, min(max_workers, grid.size))
    with ThreadPoolExecutor(max_workers=workers) as executor:
        results = list(tqdm(executor.map(evaluate, grid), total=grid.size,
                            desc=f"profile {parameter}", disable=not SHOW_PROGRESS))
    return ProfileResult(
        parameter=parameter,
        values=grid,
        objective=np.array([r[0] for r in results]),
        mode=mode,
        estimates=[r[1] for r in results],
    )


def fit_report(result: FitResult) -> dict:
    """JSON-ready fit report: estimates, uncertainties, residual, mask, iterations, convergence."""
    return {
        "estimates": {
            name: {"value": value, "uncertainty": result.uncertainties[name], "unit": result.units[name],
                   "initial": result.initial[name], "bounds": list(result.bounds[name])}
            for name, value in result.estimates.items()
        },
        "residual_rms": result.residual_rms,
        "objective": result.objective,
        "loss": LOSS_LOG_ASD,
        "fit_band_hz": list(result.fit_band),
        "n_bins": result.n_bins,
        "mask": {"lines_hz": list(result.masked_hz), "guard_bins": LINE_GUARD_BINS},
        "n_evals": result.n_evals,
        "restarts": result.restarts_used,
        "converged": result.converged,
        "derived": dict(result.derived),
        "covariance_proxy": result.covariance.tolist(),
    }
