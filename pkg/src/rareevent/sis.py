"""Sequential importance sampling: adaptive bandwidths, tempering, estimator.

The smoothed densities Phi(-G_l/sigma_j) phi_n approach the optimal
importance density as sigma decreases; each tempering step picks the next
sigma so the weight coefficient of variation matches its target, estimates
the normalizing-constant ratio from the weighted ensemble, then refreshes the
ensemble by resampling and MCMC moves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .distributions import std_normal_log_cdf
from .errors import DegenerateWeightsError, FailedTemperingError
from .mcmc import (
    TemperingTarget,
    cov_from_log_weights,
    log_mean_exp,
    resample_multinomial,
    run_chains,
)
from .models import LimitStateModel, PinnedLevelModel, is_failure

SIGMA_MIN = 1e-8
SIGMA_MAX = 1e8
GRID_AUDIT_POINTS = 50


@dataclass
class SampleEnsemble:
    """The particle population moved through tempering and bridging."""

    samples: np.ndarray                  # (N, n_level)
    values: dict[int, np.ndarray]        # cached limit-state values per level
    level: int
    sigma: float = np.inf

    @property
    def size(self) -> int:
        return self.samples.shape[0]

    def level_values(self) -> np.ndarray:
        return self.values[self.level]


@dataclass
class TraceStep:
    """One tempering, bridging or peek event in estimator order."""

    kind: str                            # "temper" | "bridge" | "peek"
    level: int
    sigma: float
    s_hat: float | None = None
    beta: float | None = None
    delta: float | None = None           # realized weight COV of the step
    boundary: bool = False               # minimizer hit the search-interval edge
    delta_wopt: float | None = None      # stopping COV after the step
    n_evals: int = 0                     # model evaluations spent by this step
    wasted: bool = False                 # peek evaluations not reused by a bridge


@dataclass
class EstimatorTrace:
    """Step records whose product of S-hat factors reconstructs the estimate."""

    steps: list[TraceStep] = field(default_factory=list)
    final_correction: float = np.nan
    estimate: float = np.nan
    eval_counts: dict[int, int] = field(default_factory=dict)

    def s_product(self) -> float:
        factors = [s.s_hat for s in self.steps if s.s_hat is not None]
        return math.prod(factors) if factors else 1.0

    @property
    def n_temper(self) -> int:
        return sum(1 for s in self.steps if s.kind == "temper")

    @property
    def n_bridge(self) -> int:
        return sum(1 for s in self.steps if s.kind == "bridge")


def tempering_log_weights(g, sigma: float, sigma_prev: float) -> np.ndarray:
    """log of Phi(-G/sigma) / Phi(-G/sigma_prev); the first step has no denominator."""
    logw = std_normal_log_cdf(-np.asarray(g, dtype=float) / sigma)
    if np.isfinite(sigma_prev):
        logw = logw - std_normal_log_cdf(-np.asarray(g, dtype=float) / sigma_prev)
    return logw


def _golden_section(f, lo: float, hi: float, tol: float = 1e-4) -> float:
    inv_phi = 0.5 * (np.sqrt(5.0) - 1.0)
    a, b = lo, hi
    x1 = b - inv_phi * (b - a)
    x2 = a + inv_phi * (b - a)
    f1, f2 = f(x1), f(x2)
    while b - a > tol:
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - inv_phi * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + inv_phi * (b - a)
            f2 = f(x2)
    return 0.5 * (a + b)


def _audited_minimum(f, lo: float, hi: float, tol: float) -> float:
    """Golden section plus a coarse grid audit; ties resolve to the smallest x.

    The weight-COV objective is close to monotone but not provably unimodal,
    so the grid guards against a wrong golden-section bracket.
    """
    candidates = list(np.linspace(lo, hi, GRID_AUDIT_POINTS))
    candidates.append(_golden_section(f, lo, hi, tol=tol))
    candidates.sort()
    best_x, best_val = None, np.inf
    for x in candidates:
        val = f(x)
        if val < best_val:
            best_x, best_val = x, val
    return best_x


def solve_sigma(g, sigma_prev: float, delta_target: float,
                sigma_min: float = SIGMA_MIN, sigma_max: float = SIGMA_MAX):
    """Next tempering bandwidth minimizing (COV(w) - target)^2 over (0, sigma_prev).

    The weight COV vanishes at sigma_prev and grows as sigma shrinks, with
    the whole transition often squeezed into a thin sliver below sigma_prev,
    so the crossing is first bracketed by a geometric walk down from
    sigma_prev before the golden-section/grid refinement runs.  Reuses cached
    limit-state values only.  Returns (sigma, realized_cov, hit_boundary).
    """
    g = np.asarray(g, dtype=float)
    if not np.all(np.isfinite(g)):
        raise ValueError("limit-state values must be finite")
    if not (sigma_prev > 0):
        raise ValueError("previous bandwidth must be positive")
    hi = min(sigma_prev, sigma_max)
    if hi <= sigma_min:
        raise FailedTemperingError("bandwidth interval collapsed below sigma_min")

    def delta_at(log_sigma: float) -> float:
        try:
            return cov_from_log_weights(
                tempering_log_weights(g, np.exp(log_sigma), sigma_prev)
            )
        except DegenerateWeightsError:
            return np.inf

    def objective(log_sigma: float) -> float:
        delta = delta_at(log_sigma)
        return (delta - delta_target) ** 2 if np.isfinite(delta) else np.inf

    log_lo, log_hi = np.log(sigma_min), np.log(hi)
    # walk down from sigma_prev until the COV exceeds its target
    step = 0.5 * np.log(2.0)
    bracket_lo, bracket_hi = log_lo, log_hi
    x = log_hi
    crossed = False
    while x > log_lo:
        x_next = max(x - step, log_lo)
        if delta_at(x_next) >= delta_target:
            bracket_lo, bracket_hi = x_next, x
            crossed = True
            break
        x = x_next
    if not crossed:
        # COV below target everywhere: boundary minimizer at sigma_min
        sigma = sigma_min
        return sigma, float(delta_at(log_lo)), True
    log_best = _audited_minimum(objective, bracket_lo, bracket_hi, tol=1e-4)
    if not np.isfinite(objective(log_best)):
        raise FailedTemperingError("no bandwidth produced usable weights")
    sigma = float(np.exp(log_best))
    if np.isfinite(sigma_prev):
        sigma = min(sigma, sigma_prev * (1.0 - 1e-12))
    delta = cov_from_log_weights(tempering_log_weights(g, sigma, sigma_prev))
    span = log_hi - log_lo
    on_edge = (log_best - log_lo < 1e-3 * span) or (log_hi - log_best < 1e-3 * span)
    return sigma, float(delta), bool(on_edge)


def tempering_step(model: LimitStateModel, ensemble: SampleEnsemble,
                   delta_target: float, kernel, c: float, burn_in: int,
                   rng: np.random.Generator) -> tuple[SampleEnsemble, TraceStep]:
    """One tempering update: new sigma, S-hat, resampling, MCMC refresh."""
    level = ensemble.level
    g = ensemble.level_values()
    evals_before = model.counter.total()
    sigma, delta, boundary = solve_sigma(g, ensemble.sigma, delta_target)
    if np.isfinite(ensemble.sigma):
        assert sigma < ensemble.sigma, "bandwidth schedule must strictly decrease"
    log_w = tempering_log_weights(g, sigma, ensemble.sigma)
    s_hat = float(np.exp(log_mean_exp(log_w)))

    n_seeds = _seed_count(ensemble.size, c)
    kernel.prepare(ensemble.samples, log_w, model.dim(level), rng, n_steps=round(1.0 / c))
    lin_w = np.exp(log_w - log_w.max())
    idx = resample_multinomial(lin_w, n_seeds, rng)
    target = TemperingTarget(level=level, sigma=sigma)
    states, values = run_chains(
        model, target, kernel, ensemble.samples[idx], {level: g[idx]}, c, burn_in, rng
    )
    new_ensemble = SampleEnsemble(samples=states, values={level: values[level]},
                                  level=level, sigma=sigma)
    step = TraceStep(kind="temper", level=level, sigma=sigma, s_hat=s_hat,
                     delta=delta, boundary=boundary,
                     n_evals=model.counter.total() - evals_before)
    return new_ensemble, step


def _seed_count(n: int, c: float) -> int:
    if not (0.0 < c <= 1.0):
        raise ValueError("seed fraction c must lie in (0, 1]")
    inv_c = round(1.0 / c)
    if abs(inv_c * c - 1.0) > 1e-9:
        raise ValueError("1/c must be an integer")
    n_seeds = round(c * n)
    if abs(n_seeds - c * n) > 1e-9:
        raise ValueError("c*N must be an integer")
    return n_seeds


def optimal_log_weights(ensemble: SampleEnsemble) -> np.ndarray:
    """log of I(G<=0) / Phi(-G/sigma), the weights toward the optimal density."""
    g = ensemble.level_values()
    log_w = np.full(g.shape, -np.inf)
    fail = is_failure(g)
    if np.any(fail):
        log_w[fail] = -std_normal_log_cdf(-g[fail] / ensemble.sigma)
    return log_w


def stopping_cov(ensemble: SampleEnsemble) -> float:
    """COV of the optimal-density weights; +inf while no sample fails."""
    if not np.isfinite(ensemble.sigma):
        raise ValueError("stopping rule needs a tempered ensemble")
    log_w = optimal_log_weights(ensemble)
    if np.all(np.isneginf(log_w)):
        return np.inf
    return cov_from_log_weights(log_w)


def final_correction(ensemble: SampleEnsemble) -> float:
    """Mean optimal-density weight: the last factor of the estimator."""
    log_w = optimal_log_weights(ensemble)
    if np.all(np.isneginf(log_w)):
        return 0.0
    return float(np.exp(log_mean_exp(log_w)))


def sis_estimate(model: LimitStateModel, level: int, n_samples: int,
                 delta_target: float, kernel, c: float, rng: np.random.Generator,
                 burn_in: int = 0, max_steps: int = 100):
    """Single-level SIS estimate at one discretization level.

    Runs the multilevel loop degenerately on a single-level view of the
    model, so a one-level multilevel run reproduces it draw for draw.
    """
    from .mlsis import mlsis_estimate

    pinned = model if (model.max_level == 1 and level == 1) else PinnedLevelModel(model, level)
    return mlsis_estimate(pinned, 1, n_samples, delta_target, kernel, c, rng,
                          burn_in=burn_in, max_steps=max_steps)
