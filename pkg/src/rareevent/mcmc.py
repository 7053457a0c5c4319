"""Metropolis-Hastings machinery for the tempering/bridging targets.

Targets are the smoothed densities Phi(-G/sigma)^(...) * phi_n(u); kernels
supply proposals plus whatever prior/proposal terms do not cancel in the
acceptance ratio.  Chains from all seeds advance in lockstep so every
iteration evaluates the limit state once per proposal and per involved level,
as one batched call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distributions import (
    VmfnParams,
    fit_vmfn,
    sample_vmfn,
    std_normal_log_cdf,
    std_normal_log_pdf,
    vmfn_log_density,
)
from .errors import DegenerateWeightsError
from .models import LimitStateModel


def cov_of_weights(weights) -> float:
    """Coefficient of variation (population std / mean) of importance weights."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    total = w.sum()
    if not (total > 0):
        raise DegenerateWeightsError("all weights are zero")
    mean = total / w.size
    return float(np.sqrt(np.mean((w - mean) ** 2)) / mean)


def cov_from_log_weights(log_weights) -> float:
    """COV computed after a stabilizing shift; scale-invariant, overflow-safe."""
    lw = np.asarray(log_weights, dtype=float)
    m = lw.max()
    if m == -np.inf:
        raise DegenerateWeightsError("all weights are zero")
    return cov_of_weights(np.exp(lw - m))


def log_mean_exp(log_weights) -> float:
    lw = np.asarray(log_weights, dtype=float)
    m = lw.max()
    if m == -np.inf:
        return -np.inf
    return float(m + np.log(np.mean(np.exp(lw - m))))


def resample_multinomial(weights, count: int, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. categorical seed indices proportional to the weights."""
    if count < 1:
        raise ValueError("need at least one draw")
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    total = w.sum()
    if not (total > 0) or not np.isfinite(total):
        raise DegenerateWeightsError("cannot resample from zero or non-finite weights")
    idx = rng.choice(w.size, size=count, p=w / total)
    assert np.all(w[idx] > 0), "zero-weight sample selected by resampling"
    return idx


def extend_dimension(samples, delta_n: int, rng: np.random.Generator) -> np.ndarray:
    """Append delta_n i.i.d. standard-normal coordinates to each sample."""
    if delta_n < 0:
        raise ValueError("delta_n must be >= 0")
    u = np.atleast_2d(np.asarray(samples, dtype=float))
    if delta_n == 0:
        return u
    extra = rng.standard_normal((u.shape[0], delta_n))
    return np.concatenate([u, extra], axis=1)


@dataclass(frozen=True)
class TemperingTarget:
    """Smooth part of p_(j,l): log Phi(-G_l / sigma_j)."""

    level: int
    sigma: float

    @property
    def levels(self) -> tuple[int, ...]:
        return (self.level,)

    def log_smooth(self, g_by_level: dict[int, np.ndarray]) -> np.ndarray:
        return std_normal_log_cdf(-np.asarray(g_by_level[self.level]) / self.sigma)


@dataclass(frozen=True)
class BridgingTarget:
    """Smooth part of the bridge: beta on the fine level, 1-beta on the coarse."""

    coarse_level: int
    fine_level: int
    sigma: float
    beta: float

    def __post_init__(self):
        if not (0.0 < self.beta <= 1.0):
            raise ValueError("bridging exponent must lie in (0, 1]")

    @property
    def levels(self) -> tuple[int, ...]:
        if self.beta == 1.0:
            return (self.fine_level,)
        return (self.coarse_level, self.fine_level)

    def log_smooth(self, g_by_level: dict[int, np.ndarray]) -> np.ndarray:
        fine = std_normal_log_cdf(-np.asarray(g_by_level[self.fine_level]) / self.sigma)
        if self.beta == 1.0:
            return fine
        coarse = std_normal_log_cdf(-np.asarray(g_by_level[self.coarse_level]) / self.sigma)
        return self.beta * fine + (1.0 - self.beta) * coarse


@dataclass
class KernelStats:
    proposals: int = 0
    accepted: int = 0
    rho: float | None = None
    params: VmfnParams | None = None

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposals if self.proposals else 0.0


class AcsKernel:
    """Adaptive conditional sampler: pCN proposal with tuned correlation.

    The proposal rho*u + sqrt(1-rho^2)*eps leaves phi_n invariant, so prior
    and proposal terms cancel in the acceptance ratio.  The noise scale
    lambda is adjusted in Robbins-Monro fashion toward a 44% acceptance rate;
    the adaptation state persists across tempering and bridging steps.
    """

    name = "acs"

    LAMBDA_BOUNDS = (1e-4, 2.0)  # keeps the scale responsive after saturation

    def __init__(self, lambda0: float = 0.6, target_rate: float = 0.44,
                 adapt_fraction: float = 0.1, rho_bounds=(0.001, 0.999)):
        self._lambda = float(lambda0)
        self._target = float(target_rate)
        self._adapt_fraction = float(adapt_fraction)
        self._rho_min, self._rho_max = rho_bounds
        self._batch_index = 0
        self._pending: list[float] = []
        self._adapt_every = 1
        self.stats = KernelStats(rho=self._rho())

    def _rho(self) -> float:
        noise = min(self._lambda, 1.0 - 1e-12)
        rho = np.sqrt(1.0 - noise * noise)
        return float(min(max(rho, self._rho_min), self._rho_max))

    def prepare(self, samples, log_weights, dim: int, rng, n_steps: int) -> None:
        self._adapt_every = max(1, int(np.ceil(self._adapt_fraction * n_steps)))
        self._pending.clear()

    def propose(self, current: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        rho = self._rho()
        eps = rng.standard_normal(current.shape)
        return rho * current + np.sqrt(1.0 - rho * rho) * eps

    def log_accept_extra(self, current, proposal) -> np.ndarray:
        return np.zeros(current.shape[0])

    def feedback(self, accepted: np.ndarray) -> None:
        self.stats.proposals += accepted.size
        self.stats.accepted += int(np.count_nonzero(accepted))
        self._pending.append(float(np.mean(accepted)))
        if len(self._pending) >= self._adapt_every:
            self._batch_index += 1
            rate = float(np.mean(self._pending))
            self._pending.clear()
            proposal = self._lambda * np.exp((rate - self._target) / np.sqrt(self._batch_index))
            self._lambda = float(np.clip(proposal, *self.LAMBDA_BOUNDS))
            self.stats.rho = self._rho()


class VmfnIndependentKernel:
    """Independence sampler proposing from a vMFN fit of the weighted ensemble."""

    name = "vmfn"

    def __init__(self, params: VmfnParams | None = None):
        self.params = params
        self.stats = KernelStats(params=params)

    def prepare(self, samples, log_weights, dim: int, rng, n_steps: int) -> None:
        lw = np.asarray(log_weights, dtype=float)
        w = np.exp(lw - lw.max())
        self.params = fit_vmfn(np.asarray(samples)[:, :dim], w)
        self.stats.params = self.params

    def propose(self, current: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return sample_vmfn(self.params, current.shape[1], rng, size=current.shape[0])

    def log_accept_extra(self, current, proposal) -> np.ndarray:
        # phi_n(prop)/phi_n(cur) * q(cur)/q(prop) for the independence proposal
        return (
            std_normal_log_pdf(proposal)
            - std_normal_log_pdf(current)
            + vmfn_log_density(current, self.params)
            - vmfn_log_density(proposal, self.params)
        )

    def feedback(self, accepted: np.ndarray) -> None:
        self.stats.proposals += accepted.size
        self.stats.accepted += int(np.count_nonzero(accepted))


def make_kernel(name: str):
    if name == "acs":
        return AcsKernel()
    if name == "vmfn":
        return VmfnIndependentKernel()
    raise ValueError(f"unknown kernel '{name}' (expected 'acs' or 'vmfn')")


def _evaluate_levels(model: LimitStateModel, proposals: np.ndarray,
                     levels: tuple[int, ...]) -> dict[int, np.ndarray]:
    out = {}
    for level in levels:
        n_l = model.dim(level)
        out[level] = model.evaluate_batch(proposals[:, :n_l], level)
    return out


def run_chains(model: LimitStateModel, target, kernel, seeds: np.ndarray,
               seed_values: dict[int, np.ndarray], c: float, burn_in: int,
               rng: np.random.Generator):
    """Advance one MH chain per seed for burn_in + 1/c lockstep iterations.

    Returns (states, values) where states stacks the post-burn-in iterations
    of every chain (count = len(seeds) / c) and values carries the cached
    limit-state evaluations per level of the target.  Seed values are reused,
    never recomputed; each iteration costs one batched model evaluation per
    target level.
    """
    inv_c = round(1.0 / c)
    if abs(inv_c * c - 1.0) > 1e-9:
        raise ValueError("1/c must be an integer")
    steps = burn_in + inv_c
    begin = getattr(kernel, "begin_target", None)
    if begin is not None:
        begin(target)
    current = np.array(seeds, dtype=float)
    values = {lvl: np.array(seed_values[lvl], dtype=float) for lvl in target.levels}
    kept_states = []
    kept_values = {lvl: [] for lvl in target.levels}
    log_smooth_cur = target.log_smooth(values)
    for step in range(steps):
        proposals = kernel.propose(current, rng)
        prop_values = _evaluate_levels(model, proposals, target.levels)
        log_smooth_prop = target.log_smooth(prop_values)
        log_alpha = log_smooth_prop - log_smooth_cur + kernel.log_accept_extra(current, proposals)
        accept = np.log(rng.uniform(size=current.shape[0])) < log_alpha
        current[accept] = proposals[accept]
        log_smooth_cur = np.where(accept, log_smooth_prop, log_smooth_cur)
        for lvl in target.levels:
            values[lvl] = np.where(accept, prop_values[lvl], values[lvl])
        kernel.feedback(accept)
        if step >= burn_in:
            kept_states.append(current.copy())
            for lvl in target.levels:
                kept_values[lvl].append(values[lvl].copy())
    states = np.concatenate(kept_states, axis=0)
    out_values = {lvl: np.concatenate(kept_values[lvl]) for lvl in target.levels}
    return states, out_values


def mh_chain(model: LimitStateModel, target, kernel, seed: np.ndarray,
             seed_values: dict[int, float], c: float, burn_in: int,
             rng: np.random.Generator):
    """Single-seed convenience wrapper around `run_chains`."""
    seeds = np.asarray(seed, dtype=float)[None, :]
    vals = {lvl: np.array([v]) for lvl, v in seed_values.items()}
    return run_chains(model, target, kernel, seeds, vals, c, burn_in, rng)
