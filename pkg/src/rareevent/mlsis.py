"""Multilevel SIS: bridging between discretization levels and the update scheme.

A level update interpolates geometrically between the smoothed densities of
two consecutive levels with an exponent beta growing adaptively from 0 to 1.
The decision between tempering and bridging probes a small sample subset on
the next level; its fine-level evaluations are reused if bridging follows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distributions import std_normal_log_cdf
from .errors import NonconvergenceError
from .mcmc import (
    BridgingTarget,
    cov_from_log_weights,
    extend_dimension,
    log_mean_exp,
    resample_multinomial,
    run_chains,
)
from .models import LimitStateModel
from .sis import (
    EstimatorTrace,
    SampleEnsemble,
    TraceStep,
    _audited_minimum,
    _seed_count,
    final_correction,
    stopping_cov,
    tempering_step,
)


def bridging_log_ratios(g_coarse, g_fine, sigma: float) -> np.ndarray:
    """Per-sample log Phi(-G_fine/sigma) - log Phi(-G_coarse/sigma)."""
    return (std_normal_log_cdf(-np.asarray(g_fine, dtype=float) / sigma)
            - std_normal_log_cdf(-np.asarray(g_coarse, dtype=float) / sigma))


def solve_beta(g_coarse, g_fine, sigma: float, beta_prev: float,
               delta_target: float) -> tuple[float, float, bool]:
    """Next bridging exponent in (beta_prev, 1] matching the weight-COV target.

    Returns exactly 1.0 whenever the full remaining step already satisfies the
    target.  Returns (beta, realized_cov, hit_boundary).
    """
    if not (0.0 <= beta_prev < 1.0):
        raise ValueError("beta_prev must lie in [0, 1)")
    ratios = bridging_log_ratios(g_coarse, g_fine, sigma)

    def delta_at(beta: float) -> float:
        return cov_from_log_weights((beta - beta_prev) * ratios)

    full = delta_at(1.0)
    if full <= delta_target:
        return 1.0, float(full), False

    def objective(beta: float) -> float:
        return (delta_at(beta) - delta_target) ** 2

    # the COV rises from 0 at beta_prev and can saturate well before 1, so
    # bisect onto the crossing before the golden-section/grid refinement
    lo = beta_prev
    hi = 1.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if delta_at(mid) >= delta_target:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-12 * (1.0 - beta_prev):
            break
    pad = hi - lo
    lo = max(beta_prev + 1e-12 * (1.0 - beta_prev), lo - pad)
    hi = min(1.0, hi + pad)
    beta = float(_audited_minimum(objective, lo, hi, tol=1e-8))
    delta = delta_at(beta)
    span = 1.0 - beta_prev
    on_edge = (beta - beta_prev < 1e-3 * span) or (1.0 - beta < 1e-3 * span)
    return beta, float(delta), bool(on_edge)


@dataclass
class PeekCache:
    """Subset fine-level evaluations kept for reuse by a following bridge."""

    indices: np.ndarray       # positions within the ensemble
    extended: np.ndarray      # subset samples extended to the fine dimension
    g_fine: np.ndarray


def peek_level_update(model: LimitStateModel, ensemble: SampleEnsemble,
                      n_subset: int, rng: np.random.Generator):
    """COV of one-step level-update weights on a random subset.

    Draws `n_subset` samples without replacement, extends them to the next
    level's dimension if needed, and evaluates the fine level once per subset
    sample.  Returns (delta, PeekCache).
    """
    if not (0 < n_subset < ensemble.size):
        raise ValueError("subset size must lie strictly between 0 and N")
    level = ensemble.level
    fine = level + 1
    idx = rng.choice(ensemble.size, size=n_subset, replace=False)
    subset = ensemble.samples[idx]
    delta_n = model.dim(fine) - model.dim(level)
    extended = extend_dimension(subset, delta_n, rng)
    g_fine = model.evaluate_batch(extended, fine)
    log_w = bridging_log_ratios(ensemble.values[level][idx], g_fine, ensemble.sigma)
    delta = cov_from_log_weights(log_w)
    return float(delta), PeekCache(indices=idx, extended=extended, g_fine=g_fine)


def _extend_ensemble(model, ensemble, rng, peek_cache):
    """Lift the ensemble to the next level's dimension and evaluate it there.

    Cached peek rows keep their extension coordinates and fine values; only
    the complement is evaluated, so a bridge after a peek costs N - N_s fine
    evaluations for this stage.
    """
    level = ensemble.level
    fine = level + 1
    n_fine = model.dim(fine)
    n = ensemble.size
    if peek_cache is not None:
        cached = np.zeros(n, dtype=bool)
        cached[peek_cache.indices] = True
        fresh_idx = np.flatnonzero(~cached)
    else:
        fresh_idx = np.arange(n)
    samples = np.empty((n, n_fine))
    samples[:, : ensemble.samples.shape[1]] = ensemble.samples
    delta_n = n_fine - ensemble.samples.shape[1]
    if delta_n > 0:
        samples[fresh_idx, ensemble.samples.shape[1]:] = rng.standard_normal(
            (fresh_idx.size, delta_n)
        )
        if peek_cache is not None:
            samples[peek_cache.indices] = peek_cache.extended
    g_fine = np.empty(n)
    if fresh_idx.size:
        g_fine[fresh_idx] = model.evaluate_batch(samples[fresh_idx], fine)
    if peek_cache is not None:
        g_fine[peek_cache.indices] = peek_cache.g_fine
    return samples, g_fine


def bridge_level(model: LimitStateModel, ensemble: SampleEnsemble,
                 delta_target: float, kernel, c: float, burn_in: int,
                 rng: np.random.Generator, peek_cache: PeekCache | None = None,
                 max_bridge_steps: int = 100):
    """Move the ensemble from its level to the next one (Alg-2 style loop)."""
    level = ensemble.level
    fine = level + 1
    if fine > model.max_level:
        raise ValueError("cannot bridge beyond the finest level")
    sigma = ensemble.sigma
    if not np.isfinite(sigma):
        raise ValueError("bridging requires a tempered ensemble")
    evals_before = model.counter.total()
    samples, g_fine = _extend_ensemble(model, ensemble, rng, peek_cache)
    g_coarse = ensemble.values[level]

    steps: list[TraceStep] = []
    beta = 0.0
    n_seeds = _seed_count(ensemble.size, c)
    for _ in range(max_bridge_steps):
        stage_start = model.counter.total()
        ratios = bridging_log_ratios(g_coarse, g_fine, sigma)
        beta_new, delta, boundary = solve_beta(g_coarse, g_fine, sigma, beta, delta_target)
        log_w = (beta_new - beta) * ratios
        s_hat = float(np.exp(log_mean_exp(log_w)))
        kernel.prepare(samples, log_w, model.dim(fine), rng, n_steps=round(1.0 / c))
        idx = resample_multinomial(np.exp(log_w - log_w.max()), n_seeds, rng)
        target = BridgingTarget(coarse_level=level, fine_level=fine,
                                sigma=sigma, beta=beta_new)
        seed_values = {lvl: (g_coarse if lvl == level else g_fine)[idx]
                       for lvl in target.levels}
        samples, values = run_chains(model, target, kernel, samples[idx],
                                     seed_values, c, burn_in, rng)
        g_fine = values[fine]
        g_coarse = values.get(level)
        evals_so_far = model.counter.total()
        steps.append(TraceStep(
            kind="bridge", level=fine, sigma=sigma, s_hat=s_hat, beta=beta_new,
            delta=delta, boundary=boundary,
            n_evals=evals_so_far - (stage_start if steps else evals_before),
        ))
        beta = beta_new
        if beta == 1.0:
            new_ensemble = SampleEnsemble(samples=samples, values={fine: g_fine},
                                          level=fine, sigma=sigma)
            return new_ensemble, steps
    raise NonconvergenceError(f"bridge did not reach beta=1 in {max_bridge_steps} steps")


def mlsis_estimate(model: LimitStateModel, max_level: int, n_samples: int,
                   delta_target: float, kernel, c: float, rng: np.random.Generator,
                   subset_fraction: float = 0.1, burn_in: int = 0,
                   max_steps: int = 100):
    """Multilevel SIS estimate following the tempering/bridging update scheme.

    Tempering always runs first; afterwards each iteration either tempers,
    bridges, or probes a subset on the next level to decide.  The run ends
    once the stopping COV meets its target and the ensemble sits on the
    finest level.  Returns (probability, EstimatorTrace).
    """
    if not (1 <= max_level <= model.max_level):
        raise ValueError(f"max_level must lie in 1..{model.max_level}")
    if n_samples < 2:
        raise ValueError("need at least two samples")
    if not (delta_target > 0):
        raise ValueError("delta_target must be positive")
    _seed_count(n_samples, c)
    n_subset = max(1, round(subset_fraction * n_samples))
    counts_before = model.counter.counts()

    samples = rng.standard_normal((n_samples, model.dim(1)))
    g1 = model.evaluate_batch(samples, 1)
    ensemble = SampleEnsemble(samples=samples, values={1: g1}, level=1, sigma=np.inf)

    trace = EstimatorTrace()
    tempering_finished = False
    bridging_finished = False
    last_was_bridge = False

    def absorb(step_records):
        nonlocal tempering_finished, bridging_finished
        for record in step_records:
            trace.steps.append(record)
        delta_wopt = stopping_cov(ensemble)
        trace.steps[-1].delta_wopt = delta_wopt
        if delta_wopt <= delta_target:
            tempering_finished = True
        if ensemble.level == max_level:
            bridging_finished = True

    ensemble, first = tempering_step(model, ensemble, delta_target, kernel, c, burn_in, rng)
    absorb([first])

    while not (tempering_finished and bridging_finished):
        if len(trace.steps) >= max_steps:
            raise NonconvergenceError(f"no convergence within {max_steps} steps")
        if tempering_finished:
            ensemble, records = bridge_level(model, ensemble, delta_target, kernel,
                                             c, burn_in, rng)
            last_was_bridge = True
            absorb(records)
        elif bridging_finished or last_was_bridge:
            ensemble, record = tempering_step(model, ensemble, delta_target, kernel,
                                              c, burn_in, rng)
            last_was_bridge = False
            absorb([record])
        else:
            peek_start = model.counter.total()
            delta_peek, cache = peek_level_update(model, ensemble, n_subset, rng)
            peek_record = TraceStep(kind="peek", level=ensemble.level + 1,
                                    sigma=ensemble.sigma, delta=delta_peek,
                                    n_evals=model.counter.total() - peek_start)
            trace.steps.append(peek_record)
            if delta_peek <= delta_target:
                peek_record.wasted = True
                ensemble, record = tempering_step(model, ensemble, delta_target,
                                                  kernel, c, burn_in, rng)
                last_was_bridge = False
                absorb([record])
            else:
                ensemble, records = bridge_level(model, ensemble, delta_target,
                                                 kernel, c, burn_in, rng,
                                                 peek_cache=cache)
                last_was_bridge = True
                absorb(records)

    correction = final_correction(ensemble)
    trace.final_correction = correction
    trace.estimate = trace.s_product() * correction
    counts_after = model.counter.counts()
    trace.eval_counts = {
        lvl: counts_after.get(lvl, 0) - counts_before.get(lvl, 0)
        for lvl in sorted(counts_after)
    }
    return trace.estimate, trace
