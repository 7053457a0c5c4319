"""Experiment harness: configuration, repetition management, statistics, CSV.

One invocation runs one configuration for a number of repetitions.  Each
repetition derives its generator from (master seed, repetition index), so
results are reproducible no matter how many workers execute them.  Error
repetitions (nonconvergence, degenerate weights) become error rows and are
excluded from the summary statistics with a reported count.
"""

from __future__ import annotations

import concurrent.futures
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import RareEventError
from .fem1d import Diffusion1dModel
from .fem2d import FlowCellModel
from .mcmc import make_kernel
from .mlsis import mlsis_estimate
from .models import LimitStateModel, LinearLsfModel, mc_estimate
from .sis import sis_estimate
from .subset import mlsus_estimate, sus_estimate

MODELS = ("linear", "diffusion1d", "flowcell2d")
METHODS = ("mc", "sis", "mlsis", "sus", "mlsus")
KERNELS = ("acs", "vmfn")


@dataclass(frozen=True)
class ExperimentConfig:
    model: str
    method: str
    n: int
    levels: int = 1
    delta_target: float = 0.25
    kernel: str = "vmfn"
    c: float = 0.1
    p0: float = 0.1
    n_b: int = 0
    level_dims: str = "ldd"          # "ldd" or "fixed"
    ns_frac: float = 0.1
    reps: int = 1
    seed: int = 0
    beta: float = 3.5                # linear model only
    tau0: float = 0.03               # flow-cell threshold
    reference: float | None = None   # for relRMSE in the summary
    workers: int = 1
    stable_timing: bool = False      # write wall_ms as 0 for byte-stable output

    def validate(self) -> None:
        if self.model not in MODELS:
            raise ValueError(f"unknown model '{self.model}'; choose from {MODELS}")
        if self.method not in METHODS:
            raise ValueError(f"unknown method '{self.method}'; choose from {METHODS}")
        if self.kernel not in KERNELS:
            raise ValueError(f"unknown kernel '{self.kernel}'; choose from {KERNELS}")
        if self.n < 1:
            raise ValueError("sample count must be positive")
        if self.reps < 1:
            raise ValueError("repetition count must be positive")
        if self.levels < 1:
            raise ValueError("level count must be positive")
        if self.level_dims not in ("ldd", "fixed"):
            raise ValueError("level_dims must be 'ldd' or 'fixed'")
        max_levels = {"linear": 1, "diffusion1d": 8, "flowcell2d": 6}[self.model]
        if self.levels > max_levels:
            raise ValueError(f"model '{self.model}' supports at most {max_levels} levels")
        if self.method in ("sis", "mlsis"):
            if not (self.delta_target > 0):
                raise ValueError("delta_target must be positive")
            inv_c = round(1.0 / self.c)
            if not (0 < self.c <= 1) or abs(inv_c * self.c - 1.0) > 1e-9:
                raise ValueError("1/c must be a positive integer")
            if abs(round(self.c * self.n) - self.c * self.n) > 1e-9:
                raise ValueError("c*N must be an integer")
            if not (0 < self.ns_frac < 1):
                raise ValueError("ns_frac must lie in (0, 1)")
        if self.method in ("sus", "mlsus"):
            if self.kernel != "acs":
                raise ValueError("subset methods use the acs kernel")
            if abs(round(self.p0 * self.n) - self.p0 * self.n) > 1e-9 or not (0 < self.p0 < 1):
                raise ValueError("p0*N must be an integer with p0 in (0, 1)")
            if abs(round(1.0 / self.p0) - 1.0 / self.p0) > 1e-9:
                raise ValueError("1/p0 must be an integer")
        if self.n_b < 0:
            raise ValueError("burn-in must be nonnegative")


@dataclass
class RunRecord:
    """One repetition: estimate, cost accounting and a trace summary.

    For tempering methods sigma_schedule/beta_schedule hold the adaptive
    bandwidths and bridging exponents; for subset methods sigma_schedule
    holds the intermediate thresholds.
    """

    run_id: str
    config: ExperimentConfig
    estimate: float = np.nan
    cost: float = np.nan
    n_temper: int = 0
    n_bridge: int = 0
    eval_counts: dict[int, int] = field(default_factory=dict)
    sigma_schedule: list[float] = field(default_factory=list)
    beta_schedule: list[float] = field(default_factory=list)
    wall_ms: int = 0
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def cost_units(counts: dict[int, int], levels: int, cost_dim: int) -> float:
    """Level-weighted evaluation count: sum of count_l * 2^(-d (L - l))."""
    total = 0.0
    for level, count in counts.items():
        if not (1 <= level <= levels):
            raise ValueError(f"evaluation count at unknown level {level}")
        total += count * 2.0 ** (-cost_dim * (levels - level))
    return total


def rel_rmse(estimates, reference: float) -> float:
    """Root mean squared error relative to the reference probability."""
    if not (reference > 0):
        raise ValueError("reference probability must be positive")
    est = np.asarray(estimates, dtype=float)
    if est.size < 1:
        raise ValueError("need at least one estimate")
    return float(np.sqrt(np.mean((est - reference) ** 2)) / reference)


def build_model(config: ExperimentConfig) -> LimitStateModel:
    if config.model == "linear":
        return LinearLsfModel(config.beta, 150)
    if config.model == "diffusion1d":
        if config.level_dims == "fixed":
            return Diffusion1dModel(max_level=config.levels,
                                    level_dims=(150,) * config.levels)
        from .fem1d import DEFAULT_LEVEL_DIMS

        return Diffusion1dModel(max_level=config.levels,
                                level_dims=DEFAULT_LEVEL_DIMS[: config.levels])
    if config.model == "flowcell2d":
        if config.level_dims == "fixed":
            return FlowCellModel(tau0=config.tau0, max_level=config.levels,
                                 level_dims=(150,) * config.levels)
        from .fem2d import DEFAULT_LEVEL_DIMS_2D

        return FlowCellModel(tau0=config.tau0, max_level=config.levels,
                             level_dims=DEFAULT_LEVEL_DIMS_2D[: config.levels])
    raise ValueError(f"unknown model '{config.model}'")


def _fill_schedules(record: RunRecord, trace) -> None:
    record.sigma_schedule = [s.sigma for s in trace.steps if s.kind == "temper"]
    record.beta_schedule = [s.beta for s in trace.steps if s.kind == "bridge"]


def run_single(config: ExperimentConfig, rep: int) -> RunRecord:
    """One repetition with its derived seed; errors become error records."""
    rng = np.random.default_rng([config.seed, rep])
    model = build_model(config)
    record = RunRecord(run_id=str(rep), config=config)
    start = time.perf_counter()
    try:
        if config.method == "mc":
            record.estimate = mc_estimate(model, config.levels, config.n, rng)
        elif config.method == "sis":
            kernel = make_kernel(config.kernel)
            est, trace = sis_estimate(model, config.levels, config.n,
                                      config.delta_target, kernel, config.c, rng,
                                      burn_in=config.n_b)
            record.estimate = est
            record.n_temper = trace.n_temper
            record.n_bridge = trace.n_bridge
            _fill_schedules(record, trace)
        elif config.method == "mlsis":
            kernel = make_kernel(config.kernel)
            est, trace = mlsis_estimate(model, config.levels, config.n,
                                        config.delta_target, kernel, config.c, rng,
                                        subset_fraction=config.ns_frac,
                                        burn_in=config.n_b)
            record.estimate = est
            record.n_temper = trace.n_temper
            record.n_bridge = trace.n_bridge
            _fill_schedules(record, trace)
        elif config.method == "sus":
            kernel = make_kernel(config.kernel)
            est, trace = sus_estimate(model, config.levels, config.n, config.p0,
                                      kernel, config.n_b, rng)
            record.estimate = est
            record.n_temper = trace.n_levels
            record.sigma_schedule = [r.threshold for r in trace.records]
        elif config.method == "mlsus":
            kernel = make_kernel(config.kernel)
            est, trace = mlsus_estimate(model, config.levels, config.n, config.p0,
                                        kernel, config.n_b, rng)
            record.estimate = est
            record.n_temper = trace.n_levels
            record.n_bridge = trace.n_level_updates
            record.sigma_schedule = [r.threshold for r in trace.records]
        else:
            raise ValueError(f"unknown method '{config.method}'")
    except RareEventError as exc:
        record.status = f"error:{type(exc).__name__}"
    record.eval_counts = model.counter.counts()
    record.cost = cost_units(record.eval_counts, config.levels, model.cost_dim)
    record.wall_ms = 0 if config.stable_timing else int(
        round(1000.0 * (time.perf_counter() - start))
    )
    return record


@dataclass
class ExperimentSummary:
    n_ok: int
    n_excluded: int
    mean: float
    std: float
    mean_cost: float
    relrmse: float | None

    def as_status(self) -> str:
        rel = "" if self.relrmse is None else f",relrmse={self.relrmse:.6g}"
        return (f"summary(n_ok={self.n_ok},excluded={self.n_excluded},"
                f"std={self.std:.6g}{rel})")


def summarize(records: list[RunRecord], reference: float | None) -> ExperimentSummary:
    ok = [r for r in records if r.ok]
    estimates = np.array([r.estimate for r in ok])
    costs = np.array([r.cost for r in ok])
    if estimates.size == 0:
        return ExperimentSummary(0, len(records), np.nan, np.nan, np.nan, None)
    rr = rel_rmse(estimates, reference) if reference else None
    return ExperimentSummary(
        n_ok=len(ok),
        n_excluded=len(records) - len(ok),
        mean=float(estimates.mean()),
        std=float(estimates.std()),
        mean_cost=float(costs.mean()),
        relrmse=rr,
    )


def run_experiment(config: ExperimentConfig) -> list[RunRecord]:
    """All repetitions of one configuration, in repetition order."""
    config.validate()
    reps = range(config.reps)
    if config.workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=config.workers) as pool:
            records = list(pool.map(run_single, [config] * config.reps, reps))
    else:
        records = [run_single(config, rep) for rep in reps]
    return records


def mc_reference(config: ExperimentConfig) -> RunRecord:
    """Crude Monte Carlo run at the configured level, for reference values."""
    mc_config = replace(config, method="mc")
    mc_config.validate()
    return run_single(mc_config, 0)


def csv_header(levels: int) -> str:
    evals = ",".join(f"evals_l{l}" for l in range(1, levels + 1))
    return ("run_id,method,model,N,delta_target,kernel,c,p0,L,level_dims,"
            f"estimate,cost_units,n_temper,n_bridge,{evals},wall_ms,status")


def _fmt(x: float) -> str:
    return format(x, ".12g")


def records_to_csv(records: list[RunRecord], summary: ExperimentSummary | None = None) -> str:
    """Render records (plus an optional summary row) with the stable schema."""
    if not records:
        raise ValueError("no records to write")
    config = records[0].config
    lines = [csv_header(config.levels)]

    def row(run_id, estimate, cost, n_temper, n_bridge, counts, wall_ms, status):
        evals = ",".join(str(counts.get(l, 0)) for l in range(1, config.levels + 1))
        return (f"{run_id},{config.method},{config.model},{config.n},"
                f"{_fmt(config.delta_target)},{config.kernel},{_fmt(config.c)},"
                f"{_fmt(config.p0)},{config.levels},{config.level_dims},"
                f"{_fmt(estimate)},{_fmt(cost)},{n_temper},{n_bridge},{evals},"
                f"{wall_ms},{status}")

    for r in records:
        lines.append(row(r.run_id, r.estimate, r.cost, r.n_temper, r.n_bridge,
                         r.eval_counts, r.wall_ms, r.status))
    if summary is not None:
        lines.append(row("summary", summary.mean, summary.mean_cost, 0, 0, {},
                         0, summary.as_status()))
    return "\n".join(lines) + "\n"


def write_csv(path: str, records: list[RunRecord],
              summary: ExperimentSummary | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(records_to_csv(records, summary))
