"""Experiment harness: run workloads against strategies and aggregate metrics."""

from __future__ import annotations

import enum
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from orpsim.catalog import Pool, PoolSpec, VmInstance, VmType, builtin_catalog, spawn_pool
from orpsim.engine import (
    WEIGHT_PRESETS,
    Allocation,
    Outcome,
    ProvisionParams,
    Rejection,
    ServiceOutcome,
    Weights,
    allocate,
    normalize,
    NormalizationBounds,
    provision,
    raw_score,
)
from orpsim.learning_automata import ConvergencePolicy, LearningParams
from orpsim.workload import AppClass, Request, Workload

log = logging.getLogger(__name__)

METRICS_HEADER = [
    "strategy",
    "seed",
    "requests_total",
    "requests_rejected",
    "throughput",
    "mean_utilization",
    "total_cost_usd",
    "mean_iterations",
    "total_negotiation_delay_s",
]
CUMULATIVE_HEADER = ["strategy", "seed", "request_index", "cumulative_cost_usd", "processed_count"]
SWEEP_HEADER = ["lambda_reward", "lambda_penalty", "mean_iterations", "stddev_iterations"]
COMPARE_HEADER = [
    "strategy",
    "n_seeds",
    "throughput_mean",
    "throughput_std",
    "rejected_mean",
    "rejected_std",
    "utilization_mean",
    "utilization_std",
    "cost_mean",
    "cost_std",
]
ALLOCATIONS_HEADER = ["request_id", "service_index", "instance_id", "vm_type", "rho"]


class Strategy(str, enum.Enum):
    ORP = "orp"
    RANDOM = "random"
    GREEDY = "greedy"


@dataclass(frozen=True)
class SimConfig:
    catalog: Tuple[VmType, ...] = field(default_factory=lambda: tuple(builtin_catalog()))
    # explicit pool contents; when None the pool is drawn with ``pool_spec``
    pool_types: Optional[Tuple[VmType, ...]] = None
    pool_spec: PoolSpec = PoolSpec()
    elastic: bool = False
    learning: LearningParams = LearningParams()
    policy: ConvergencePolicy = ConvergencePolicy()
    weights: Optional[Weights] = None
    presets: Mapping[AppClass, Weights] = field(default_factory=lambda: dict(WEIGHT_PRESETS))
    billing_hours: float = 1.0
    delay_per_vm_s: float = 60.0
    release_after_request: bool = False
    trace: bool = False

    def __post_init__(self):
        if self.billing_hours <= 0:
            raise ValueError(f"billing_hours must be positive, got {self.billing_hours}")
        if self.delay_per_vm_s < 0:
            raise ValueError("delay_per_vm_s must be non-negative")
        if not self.catalog:
            raise ValueError("catalog must not be empty")

    def params(self) -> ProvisionParams:
        return ProvisionParams(
            learning=self.learning,
            policy=self.policy,
            weights=self.weights,
            presets=self.presets,
            elastic=self.elastic,
            catalog=tuple(self.catalog),
            delay_per_vm_s=self.delay_per_vm_s,
            trace=self.trace,
        )

    def build_pool(self, rng: np.random.Generator) -> Pool:
        if self.pool_types is not None:
            return Pool.from_types(self.pool_types)
        return spawn_pool(self.catalog, self.pool_spec, rng)


def replicate_types(types: Sequence[VmType], copies: int) -> Tuple[VmType, ...]:
    """``copies`` instances of every type, grouped by type."""
    return tuple(t for t in types for _ in range(copies))


# -- baselines --------------------------------------------------------------

def _scored(inst: VmInstance, candidates, svc, w) -> ServiceOutcome:
    raws = [raw_score(c, svc, w) for c in candidates]
    rho = normalize(raw_score(inst, svc, w), NormalizationBounds(min(raws), max(raws)))
    return ServiceOutcome(inst, rho, 0)


def _random_choice(candidates, svc, w, rng):
    return _scored(candidates[int(rng.integers(len(candidates)))], candidates, svc, w)


def _greedy_choice(candidates, svc, w, rng):
    # min() keeps the first of equal prices, i.e. the lowest id
    inst = min(candidates, key=lambda c: c.vm_type.hour_cost_usd)
    return _scored(inst, candidates, svc, w)


def baseline_random(pool: Pool, req: Request, params: ProvisionParams, rng: np.random.Generator) -> Outcome:
    """Uniform choice among feasible instances, no learning."""
    return allocate(pool, req, params, rng, _random_choice)


def baseline_greedy(pool: Pool, req: Request, params: ProvisionParams,
                    rng: Optional[np.random.Generator] = None) -> Outcome:
    """Cheapest feasible instance per service."""
    return allocate(pool, req, params, rng or np.random.default_rng(0), _greedy_choice)


_DISPATCH = {
    Strategy.ORP: provision,
    Strategy.RANDOM: baseline_random,
    Strategy.GREEDY: baseline_greedy,
}


# -- metrics ----------------------------------------------------------------

def utilization(alloc: Allocation, pool: Pool, req: Request) -> float:
    """Mean demand/capacity over cpu, memory and disk of the allocated VMs."""
    per_vm = []
    for k, iid in alloc.pairs:
        vm = pool.get(iid).vm_type
        svc = req.services[k]
        per_vm.append((svc.vcpu / vm.vcpu + svc.memory_gb / vm.memory_gb + svc.storage_gb / vm.storage_gb) / 3.0)
    return float(np.mean(per_vm))


def allocation_cost(alloc: Allocation, pool: Pool, billing_hours: float = 1.0) -> float:
    return sum(pool.get(iid).vm_type.hour_cost_usd for iid in alloc.instance_ids) * billing_hours


@dataclass(frozen=True)
class Metrics:
    requests_total: int
    requests_rejected: int
    throughput: float
    mean_utilization: float
    total_cost_usd: float
    mean_iterations: float
    total_negotiation_delay_s: float

    @property
    def requests_processed(self) -> int:
        return self.requests_total - self.requests_rejected


@dataclass
class RunResult:
    strategy: Strategy
    seed: int
    outcomes: List[Outcome]
    metrics: Metrics
    # (request_index, cumulative_cost_usd, processed_count)
    cumulative: List[Tuple[int, float, int]]
    request_costs: List[float]
    pool: Pool = field(repr=False)

    def allocations(self) -> List[Allocation]:
        return [o for o in self.outcomes if isinstance(o, Allocation)]

    def metrics_row(self) -> list:
        m = self.metrics
        return [self.strategy.value, self.seed, m.requests_total, m.requests_rejected, m.throughput,
                m.mean_utilization, m.total_cost_usd, m.mean_iterations, m.total_negotiation_delay_s]

    def cumulative_rows(self) -> List[list]:
        return [[self.strategy.value, self.seed, n, c, p] for n, c, p in self.cumulative]

    def allocation_rows(self) -> List[list]:
        rows = []
        for alloc in self.allocations():
            for (k, iid), rho in zip(alloc.pairs, alloc.rhos):
                rows.append([alloc.request_id, k, iid, self.pool.get(iid).vm_type.name, rho])
        return rows

    def trace_rows(self) -> List[tuple]:
        return [row for alloc in self.allocations() for row in alloc.trace]

    def __eq__(self, other):
        if not isinstance(other, RunResult):
            return NotImplemented
        return (self.strategy, self.seed, self.outcomes, self.metrics, self.cumulative) == (
            other.strategy, other.seed, other.outcomes, other.metrics, other.cumulative)


def total_cost(result: RunResult) -> float:
    return float(sum(result.request_costs))


def request_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, index)))


def pool_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))


def run(cfg: SimConfig, workload: Workload, strategy, seed: int) -> RunResult:
    """Process ``workload`` in order against one pool. Deterministic in ``seed``."""
    strategy = Strategy(strategy)
    if len(workload) == 0:
        raise ValueError("workload is empty")
    params = cfg.params()
    pool = cfg.build_pool(pool_rng(seed))
    allocate_fn = _DISPATCH[strategy]

    outcomes, costs, utils, iterations = [], [], [], []
    cumulative = []
    spent, processed, delay = 0.0, 0, 0.0
    for n, req in enumerate(workload.requests):
        outcome = allocate_fn(pool, req, params, request_rng(seed, n))
        outcomes.append(outcome)
        cost = 0.0
        if isinstance(outcome, Allocation):
            processed += 1
            cost = allocation_cost(outcome, pool, cfg.billing_hours)
            utils.append(utilization(outcome, pool, req))
            iterations.extend(outcome.iterations_per_service)
            if outcome.negotiation is not None:
                delay += outcome.negotiation.delay_s
            if cfg.release_after_request:
                for iid in outcome.instance_ids:
                    pool.get(iid).allocated_to = None
        costs.append(cost)
        spent += cost
        cumulative.append((n, spent, processed))

    total = len(workload)
    metrics = Metrics(
        requests_total=total,
        requests_rejected=total - processed,
        throughput=processed / total,
        mean_utilization=float(np.mean(utils)) if utils else 0.0,
        total_cost_usd=float(sum(costs)),
        mean_iterations=float(np.mean(iterations)) if iterations else 0.0,
        total_negotiation_delay_s=delay,
    )
    return RunResult(strategy, seed, outcomes, metrics, cumulative, costs, pool)


# -- parallel helpers -------------------------------------------------------

def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("ORP_SIM_THREADS", "1")))
    except ValueError:
        log.warning("ignoring malformed ORP_SIM_THREADS=%r", os.environ.get("ORP_SIM_THREADS"))
        return 1


def _run_job(job):
    cfg, workload, strategy, seed = job
    return run(cfg, workload, strategy, seed)


def run_many(jobs: Sequence[tuple], workers: Optional[int] = None) -> List[RunResult]:
    """Run ``(cfg, workload, strategy, seed)`` jobs, preserving order."""
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(jobs) <= 1:
        return [_run_job(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, jobs))


# -- comparisons and sweeps -------------------------------------------------

@dataclass(frozen=True)
class ComparisonRow:
    strategy: Strategy
    n_seeds: int
    throughput_mean: float
    throughput_std: float
    rejected_mean: float
    rejected_std: float
    utilization_mean: float
    utilization_std: float
    cost_mean: float
    cost_std: float

    def as_row(self) -> list:
        return [self.strategy.value, self.n_seeds, self.throughput_mean, self.throughput_std,
                self.rejected_mean, self.rejected_std, self.utilization_mean, self.utilization_std,
                self.cost_mean, self.cost_std]


def _mean_std(values) -> Tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std())


def compare(cfg: SimConfig, workload: Workload, strategies: Sequence, seeds: Sequence[int],
            workers: Optional[int] = None):
    """Run every strategy on every seed; returns ``(rows, results)``.

    ``results[k]`` holds the per-seed runs of ``strategies[k]``.
    """
    strategies = [Strategy(s) for s in strategies]
    if len(strategies) < 2:
        raise ValueError("compare needs at least two strategies")
    if not seeds:
        raise ValueError("compare needs at least one seed")
    jobs = [(cfg, workload, s, seed) for s in strategies for seed in seeds]
    flat = run_many(jobs, workers)
    results = [flat[k * len(seeds):(k + 1) * len(seeds)] for k in range(len(strategies))]
    rows = []
    for strategy, runs in zip(strategies, results):
        ms = [r.metrics for r in runs]
        rows.append(ComparisonRow(
            strategy, len(runs),
            *_mean_std([m.throughput for m in ms]),
            *_mean_std([m.requests_rejected for m in ms]),
            *_mean_std([m.mean_utilization for m in ms]),
            *_mean_std([m.total_cost_usd for m in ms]),
        ))
    return rows, results


def frange(lo: float, hi: float, step: float) -> List[float]:
    """Inclusive float range, rounded to kill accumulation error."""
    if step <= 0:
        if lo == hi:
            return [lo]
        raise ValueError(f"step must be positive, got {step}")
    if hi < lo:
        raise ValueError(f"empty range {lo}:{hi}")
    n = int(round((hi - lo) / step))
    if not np.isclose(lo + n * step, hi, atol=1e-9):
        raise ValueError(f"{lo}:{hi}:{step} does not land on the upper bound")
    return [round(lo + k * step, 10) for k in range(n + 1)]


DEFAULT_REWARD_GRID = frange(0.7, 0.9, 0.05)
DEFAULT_PENALTY_GRID = frange(0.0, 0.1, 0.025)


@dataclass(frozen=True)
class SweepRow:
    lambda_reward: float
    lambda_penalty: float
    mean_iterations: float
    stddev_iterations: float

    def as_row(self) -> list:
        return [self.lambda_reward, self.lambda_penalty, self.mean_iterations, self.stddev_iterations]


def _sweep_cell(job):
    cfg, workload, seeds = job
    its = []
    for seed in seeds:
        result = run(cfg, workload, Strategy.ORP, seed)
        for alloc in result.allocations():
            its.extend(alloc.iterations_per_service)
    return its


def sweep(cfg: SimConfig, workload: Workload, rewards: Sequence[float], penalties: Sequence[float],
          seeds: Sequence[int], workers: Optional[int] = None) -> List[SweepRow]:
    """Mean iterations-to-convergence per (lambda_reward, lambda_penalty) cell."""
    if not rewards or not penalties:
        raise ValueError("sweep grid is empty")
    if not seeds:
        raise ValueError("sweep needs at least one seed")
    cells = []
    for a in rewards:
        for b in penalties:
            # validates the parameter domains
            learning = replace(cfg.learning, lambda_reward=a, lambda_penalty=b)
            cells.append((a, b, replace(cfg, learning=learning, trace=False)))
    jobs = [(c, workload, list(seeds)) for _, _, c in cells]
    workers = worker_count() if workers is None else workers
    if workers <= 1:
        per_cell = [_sweep_cell(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            per_cell = list(ex.map(_sweep_cell, jobs))
    rows = []
    for (a, b, _), its in zip(cells, per_cell):
        mean, std = _mean_std(its) if its else (0.0, 0.0)
        rows.append(SweepRow(a, b, mean, std))
    return rows
