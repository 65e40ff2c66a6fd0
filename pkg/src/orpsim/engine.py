"""Per-service VM selection driven by learning automata.

For every service of a request an automaton is built over the feasible,
still-available instances of the provider pool. Each iteration samples an
instance, scores it by compatibility per hourly cost (min-max normalized over
the candidates), and rewards the choice when the score clears the threshold or
penalizes it otherwise, until the automaton converges.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from orpsim.catalog import Pool, VmInstance, VmType, builtin_catalog, feasible
from orpsim.learning_automata import (
    ConvergencePolicy,
    ConvergenceState,
    ConvergenceStatus,
    LearningParams,
    check_convergence,
    new_automaton,
)
from orpsim.matching import has_complete_matching, max_matching
from orpsim.workload import AppClass, Request, ServiceSpec

TRACE_HEADER = ["request_id", "service_index", "iteration", "action_instance_id", "rho", "max_prob"]


class EngineError(RuntimeError):
    """Internal contract violation (a bug, not a user error)."""


class NoFeasibleVm(ValueError):
    pass


@dataclass(frozen=True)
class Weights:
    v_size: float = 0.0
    v_memory: float = 0.25
    v_core: float = 0.25
    v_storage: float = 0.25
    v_throughput: float = 0.25

    def __post_init__(self):
        if min(self.as_tuple()) < 0:
            raise ValueError(f"weights must be non-negative: {self}")

    def as_tuple(self) -> Tuple[float, float, float, float, float]:
        return (self.v_size, self.v_memory, self.v_core, self.v_storage, self.v_throughput)


WEIGHT_PRESETS: Dict[AppClass, Weights] = {
    AppClass.NORMAL: Weights(0.0, 0.25, 0.25, 0.25, 0.25),
    AppClass.DATA_INTENSIVE: Weights(0.0, 0.30, 0.10, 0.35, 0.25),
    AppClass.PROCESS_INTENSIVE: Weights(0.0, 0.15, 0.55, 0.15, 0.15),
    AppClass.UNCLASSIFIED: Weights(0.0, 0.25, 0.25, 0.25, 0.25),
}


def adapted(vm_value: float, req_value: float) -> float:
    """Compatibility of a capacity to a demand: ``demand / capacity`` in (0, 1]."""
    if req_value <= 0:
        raise EngineError(f"demand must be positive, got {req_value}")
    if vm_value < req_value:
        raise EngineError(f"capacity {vm_value} below demand {req_value}; feasibility gate skipped?")
    return req_value / vm_value


def _vm_type(inst: Union[VmInstance, VmType]) -> VmType:
    return inst.vm_type if isinstance(inst, VmInstance) else inst


def total_compat(inst: Union[VmInstance, VmType], svc: ServiceSpec, w: Weights) -> float:
    """Weighted compatibility over the attributes present on both sides."""
    vm = _vm_type(inst)
    if not feasible(vm, svc):
        raise EngineError(f"{vm.name} cannot host {svc}")
    terms = [
        (w.v_memory, adapted(vm.memory_gb, svc.memory_gb)),
        (w.v_core, adapted(vm.vcpu, svc.vcpu)),
        (w.v_storage, adapted(vm.storage_gb, svc.storage_gb)),
    ]
    if svc.size_rank is not None:
        terms.append((w.v_size, adapted(vm.size_rank, svc.size_rank)))
    if vm.throughput_kbps is not None and svc.throughput_kbps is not None:
        terms.append((w.v_throughput, adapted(vm.throughput_kbps, svc.throughput_kbps)))
    weight = sum(wt for wt, _ in terms)
    if weight <= 0:
        raise ValueError(f"weights {w} put no mass on the attributes present for {svc}")
    return sum(wt * value for wt, value in terms) / weight


def raw_score(inst: Union[VmInstance, VmType], svc: ServiceSpec, w: Weights) -> float:
    return total_compat(inst, svc, w) / _vm_type(inst).hour_cost_usd


@dataclass(frozen=True)
class NormalizationBounds:
    a_min: float
    b_max: float

    def __post_init__(self):
        if self.b_max < self.a_min:
            raise ValueError(f"b_max {self.b_max} < a_min {self.a_min}")


def normalization_bounds(pool, svc: ServiceSpec, w: Weights) -> NormalizationBounds:
    """Min and max raw score over the feasible available instances of ``pool``.

    ``pool`` may be a :class:`Pool` or an explicit sequence of candidate instances.
    """
    instances = pool.available() if isinstance(pool, Pool) else pool
    scores = [raw_score(inst, svc, w) for inst in instances if feasible(inst, svc)]
    if not scores:
        raise NoFeasibleVm(f"no feasible instance for {svc}")
    return NormalizationBounds(min(scores), max(scores))


def normalize(p: float, bounds: NormalizationBounds) -> float:
    a, b = bounds.a_min, bounds.b_max
    if not a <= p <= b:
        raise ValueError(f"{p} outside normalization range [{a}, {b}]")
    if b == a:
        return 1.0
    return (p - a) / (b - a)


@dataclass(frozen=True)
class PerfScore:
    rho: float
    raw: float


def perf_factor(inst, svc: ServiceSpec, w: Weights, bounds: NormalizationBounds) -> PerfScore:
    raw = raw_score(inst, svc, w)
    return PerfScore(normalize(raw, bounds), raw)


def request_perf(rhos: Sequence[float]) -> float:
    if len(rhos) == 0:
        raise ValueError("request_perf needs at least one score")
    return float(sum(rhos))


# -- request-level feasibility ----------------------------------------------

def _adjacency(instances: Sequence[VmInstance], services: Sequence[ServiceSpec]) -> List[List[int]]:
    return [[inst.id for inst in instances if feasible(inst, svc)] for svc in services]


def tackle(pool: Pool, req: Request) -> bool:
    """Can the available instances host every service on distinct VMs?"""
    return has_complete_matching(_adjacency(pool.available(), req.services))


def safe_candidates(available: Sequence[VmInstance], services: Sequence[ServiceSpec], k: int) -> List[VmInstance]:
    """Feasible instances for service ``k`` that keep services ``k+1..`` matchable.

    ``available`` must already exclude instances reserved by earlier services.
    """
    feas = [inst for inst in available if feasible(inst, services[k])]
    rest = services[k + 1:]
    if not rest:
        return feas
    adjacency = _adjacency(available, rest)
    matching = max_matching(adjacency)
    if len(matching) < len(rest):
        return []
    used = set(matching.values())
    out = []
    for inst in feas:
        if inst.id not in used:
            out.append(inst)
        elif has_complete_matching([[v for v in adj if v != inst.id] for adj in adjacency]):
            out.append(inst)
    return out


# -- outcomes ---------------------------------------------------------------

class RejectReason(str, enum.Enum):
    NO_FEASIBLE_ASSIGNMENT = "NoFeasibleAssignment"
    ELASTIC_DISABLED = "ElasticDisabled"


@dataclass(frozen=True)
class Negotiation:
    bought: Tuple[str, ...]
    delay_s: float


@dataclass(frozen=True)
class Allocation:
    request_id: str
    pairs: Tuple[Tuple[int, int], ...]
    rhos: Tuple[float, ...]
    request_rho: float
    iterations_per_service: Tuple[int, ...]
    negotiation: Optional[Negotiation] = None
    trace: Tuple[tuple, ...] = field(default=(), compare=False, repr=False)

    @property
    def instance_ids(self) -> List[int]:
        return [iid for _, iid in self.pairs]


@dataclass(frozen=True)
class Rejection:
    request_id: str
    reason: RejectReason


Outcome = Union[Allocation, Rejection]


@dataclass(frozen=True)
class ProvisionParams:
    learning: LearningParams = LearningParams()
    policy: ConvergencePolicy = ConvergencePolicy()
    # None selects the preset for the request's application class
    weights: Optional[Weights] = None
    presets: Mapping[AppClass, Weights] = field(default_factory=lambda: dict(WEIGHT_PRESETS))
    elastic: bool = False
    catalog: Tuple[VmType, ...] = field(default_factory=lambda: tuple(builtin_catalog()))
    delay_per_vm_s: float = 60.0
    trace: bool = False

    def weights_for(self, req: Request) -> Weights:
        if self.weights is not None:
            return self.weights
        return self.presets.get(req.app_class, self.presets.get(AppClass.NORMAL, Weights()))


@dataclass
class ServiceOutcome:
    instance: VmInstance
    rho: float
    iterations: int
    status: Optional[ConvergenceStatus] = None
    trace: List[Tuple[int, int, float, float]] = field(default_factory=list)


def provision_service(
    pool,
    svc: ServiceSpec,
    params: ProvisionParams,
    rng: np.random.Generator,
    weights: Optional[Weights] = None,
) -> ServiceOutcome:
    """Run one automaton episode over the candidates for ``svc``.

    ``pool`` is a :class:`Pool` (its feasible available instances become the
    actions) or an explicit candidate list.
    """
    w = weights or params.weights or Weights()
    instances = pool.available() if isinstance(pool, Pool) else list(pool)
    candidates = [inst for inst in instances if feasible(inst, svc)]
    if not candidates:
        raise NoFeasibleVm(f"no feasible instance for {svc}")
    raw = np.array([raw_score(inst, svc, w) for inst in candidates])
    bounds = NormalizationBounds(float(raw.min()), float(raw.max()))
    rhos = [normalize(float(p), bounds) for p in raw]

    aut = new_automaton(len(candidates))
    status = check_convergence(aut, [], params.policy)
    if status.done:
        return ServiceOutcome(candidates[status.action], rhos[status.action], 0, status)

    lp = params.learning
    history: List[float] = []
    trace = []
    while not status.done:
        i = aut.select(rng)
        rho = rhos[i]
        if rho >= lp.threshold:
            aut.reward(i, lp.lambda_reward)
        else:
            aut.penalize(i, lp.lambda_penalty)
        history.append(rho)
        if params.trace:
            trace.append((aut.iterations, candidates[i].id, rho, float(aut.probs.max())))
        status = check_convergence(aut, history, params.policy)
    return ServiceOutcome(candidates[status.action], rhos[status.action], aut.iterations, status, trace)


# A chooser picks one instance among candidates for service ``k``.
Chooser = Callable[[List[VmInstance], ServiceSpec, Weights, np.random.Generator], ServiceOutcome]


def _la_chooser(params: ProvisionParams) -> Chooser:
    def choose(candidates, svc, w, rng):
        return provision_service(candidates, svc, params, rng, weights=w)
    return choose


def plan_purchases(pool: Pool, req: Request, catalog: Sequence[VmType]) -> Optional[List[VmType]]:
    """Cheapest feasible catalog type for every service left unmatched.

    Returns ``None`` if some unmatched service fits no catalog type.
    """
    matching = max_matching(_adjacency(pool.available(), req.services))
    buys = []
    for k, svc in enumerate(req.services):
        if k in matching:
            continue
        options = [t for t in catalog if feasible(t, svc)]
        if not options:
            return None
        buys.append(min(options, key=lambda t: t.hour_cost_usd))
    return buys


def negotiate(pool: Pool, req: Request, catalog: Sequence[VmType], delay_per_vm_s: float = 60.0):
    """Buy the missing instances from the IaaS side. Mutates ``pool``.

    Returns the :class:`Negotiation` record, or a :class:`RejectReason` when
    some service cannot be hosted by any catalog type.
    """
    buys = plan_purchases(pool, req, catalog)
    if buys is None:
        return RejectReason.NO_FEASIBLE_ASSIGNMENT
    for vm_type in buys:
        pool.add(vm_type)
    return Negotiation(tuple(t.name for t in buys), delay_per_vm_s * len(buys))


def allocate(pool: Pool, req: Request, params: ProvisionParams, rng: np.random.Generator,
             chooser: Chooser) -> Outcome:
    """Shared pipeline: feasibility check, elastic purchase, sequential reservation."""
    negotiation = None
    if not tackle(pool, req):
        catalog = params.catalog
        if any(not any(feasible(t, svc) for t in catalog) for svc in req.services):
            return Rejection(req.request_id, RejectReason.NO_FEASIBLE_ASSIGNMENT)
        if not params.elastic:
            return Rejection(req.request_id, RejectReason.ELASTIC_DISABLED)
        result = negotiate(pool, req, catalog, params.delay_per_vm_s)
        if isinstance(result, RejectReason):
            return Rejection(req.request_id, result)
        negotiation = result

    w = params.weights_for(req)
    streams = rng.spawn(req.s)
    available = pool.available()
    chosen: List[ServiceOutcome] = []
    for k, svc in enumerate(req.services):
        candidates = safe_candidates(available, req.services, k)
        if not candidates:
            raise EngineError(f"request {req.request_id}: matching existed but service {k} has no candidate")
        outcome = chooser(candidates, svc, w, streams[k])
        chosen.append(outcome)
        available = [inst for inst in available if inst.id != outcome.instance.id]

    for k, outcome in enumerate(chosen):
        outcome.instance.allocated_to = (req.request_id, k)
    rhos = tuple(o.rho for o in chosen)
    trace = tuple(
        (req.request_id, k, it, iid, rho, pmax)
        for k, o in enumerate(chosen)
        for it, iid, rho, pmax in o.trace
    )
    return Allocation(
        request_id=req.request_id,
        pairs=tuple((k, o.instance.id) for k, o in enumerate(chosen)),
        rhos=rhos,
        request_rho=request_perf(rhos),
        iterations_per_service=tuple(o.iterations for o in chosen),
        negotiation=negotiation,
        trace=trace,
    )


def provision(pool: Pool, req: Request, params: ProvisionParams, rng: np.random.Generator) -> Outcome:
    """Allocate every service of ``req`` using learning automata."""
    return allocate(pool, req, params, rng, _la_chooser(params))
