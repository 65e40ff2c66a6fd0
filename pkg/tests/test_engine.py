import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from orpsim.catalog import Pool, VmType, builtin_catalog, feasible
from orpsim.engine import (
    Allocation,
    EngineError,
    Negotiation,
    NoFeasibleVm,
    NormalizationBounds,
    ProvisionParams,
    RejectReason,
    Rejection,
    Weights,
    adapted,
    negotiate,
    normalization_bounds,
    normalize,
    perf_factor,
    provision,
    provision_service,
    raw_score,
    request_perf,
    safe_candidates,
    tackle,
    total_compat,
)
from orpsim.matching import max_matching
from orpsim.workload import Request, ServiceSpec, template_request

NORMAL = Weights()
SVC_2_4_4 = ServiceSpec(2, 4.0, 1, 4.0)

# brute-force raw scores (Total / hour cost) of svc (2,4,1x4) over the built-in catalog, computed
# with an independent closed-form script: mean(demand/capacity) / price
ORACLE_BOUNDS_2_4_4 = (0.26037750037599644, 19.23076923076923)


def by_name(name):
    return next(t for t in builtin_catalog() if t.name == name)


def test_adapted():
    assert adapted(8, 8) == 1.0
    assert adapted(8, 4) == 0.5
    assert adapted(61, 15) == pytest.approx(0.2459, abs=1e-4)
    with pytest.raises(EngineError):
        adapted(2, 4)


def test_total_exact_match_is_one():
    for w in (NORMAL, Weights(0, 0.1, 0.7, 0.2, 0), Weights(1, 1, 1, 1, 1)):
        assert total_compat(by_name("m4.large"), ServiceSpec(2, 8.0, 1, 32.0), w) == pytest.approx(1.0)


def test_total_hand_value():
    w = Weights(0, 1 / 3, 1 / 3, 1 / 3, 0)
    assert total_compat(by_name("t2.medium"), ServiceSpec(1, 2.0, 1, 4.0), w) == pytest.approx(0.6667, abs=1e-4)


def test_throughput_absent_drops_term():
    svc = ServiceSpec(1, 2.0, 1, 4.0)
    vm = by_name("t2.medium")
    assert total_compat(vm, svc, Weights(0, 0.25, 0.25, 0.25, 0.25)) == pytest.approx(
        total_compat(vm, svc, Weights(0, 1 / 3, 1 / 3, 1 / 3, 0)))


def test_throughput_present_both_sides():
    vm = VmType("n", 2, 4.0, 1, 4.0, 0.1, throughput_kbps=200.0)
    svc = ServiceSpec(2, 4.0, 1, 4.0, throughput_kbps=50.0)
    assert total_compat(vm, svc, NORMAL) == pytest.approx((1 + 1 + 1 + 0.25) / 4)


def test_size_term_participates_when_service_has_size():
    svc = ServiceSpec(2, 4.0, 1, 4.0, size_rank=1)
    vm = by_name("t2.medium")  # size rank 2
    assert total_compat(vm, svc, Weights(0.5, 0.5, 0, 0, 0)) == pytest.approx(0.5 * 0.5 + 0.5)


def test_infeasible_total_is_internal_error():
    with pytest.raises(EngineError):
        total_compat(by_name("t2.small"), SVC_2_4_4, NORMAL)


def test_zero_weight_mass():
    with pytest.raises(ValueError):
        total_compat(by_name("t2.medium"), SVC_2_4_4, Weights(0, 0, 0, 0, 1))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=5, max_size=5).filter(lambda v: sum(v[1:4]) > 1e-3),
       st.sampled_from(builtin_catalog()))
def test_zero_weight_attribute_invariance(ws, vm):
    svc = ServiceSpec(1, 1.0, 1, 2.0)
    base = Weights(0, ws[1], ws[2], ws[3], ws[4])
    with_size = ServiceSpec(1, 1.0, 1, 2.0, size_rank=1)
    assert total_compat(vm, with_size, base) == pytest.approx(total_compat(vm, svc, base))
    tp_vm = VmType("x", vm.vcpu, vm.memory_gb, vm.volume_count, vm.volume_gb, vm.hour_cost_usd, 100.0)
    tp_svc = ServiceSpec(1, 1.0, 1, 2.0, throughput_kbps=10.0)
    no_tp = Weights(0, ws[1], ws[2], ws[3], 0)
    assert total_compat(tp_vm, tp_svc, no_tp) == pytest.approx(total_compat(vm, svc, no_tp))


def test_bounds_singleton_and_pair():
    pool = Pool.from_types([by_name("t2.medium")])
    b = normalization_bounds(pool, SVC_2_4_4, NORMAL)
    assert b.a_min == b.b_max == raw_score(pool.get(0), SVC_2_4_4, NORMAL)


def test_bounds_full_catalog(one_of_each_pool):
    b = normalization_bounds(one_of_each_pool, SVC_2_4_4, NORMAL)
    assert (b.a_min, b.b_max) == pytest.approx(ORACLE_BOUNDS_2_4_4, rel=1e-12)


def test_bounds_no_feasible():
    with pytest.raises(NoFeasibleVm):
        normalization_bounds(Pool.from_types([by_name("t2.small")]), SVC_2_4_4, NORMAL)


def test_normalize():
    b = NormalizationBounds(2.0, 6.0)
    assert normalize(2.0, b) == 0.0
    assert normalize(6.0, b) == 1.0
    assert normalize(4.0, b) == 0.5
    assert normalize(3.0, NormalizationBounds(3.0, 3.0)) == 1.0
    with pytest.raises(ValueError):
        normalize(7.0, b)


def test_perf_factor_extremes(one_of_each_pool):
    b = normalization_bounds(one_of_each_pool, SVC_2_4_4, NORMAL)
    scores = {i.vm_type.name: perf_factor(i, SVC_2_4_4, NORMAL, b)
              for i in one_of_each_pool.instances if feasible(i, SVC_2_4_4)}
    assert max(scores, key=lambda n: scores[n].rho) == "t2.medium"
    assert scores["t2.medium"].rho == 1.0
    assert scores["i3.2xlarge"].rho == 0.0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from(builtin_catalog()), min_size=1, max_size=15),
       st.sampled_from([s for r in ("Class1", "Class2", "Normal", "ProcessIntensive")
                        for s in template_request(r).services]),
       st.lists(st.floats(0.01, 1), min_size=4, max_size=4))
def test_argmax_consistency_and_rho_bounds(types, svc, ws):
    pool = Pool.from_types(types)
    w = Weights(0, *ws)
    feas = [i for i in pool.instances if feasible(i, svc)]
    if not feas:
        return
    b = normalization_bounds(pool, svc, w)
    rhos = [perf_factor(i, svc, w, b).rho for i in feas]
    raws = [raw_score(i, svc, w) for i in feas]
    assert all(0.0 <= r <= 1.0 for r in rhos)
    assert int(np.argmax(rhos)) == int(np.argmax(raws))


# -- matching / tackle -------------------------------------------------------

def brute_matching_size(adjacency):
    right = sorted({v for adj in adjacency for v in adj})
    best = 0
    n = len(adjacency)
    for k in range(n, 0, -1):
        for rows in itertools.combinations(range(n), k):
            for cols in itertools.permutations(right, k):
                if all(c in adjacency[r] for r, c in zip(rows, cols)):
                    return k
    return best


@settings(max_examples=150, deadline=None)
@given(st.lists(st.lists(st.integers(0, 5), max_size=6, unique=True), min_size=1, max_size=5))
def test_matching_matches_brute_force(adjacency):
    m = max_matching(adjacency)
    assert len(m) == brute_matching_size(adjacency)
    assert len(set(m.values())) == len(m)
    assert all(v in adjacency[k] for k, v in m.items())


def test_tackle_hall_violation():
    pool = Pool.from_types([by_name("c4.xlarge"), by_name("t2.small")])
    req = Request("r", "a", [ServiceSpec(4, 4.0, 1, 4.0), ServiceSpec(3, 2.0, 1, 4.0)])
    assert not tackle(pool, req)


def test_tackle_abundant(catalog):
    pool = Pool.from_types([t for t in catalog for _ in range(3)])
    assert tackle(pool, template_request("Class2"))


def test_tackle_class2_on_catalog(one_of_each_pool):
    req = template_request("Class2")
    assert tackle(one_of_each_pool, req)
    # an explicit system of distinct representatives
    witness = {0: "t2.medium", 1: "m4.large", 2: "i3.xlarge"}
    ids = {t.name: i.id for i, t in ((i, i.vm_type) for i in one_of_each_pool.instances)}
    for k, name in witness.items():
        assert feasible(one_of_each_pool.get(ids[name]), req.services[k])
    assert len(set(witness.values())) == 3


def test_safe_candidates_preserve_matching(catalog):
    # service 0 may use either big VM, but service 1 only fits i3.2xlarge
    pool = Pool.from_types([by_name("c4.2xlarge"), by_name("i3.2xlarge")])
    services = [ServiceSpec(4, 8.0, 1, 32.0), ServiceSpec(4, 40.0, 1, 32.0)]
    cands = safe_candidates(pool.available(), services, 0)
    assert [c.vm_type.name for c in cands] == ["c4.2xlarge"]


# -- negotiation -------------------------------------------------------------

def test_negotiate_buys_cheapest_feasible(catalog):
    pool = Pool()
    req = Request("r", "a", [SVC_2_4_4])
    result = negotiate(pool, req, catalog, 60.0)
    assert result == Negotiation(("t2.medium",), 60.0)
    assert [i.vm_type.name for i in pool.instances] == ["t2.medium"]
    assert tackle(pool, req)


def test_negotiate_noop_when_tackled(one_of_each_pool, catalog):
    before = one_of_each_pool.snapshot()
    assert negotiate(one_of_each_pool, Request("r", "a", [SVC_2_4_4]), catalog) == Negotiation((), 0.0)
    assert one_of_each_pool.snapshot() == before


def test_negotiate_impossible(catalog):
    pool = Pool()
    req = Request("r", "a", [ServiceSpec(1, 128.0)])
    assert negotiate(pool, req, catalog) is RejectReason.NO_FEASIBLE_ASSIGNMENT
    assert len(pool) == 0


# -- provisioning ------------------------------------------------------------

def test_singleton_candidate_returns_immediately():
    pool = Pool.from_types([by_name("t2.small"), by_name("t2.medium")])
    out = provision_service(pool, SVC_2_4_4, ProvisionParams(), np.random.default_rng(0))
    assert out.instance.vm_type.name == "t2.medium"
    assert out.iterations == 0


def test_provision_service_finds_argmax(one_of_each_pool):
    hits, its = 0, []
    for seed in range(100):
        out = provision_service(one_of_each_pool, SVC_2_4_4, ProvisionParams(), np.random.default_rng(seed))
        hits += out.instance.vm_type.name == "t2.medium"
        its.append(out.iterations)
    assert hits >= 95
    assert np.mean(its) <= 500


def test_provision_service_no_feasible():
    with pytest.raises(NoFeasibleVm):
        provision_service(Pool(), SVC_2_4_4, ProvisionParams(), np.random.default_rng(0))


def sequential_oracle(pool, req, w):
    """Sequential brute-force: per service, the max raw score among remaining feasible instances."""
    taken, names = set(), []
    for svc in req.services:
        best = max((i for i in pool.instances if i.id not in taken and feasible(i, svc)),
                   key=lambda i: raw_score(i, svc, w))
        taken.add(best.id)
        names.append(best.vm_type.name)
    return names


def test_provision_class1_matches_sequential_oracle(catalog):
    req = template_request("Class1")
    want = sequential_oracle(Pool.from_types(catalog), req, NORMAL)
    assert want == ["t2.small", "t2.medium"]
    agree = 0
    for seed in range(100):
        pool = Pool.from_types(catalog)
        alloc = provision(pool, req, ProvisionParams(), np.random.default_rng(seed))
        assert isinstance(alloc, Allocation)
        assert len(set(alloc.instance_ids)) == 2
        agree += [pool.get(i).vm_type.name for i in alloc.instance_ids] == want
    assert agree >= 95


def test_provision_marks_allocated(one_of_each_pool):
    req = template_request("Class2", request_id="r7")
    alloc = provision(one_of_each_pool, req, ProvisionParams(), np.random.default_rng(1))
    for k, iid in alloc.pairs:
        assert one_of_each_pool.get(iid).allocated_to == ("r7", k)
    assert alloc.request_rho == pytest.approx(sum(alloc.rhos))
    assert 0 <= alloc.request_rho <= req.s


def test_rejection_no_feasible_assignment(one_of_each_pool):
    before = one_of_each_pool.snapshot()
    out = provision(one_of_each_pool, Request("r", "a", [ServiceSpec(1, 128.0)]), ProvisionParams(),
                    np.random.default_rng(0))
    assert out == Rejection("r", RejectReason.NO_FEASIBLE_ASSIGNMENT)
    assert one_of_each_pool.snapshot() == before


def test_rejection_elastic_disabled_leaves_pool():
    pool = Pool.from_types([by_name("t2.small")])
    before = pool.snapshot()
    out = provision(pool, template_request("Class2"), ProvisionParams(), np.random.default_rng(0))
    assert out.reason is RejectReason.ELASTIC_DISABLED
    assert pool.snapshot() == before


def test_elastic_buys_and_allocates():
    pool = Pool.from_types([by_name("t2.small")])
    out = provision(pool, template_request("Class2"), ProvisionParams(elastic=True), np.random.default_rng(0))
    assert isinstance(out, Allocation)
    assert out.negotiation.bought == ("t2.medium", "m4.large", "i3.xlarge")
    assert out.negotiation.delay_s == 180.0
    assert len(pool) == 4


def test_provision_deterministic(catalog):
    req = template_request("Class3")
    results = []
    for _ in range(2):
        pool = Pool.from_types([t for t in catalog for _ in range(2)])
        results.append((provision(pool, req, ProvisionParams(), np.random.default_rng(77)), pool.snapshot()))
    assert results[0] == results[1]


def test_trace_does_not_perturb(catalog):
    req = template_request("Class2")
    plain = provision(Pool.from_types(catalog * 2), req, ProvisionParams(), np.random.default_rng(5))
    traced = provision(Pool.from_types(catalog * 2), req, ProvisionParams(trace=True), np.random.default_rng(5))
    assert plain == traced
    assert len(traced.trace) == sum(traced.iterations_per_service)
    assert all(0 <= row[4] <= 1 for row in traced.trace)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.sampled_from(builtin_catalog()), max_size=14),
       st.sampled_from(["Class1", "Class2", "Class3", "DataIntensive", "ProcessIntensive", "Normal"]),
       st.integers(0, 2**32))
def test_allocation_invariants(types, template, seed):
    pool = Pool.from_types(types)
    req = template_request(template)
    before = pool.snapshot()
    feasible_before = tackle(pool, req)
    out = provision(pool, req, ProvisionParams(), np.random.default_rng(seed))
    if isinstance(out, Rejection):
        assert not feasible_before
        assert pool.snapshot() == before
        return
    assert len(set(out.instance_ids)) == req.s
    for k, iid in out.pairs:
        inst = pool.get(iid)
        assert feasible(inst.vm_type, req.services[k])
    assert all(0 <= r <= 1 for r in out.rhos)


def test_request_perf():
    assert request_perf([1.0]) == 1.0
    assert request_perf([0.5, 0.5, 0.5]) == 1.5
    assert request_perf([0.0, 0.0]) == 0.0
