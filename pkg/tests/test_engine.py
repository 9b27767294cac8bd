import math

import pytest

from helpers import small_spec
from voxel.core_model import matmul_cost, vector_cost
from voxel.engine import CATEGORIES, DeadlockError, SimOptions, simulate
from voxel.graph import Event, ExecutionGraph, GraphBuilder, OpTile
from voxel.mapping import place
from voxel.microbench import two_tensor_stream
from voxel.runner import Workload, build_plan


def _ew(b, core, n, deps=(), src=None):
    src = src or b.sram_region(core, (n,))
    return b.compute(OpTile(("elementwise", n, 1), (src,), b.sram_region(core, (n,))), core, deps)


def _run(b, spec, **opt):
    g = b.finalize()
    return simulate(g, spec, place("uniform", g, spec), SimOptions(**opt))


def test_empty_graph():
    assert simulate(ExecutionGraph((), {}, {}, 16), small_spec(), None).total_cycles == 0


def test_single_compute_is_tile_cost():
    spec = small_spec()
    b = GraphBuilder(spec)
    x, w, o = (b.sram_region(0, (64 * 64,)) for _ in range(3))
    b.compute(OpTile(("matmul", 64, 64, 64), (x, w), o), 0)
    assert _run(b, spec).total_cycles == matmul_cost(64, 64, 64, 32).cycles


def test_dependent_computes_serialize():
    spec = small_spec()
    b = GraphBuilder(spec)
    a = _ew(b, 0, 6400)
    _ew(b, 0, 640, (a,))
    assert _run(b, spec).total_cycles == 100 + 10


def test_independent_cores_overlap():
    spec = small_spec()
    b = GraphBuilder(spec)
    _ew(b, 0, 6400)
    _ew(b, 1, 3200)
    assert _run(b, spec).total_cycles == 100


def _fetch_graph(spec, fetch_elems, with_compute):
    b = GraphBuilder(spec)
    w = b.dram_tensor("w", [fetch_elems * 2], [0])
    if with_compute:
        _ew(b, 0, 6400)
    _ew(b, 0, fetch_elems, src=b.region(w))
    return b


@pytest.mark.parametrize("elems", [512, 64 << 10])
def test_prefetch_overlaps_compute(elems):
    # total = max(compute, fetch) + consumer, whatever the fetch time is
    spec = small_spec()
    alone = _run(_fetch_graph(spec, elems, False), spec).total_cycles
    consumer = vector_cost(elems, 1, spec.vector_lanes).cycles
    fetch = alone - consumer
    both = _run(_fetch_graph(spec, elems, True), spec).total_cycles
    assert both == pytest.approx(max(100, fetch) + consumer)


def test_deadlock_reported():
    spec = small_spec()
    e = Event(0, "sync", (1,))
    f = Event(1, "sync", (0,))
    with pytest.raises(DeadlockError, match=r"blocked: \[0, 1\]"):
        simulate(ExecutionGraph((e, f), {}, {}, 16), spec, None)
    b = GraphBuilder(spec)
    src = b.sram_region(1, (4,))
    b.compute(OpTile(("elementwise", 4, 1), (src,), b.sram_region(0, (4,))), 0)
    with pytest.raises(Exception, match="move it first"):
        _run(b, spec)


@pytest.fixture(scope="module")
def plan_run():
    spec = small_spec(num_cores=16)
    wl = Workload("desk-1k", "decode", batch=2, seq_len=64, layers=1)
    g = build_plan(spec, wl).graph
    r = simulate(g, spec, place("software-aware", g, spec), SimOptions(timeline=True))
    return spec, g, r


def test_causality(plan_run):
    _, g, r = plan_run
    issue = {eid: s for eid, _, _, s, _ in r.timeline}
    finish = {eid: f for eid, _, _, _, f in r.timeline}
    assert len(issue) == len(g.events)
    for e in g.events:
        for d in e.deps:
            assert issue[e.id] >= finish[d]
    assert max(finish.values()) == r.total_cycles


def test_report_fields(plan_run):
    spec, _, r = plan_run
    assert set(r.breakdown) == set(CATEGORIES)
    assert all(0 <= u <= 1 for u in r.core_utilization)
    assert r.energy.identity_holds()
    assert r.dram["requests"] == r.dram["hits"] + r.dram["misses"] + r.dram["conflicts"]
    assert r.spec_digest == spec.digest()
    assert r.seconds(spec) == r.total_cycles / 1.6e9


def test_deterministic(plan_run):
    spec, g, r = plan_run
    again = simulate(g, spec, place("software-aware", g, spec), SimOptions(timeline=True))
    assert again.row() == r.row() and again.timeline == r.timeline


def test_coalescing_does_not_change_results(plan_run):
    spec, g, r = plan_run
    plain = simulate(g, spec, place("software-aware", g, spec), SimOptions(coalesce=False, timeline=True))
    assert plain.timeline == r.timeline
    assert plain.dram == r.dram


def test_energy_constants_matter(plan_run):
    from voxel.power_thermal import EnergyConstants
    spec, g, _ = plan_run
    pl = place("software-aware", g, spec)
    r = simulate(g, spec, pl, SimOptions(energy=EnergyConstants(dram_pj_per_byte=4.0), throttle=False))
    r2 = simulate(g, spec, pl, SimOptions(energy=EnergyConstants(dram_pj_per_byte=8.0), throttle=False))
    assert r2.energy.dynamic["DRAM"] == pytest.approx(2 * r.energy.dynamic["DRAM"])
    assert r2.total_cycles == r.total_cycles


def test_infinite_limit_is_identical_to_no_throttle():
    spec = small_spec(power_density_limit=math.inf)
    wl = Workload("desk-1k", "decode", batch=2, seq_len=64, layers=1)
    g = build_plan(spec, wl).graph
    runs = [simulate(g, spec, place("uniform", g, spec), SimOptions(throttle=t, timeline=True)) for t in (True, False)]
    assert runs[0].row() == runs[1].row() and runs[0].timeline == runs[1].timeline
    assert runs[0].throttled_events == 0


def test_forced_density_doubles_compute():
    spec = small_spec()
    wl = Workload("desk-1k", "decode", batch=2, seq_len=64, layers=1)
    g = build_plan(spec, wl).graph
    base = simulate(g, spec, place("uniform", g, spec), SimOptions(throttle=False))
    hot = simulate(g, spec, place("uniform", g, spec),
                   SimOptions(density_override=lambda core: 2 * spec.power_density_limit))
    assert base.compute_durations.keys() == hot.compute_durations.keys()
    assert all(hot.compute_durations[e] == 2 * d for e, d in base.compute_durations.items())
    assert hot.throttled_events == sum(1 for d in base.compute_durations.values() if d > 0)


def test_software_aware_never_worse_than_uniform_on_stream():
    spec = small_spec(num_cores=64, dram_total_bw=16e12)
    g = two_tensor_stream(spec, tensor_bytes=8 << 10)
    stall = {p: simulate(g, spec, place(p, g, spec)).breakdown["row_conflict_stall"]
             for p in ("uniform", "interleaved", "software-aware")}
    assert stall["uniform"] >= stall["interleaved"] >= stall["software-aware"]
