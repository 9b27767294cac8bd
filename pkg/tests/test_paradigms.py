from collections import Counter

import pytest
from hypothesis import given, strategies as st

from helpers import small_spec
from voxel.engine import SimOptions, simulate
from voxel.graph import GraphError, dump_graph
from voxel.mapping import place
from voxel.paradigms import PARADIGMS, DataflowPlanner, choose_split, plan
from voxel.workloads import Operator, PhaseSpec, expand, get_model, weight_bytes


def _labels(p):
    return Counter(e.label for e in p.graph.events)


def _ops(phase="prefill", batch=1, seq=64):
    return expand(get_model("desk-1k").with_layers(1), PhaseSpec(phase, batch, seq))


@given(st.integers(1, 512), st.integers(1, 4096), st.integers(1, 4096), st.sampled_from([1, 2, 4, 8, 16, 64]))
def test_choose_split_covers_all_cores(m, k, n, p):
    if m * k * n < p:
        return
    try:
        pm, pk, pn = choose_split(m, k, n, p, 32)
    except GraphError:
        # only when no factorization fits inside the dims
        assert not any(a <= m and b <= k and (p // (a * b)) <= n
                       for a in range(1, p + 1) if p % a == 0
                       for b in range(1, p // a + 1) if (p // a) % b == 0)
        return
    assert pm * pk * pn == p
    assert pm <= m and pk <= k and pn <= n


def test_spmd_reduction_split_emits_allreduce():
    spec = small_spec(num_cores=4)
    p = plan("spmd", [Operator("proj", "matmul", 0, (1, 4096, 32), 1, "weight")], spec)
    assert choose_split(1, 4096, 32, 4, spec.sa_width) == (1, 4, 1)
    g = p.graph
    tiles = [e for e in g.events if e.label == "proj"]
    assert sorted(e.core for e in tiles) == [0, 1, 2, 3]
    labels = _labels(p)
    assert labels["ring-send"] == labels["ring-reduce"] == 4 * 3
    # a ring allreduce of B*N elements sends (p-1)/p of it per core in the reduce phase
    sent = sum(e.src.numel for e in g.events if e.label == "ring-send")
    assert sent == 3 * 32
    assert labels["proj-barrier"] == 1


def test_elementwise_adds_no_reduction():
    spec = small_spec(num_cores=4)
    mm = Operator("proj", "matmul", 0, (1, 4096, 32), 1, "weight")
    ew = Operator("act", "elementwise", 0, (32, 1))
    base = _labels(plan("spmd", [mm], spec))
    more = _labels(plan("spmd", [mm, ew], spec))
    assert more["act"] > 0
    assert more["ring-reduce"] == base["ring-reduce"]


def test_compute_shift_has_no_allreduce():
    labels = _labels(plan("compute-shift", _ops(), small_spec()))
    assert labels["ring-reduce"] == 0
    assert labels["shift"] > 0


def test_compute_shift_ring_rotation():
    # one matmul on a 4x4 grid: each core of a ring of 4 receives 3 blocks of equal size
    spec = small_spec()
    op = Operator("proj", "matmul", 0, (64, 256, 256), 1, "weight")
    g = plan("compute-shift", [op], spec).graph
    shifts = [e for e in g.events if e.label == "shift"]
    per_core = Counter(e.dst.core for e in shifts)
    assert set(per_core.values()) == {3} and len(per_core) == 16
    sizes = {e.src.numel for e in shifts}
    assert len(sizes) == 1
    computes = Counter(e.core for e in g.events if e.label == "proj")
    assert all(computes[c] >= 4 for c in range(16))


def _dataflow_overlap(microbatches):
    spec = small_spec()
    ops = [Operator("fc1", "matmul", 0, (64, 1024, 1024), 1, "weight"),
           Operator("fc2", "matmul", 0, (64, 1024, 1024), 1, "weight")]
    g = DataflowPlanner(ops, spec, microbatches=microbatches).build().graph
    r = simulate(g, spec, place("uniform", g, spec), SimOptions(timeline=True))
    span = {}
    for eid, _, _, s, f in r.timeline:
        lab = g.events[eid].label
        if lab in ("fc1", "fc2"):
            span.setdefault(lab, []).append((s, f))
    return min(s for s, _ in span["fc2"]), max(f for _, f in span["fc1"])


def test_dataflow_microbatches_pipeline():
    first_fc2, last_fc1 = _dataflow_overlap(2)
    assert first_fc2 < last_fc1


def test_dataflow_single_microbatch_is_sequential():
    first_fc2, last_fc1 = _dataflow_overlap(1)
    assert first_fc2 >= last_fc1


@pytest.mark.parametrize("paradigm", PARADIGMS)
@pytest.mark.parametrize("phase", ["prefill", "decode"])
def test_plans_read_the_same_weights(paradigm, phase):
    ops = _ops(phase, batch=2)
    p = plan(paradigm, ops, small_spec())
    assert p.weight_bytes == weight_bytes(ops)
    assert p.paradigm == paradigm and len(p.graph.events) > 0


@pytest.mark.parametrize("paradigm", PARADIGMS)
def test_plans_are_deterministic(paradigm):
    spec = small_spec()
    a = plan(paradigm, _ops(), spec, tile_map="sequential")
    b = plan(paradigm, _ops(), spec, tile_map="sequential")
    assert dump_graph(a.graph) == dump_graph(b.graph)


def test_rejects_bad_arguments():
    spec = small_spec()
    with pytest.raises(ValueError, match="unknown paradigm"):
        plan("pipeline", _ops(), spec)
    with pytest.raises(ValueError, match="tile map"):
        plan("spmd", _ops(), spec, tile_map="spiral")
    with pytest.raises(ValueError, match="microbatch"):
        plan("dataflow", _ops(), spec, microbatches=0)
