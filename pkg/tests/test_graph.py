from collections import Counter

import pytest
from hypothesis import given, strategies as st

from helpers import small_spec
from voxel.engine import simulate
from voxel.graph import (CycleError, GraphBuilder, GraphError, OpTile, OverCommit, dump_graph, load_graph,
                         topological_order)
from voxel.mapping import RingPolicy, place


def _builder(**kw):
    return GraphBuilder(small_spec(**kw))


def test_matmul_tile_on_core():
    b = _builder(sram_per_core=4 << 20)
    w = b.dram_tensor("w", [5120 * 128 * 2], [7])
    x = b.sram_region(7, (128, 5120))
    out = b.sram_region(7, (128, 128))
    eid = b.compute(OpTile(("matmul", 128, 5120, 128), (x, b.region(w)), out), 7)
    e = b.finalize().events[eid]
    assert e.kind == "compute" and e.core == 7
    assert len(e.tile.inputs) + 1 == 3


def test_over_commit():
    b = _builder(sram_per_core=1 << 20)
    w = b.dram_tensor("w", [2 << 20], [0])
    out = b.sram_region(0, (1,))
    with pytest.raises(OverCommit):
        b.compute(OpTile(("elementwise", 1 << 20, 1), (b.region(w),), b.sram_region(0, (1 << 20,))), 0)
    with pytest.raises(OverCommit):
        b.sram_region(0, (1 << 20,))
    assert out.size_bytes == 2


def test_shape_mismatch_rejected():
    b = _builder()
    with pytest.raises(GraphError):
        OpTile(("matmul", 4, 4, 4), (b.sram_region(0, (4, 4)), b.sram_region(0, (4, 5))), b.sram_region(0, (16,)))


def test_placement_event_and_dram_decomposition():
    spec = small_spec()
    b = GraphBuilder(spec)
    w = b.dram_tensor("w", [64 << 10], [0])
    pe = b.place(w)
    dst = b.sram_region(0, (32 << 10,))
    b.movedata(b.region(w), dst, (pe,))
    g = b.finalize()
    assert g.events[pe].src is None
    r = simulate(g, spec, place("uniform", g, spec))
    assert r.dram["requests"] == 512          # 64 KiB at 128 B per request


def test_core_to_core_move_uses_no_dram():
    spec = small_spec()
    b = GraphBuilder(spec)
    src = b.sram_region(3, (512,))
    b.movedata(src, b.sram_region(4, (512,)))
    g = b.finalize()
    r = simulate(g, spec, place("uniform", g, spec))
    assert r.dram["requests"] == 0
    assert r.noc_bytes == 1024


def test_sync():
    b = _builder()
    outs = [b.compute(OpTile(("elementwise", 4, 1), (b.sram_region(c, (4,)),), b.sram_region(c, (4,))), c)
            for c in range(16)]
    s = b.sync(outs)
    assert len(b.event(s).deps) == 16
    with pytest.raises(GraphError):
        b.sync([])
    s2 = b.sync([s, outs[0]])
    order = topological_order(b.finalize().events)
    assert all(order.index(o) < order.index(s2) for o in outs)


def test_roots_and_cycles():
    b = _builder()
    a = b.compute(OpTile(("elementwise", 4, 1), (b.sram_region(0, (4,)),), b.sram_region(0, (4,))), 0)
    c = b.compute(OpTile(("elementwise", 4, 1), (b.sram_region(1, (4,)),), b.sram_region(1, (4,))), 1)
    assert sorted(b.finalize().roots) == [a, c]
    b.add_dep(c, a)
    b.add_dep(a, c)
    with pytest.raises(CycleError):
        b.finalize()


def _move_bytes_by_source(b, eids):
    sent = Counter()
    for e in eids:
        ev = b.event(e)
        if ev.kind == "movedata" and ev.src.core != ev.dst.core:
            sent[ev.src.core] += ev.src.size_bytes
    return sent


@given(st.integers(2, 8), st.integers(1, 64))
def test_ring_allreduce_bytes(p, chunk):
    n = p * chunk
    b = _builder()
    cores = list(range(p))
    regs = [b.sram_region(c, (n,)) for c in cores]
    eids = b.collective("allreduce", regs, cores)
    sent = _move_bytes_by_source(b, eids)
    assert all(sent[c] == 2 * n * (p - 1) // p * 2 for c in cores)
    rounds = Counter(b.event(e).label for e in eids)
    assert rounds["ring-send"] == p * (p - 1) and rounds["ring-gather"] == p * (p - 1)
    assert rounds["ring-reduce"] == p * (p - 1)


def test_allgather_output_shape():
    b = _builder()
    regs = [b.sram_region(c, (10,)) for c in range(4)]
    b.collective("allgather", regs, list(range(4)))
    assert [r.shape for r in b.last_outputs] == [(40,)] * 4
    assert all(r.core == c for c, r in enumerate(b.last_outputs))


def test_broadcast_one_to_one():
    b = _builder()
    regs = [b.sram_region(c, (10,)) for c in (2, 5)]
    assert len(b.collective("broadcast", regs, [2, 5])) == 1


def test_auto_core_ring_policy_stays_on_one_row():
    spec = small_spec()
    b = GraphBuilder(spec, core_policy=RingPolicy(spec, 4))
    w = b.dram_tensor("w", [4 * 64], [0])
    cores = []
    for i in range(4):
        e = b.compute(OpTile(("elementwise", 32, 1), (b.region(w, -1, i * 64, (32,)),), None))
        cores.append(b.event(e).core)
    assert len({c // 4 for c in cores}) == 1 and len(set(cores)) == 4


def test_text_round_trip():
    spec = small_spec()
    b = GraphBuilder(spec)
    w = b.dram_tensor("w", [256, 256], [0, 1])
    p = b.place(w)
    x = b.sram_region(0, (128,))
    m = b.movedata(b.region(w, 1), x, (p,))
    b.compute(OpTile(("elementwise", 128, 1), (x,), b.sram_region(0, (128,))), 0, (m,), label="act")
    g = b.finalize()
    back = load_graph(dump_graph(g), spec.num_cores)
    assert [(e.kind, e.deps, e.core, e.label) for e in back.events] == \
        [(e.kind, e.deps, e.core, e.label) for e in g.events]
    assert back.tensors == g.tensors
