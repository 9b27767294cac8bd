import pytest
from hypothesis import given, strategies as st

from voxel.chipspec import NocTopology
from voxel.noc_model import FlowNetwork, hops, link_dependency_acyclic, route, transfer_time

MESH, TORUS, A2A = NocTopology.MESH2D, NocTopology.TORUS2D, NocTopology.ALL_TO_ALL


def test_hop_examples():
    assert hops((0, 0), (2, 3), MESH, (4, 4)) == 5
    assert hops((0, 0), (0, 3), TORUS, (4, 4)) == 1
    assert hops((0, 0), (3, 3), A2A, (4, 4)) == 1


def test_xy_route_goes_columns_first():
    r = route((0, 0), (2, 1), MESH, (4, 4))
    assert [l[1] for l in r.links] == [(0, 1), (1, 1), (2, 1)]


def test_transfer_time():
    assert transfer_time(1024, route((0, 0), (0, 2), MESH, (4, 4)), 32.0) == 34
    assert transfer_time(0, route((0, 0), (0, 2), MESH, (4, 4)), 32.0) == 2


def test_fair_share_halves_rate():
    net = FlowNetwork(32.0, hop_latency=0)
    rt = route((0, 0), (0, 1), MESH, (2, 2))
    net.start(0, 1024, rt, 0.0)
    preds = net.start(1, 1024, rt, 0.0)
    assert sorted(t for t, _, _ in preds) == [64.0, 64.0]
    # the survivor is re-predicted at the same completion time
    assert [t for t, _, _ in net.finish(0, 64.0)] == [64.0]


def test_rate_recovers_when_a_flow_leaves():
    net = FlowNetwork(32.0, hop_latency=0)
    rt = route((0, 0), (0, 1), MESH, (2, 2))
    net.start(0, 512, rt, 0.0)
    net.start(1, 1024, rt, 0.0)
    # flow 0 ends at 32; flow 1 has 512 B left and runs alone at 32 B/cycle
    (t, fid, ver), = net.finish(0, 32.0)
    assert (t, fid) == (48.0, 1)
    assert net.is_current(1, ver)


@given(st.sampled_from([MESH, TORUS]), st.integers(1, 6), st.integers(1, 6), st.data())
def test_route_length_equals_hops(topo, rows, cols, data):
    src = (data.draw(st.integers(0, rows - 1)), data.draw(st.integers(0, cols - 1)))
    dst = (data.draw(st.integers(0, rows - 1)), data.draw(st.integers(0, cols - 1)))
    r = route(src, dst, topo, (rows, cols))
    assert r.hop_count == hops(src, dst, topo, (rows, cols))
    cur = src
    for a, b in r.links:
        assert a == cur
        cur = b
    assert cur == dst or src == dst


@given(st.integers(1, 5), st.integers(1, 5))
def test_mesh_xy_is_deadlock_free(rows, cols):
    assert link_dependency_acyclic(MESH, (rows, cols))


def test_out_of_grid_rejected():
    with pytest.raises(ValueError):
        route((0, 0), (4, 0), MESH, (4, 4))
