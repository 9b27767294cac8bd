import itertools

import pytest
from hypothesis import given, strategies as st

from voxel.chipspec import ChipSpec, area_of
from voxel.dse import (DseError, coordinate_descent, geomean, geometric_thresholds, pareto_frontier, search)

DOMAINS = {
    "sa_width": (16, 32, 64),
    "sram_per_core": (512 << 10, 1 << 20, 2 << 20),
    "noc_link_bw": (16.0, 32.0, 48.0),
    "dram_total_bw": (4e12, 8e12, 16e12),
}
START = ChipSpec(num_cores=16, dram_total_bw=8e12)


def _area(s):
    return area_of(s).total


def _separable(weights):
    def f(spec):
        return 1.0 + sum(weights[n][DOMAINS[n].index(getattr(spec, n))] for n in DOMAINS)
    return f


def _grid_best(f, limit=float("inf")):
    best = None
    for vals in itertools.product(*DOMAINS.values()):
        s = START.replace(**dict(zip(DOMAINS, vals)))
        if _area(s) <= limit and (best is None or f(s) < best):
            best = f(s)
    return best


@given(st.fixed_dictionaries({n: st.lists(st.integers(0, 100), min_size=3, max_size=3) for n in DOMAINS}))
def test_separable_objective_reaches_grid_optimum(weights):
    f = _separable(weights)
    r = coordinate_descent(START, float("inf"), f, DOMAINS)
    assert r.best.objective == _grid_best(f)
    objs = [e.objective for e in r.trace]
    assert objs == sorted(objs, reverse=True)


def test_single_value_domains_are_a_fixed_point():
    doms = {n: (getattr(START, n),) for n in DOMAINS}
    r = coordinate_descent(START, float("inf"), lambda s: 1.0, doms)
    assert r.best.spec == START and len(r.trace) == 1


def test_area_objective_reaches_smallest_corner():
    r = coordinate_descent(START, float("inf"), _area, DOMAINS)
    assert r.best.spec.sa_width == 16 and r.best.spec.sram_per_core == 512 << 10
    assert r.best.objective == pytest.approx(min(_area(START.replace(**dict(zip(DOMAINS, v))))
                                                for v in itertools.product(*DOMAINS.values())))


def test_area_limit_is_respected():
    limit = _area(START) * 1.05
    r = coordinate_descent(START, limit, lambda s: 1.0 / s.sa_width / s.sram_per_core, DOMAINS)
    assert all(e.area <= limit for e in r.visited)
    with pytest.raises(DseError, match="exceeds"):
        coordinate_descent(START, _area(START) / 2, _area, DOMAINS)


def test_dict_objective_is_combined_by_geomean():
    r = coordinate_descent(START, float("inf"), lambda s: {"a": 2.0, "b": 8.0}, DOMAINS)
    assert r.best.objective == pytest.approx(4.0)
    with pytest.raises(DseError):
        geomean([1.0, 0.0])


def test_thresholds_are_geometric():
    assert geometric_thresholds(800, 4) == [800, 600, 450, 337.5]
    with pytest.raises(DseError):
        geometric_thresholds(800, 4, ratio=1.0)


def test_search_runs_each_feasible_threshold():
    f = _separable({n: [0, 1, 2] for n in DOMAINS})
    runs, points = search(START, _area(START) * 1.2, f, DOMAINS, thresholds=3)
    assert [r.threshold for r in runs] == geometric_thresholds(_area(START) * 1.2, 3)[:len(runs)]
    assert all(r.best.area <= r.threshold for r in runs)
    assert len({p.spec.digest() for p in points}) == len(points)


def test_pareto_examples():
    assert pareto_frontier([(1, 1), (2, 2)]) == [(1, 1)]
    assert pareto_frontier([(1, 2), (2, 1)]) == [(1, 2), (2, 1)]
    assert pareto_frontier([(1, 1), (1, 1), (1, 2)]) == [(1, 1)]
    assert pareto_frontier([]) == []


def _dominates(q, p):
    return q[0] <= p[0] and q[1] <= p[1] and q != p


@given(st.lists(st.tuples(st.integers(0, 30), st.integers(0, 30)), max_size=60))
def test_pareto_frontier_is_exact(points):
    front = pareto_frontier(points)
    assert len(set(front)) == len(front)
    for p in front:
        assert not any(_dominates(q, p) for q in points)
    for p in points:
        assert p in front or any(_dominates(q, p) for q in front)
