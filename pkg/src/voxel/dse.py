"""Area-constrained coordinate-descent search over chip parameters."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, TypeVar

from .chipspec import ChipSpec, SpecError, area_of
from .engine import SimOptions
from .runner import Workload, run_workload

T = TypeVar("T")

DEFAULT_DOMAINS: Dict[str, Tuple] = {
    "num_cores": (16, 64, 256),
    "sa_width": (16, 32, 64),
    "sram_per_core": (512 << 10, 1 << 20, 2 << 20, 4 << 20),
    "noc_link_bw": (16.0, 32.0, 48.0),
    "dram_total_bw": (4e12, 8e12, 12e12, 16e12),
    "core_group_size": (1, 8),
}

DEFAULT_WORKLOADS = (
    Workload("desk-1k", "prefill", batch=1, seq_len=128, layers=1),
    Workload("desk-1k", "decode", batch=8, seq_len=256, layers=1),
)


class DseError(ValueError):
    pass


@dataclass
class Evaluation:
    spec: ChipSpec
    area: float
    latencies: Dict[str, float]
    objective: float

    def values(self, names: Iterable[str]) -> Dict[str, object]:
        return {n: getattr(self.spec, n) for n in names}


@dataclass
class DescentResult:
    best: Evaluation
    threshold: float
    trace: List[Evaluation]                     # accepted points, objective nonincreasing
    visited: List[Evaluation] = field(default_factory=list)


def geomean(values: Iterable[float]) -> float:
    vals = list(values)
    if not vals or any(v <= 0 for v in vals):
        raise DseError("geometric mean needs positive values")
    return math.exp(sum(math.log(v) for v in vals) / len(vals))


def geometric_thresholds(area_limit: float, count: int = 4, ratio: float = 0.75) -> List[float]:
    if not 0 < ratio < 1:
        raise DseError("threshold ratio must be in (0, 1)")
    return [area_limit * ratio ** i for i in range(count)]


class SimObjective:
    """Latency in seconds of each workload; picklable so candidates can run in worker processes."""

    def __init__(self, workloads: Sequence[Workload] = DEFAULT_WORKLOADS, paradigm: str = "compute-shift",
                 placement: str = "software-aware", tile_map: str = "dim-ordered") -> None:
        self.workloads = tuple(workloads)
        self.paradigm = paradigm
        self.placement = placement
        self.tile_map = tile_map

    def __call__(self, spec: ChipSpec) -> Dict[str, float]:
        out = {}
        for wl in self.workloads:
            r = run_workload(spec, wl, self.paradigm, self.tile_map, self.placement, SimOptions())
            out[wl.label] = r.seconds(spec)
        return out


class _Cache:
    """Evaluations keyed by spec hash."""

    def __init__(self, objective: Callable[[ChipSpec], object], area: Callable[[ChipSpec], float],
                 jobs: int = 1) -> None:
        self.objective = objective
        self.area = area
        self.jobs = jobs
        self.store: Dict[str, Evaluation] = {}

    def _wrap(self, spec: ChipSpec, raw) -> Evaluation:
        lat = dict(raw) if isinstance(raw, Mapping) else {"objective": float(raw)}
        return Evaluation(spec, self.area(spec), lat, geomean(lat.values()) if len(lat) > 1
                          else next(iter(lat.values())))

    def many(self, specs: Sequence[ChipSpec]) -> List[Evaluation]:
        todo = []
        for s in specs:
            if s.digest() not in self.store and s.digest() not in {t.digest() for t in todo}:
                todo.append(s)
        if todo:
            if self.jobs > 1 and len(todo) > 1:
                with ProcessPoolExecutor(max_workers=self.jobs) as pool:
                    raws = list(pool.map(self.objective, todo))
            else:
                raws = [self.objective(s) for s in todo]
            for s, raw in zip(todo, raws):
                self.store[s.digest()] = self._wrap(s, raw)
        return [self.store[s.digest()] for s in specs]


def _area_total(spec: ChipSpec) -> float:
    return area_of(spec).total


def coordinate_descent(initial: ChipSpec, area_limit: float,
                       objective: Callable[[ChipSpec], object],
                       domains: Mapping[str, Sequence] = DEFAULT_DOMAINS,
                       area: Callable[[ChipSpec], float] = _area_total,
                       max_cycles: int = 50, jobs: int = 1,
                       cache: Optional[_Cache] = None) -> DescentResult:
    """Cycle through parameters, moving each to its best feasible domain value.

    ``objective`` maps a spec to a latency (or a dict of per-workload
    latencies, combined by geometric mean). A move is taken only on strict
    improvement, and among equal candidates the first in domain order wins,
    so the search is deterministic. Stops after a full cycle without a move.
    """
    cache = cache or _Cache(objective, area, jobs)
    if area(initial) > area_limit:
        raise DseError(f"initial spec area {area(initial):.1f} mm2 exceeds the limit {area_limit:.1f} mm2")
    current = cache.many([initial])[0]
    trace = [current]
    visited = [current]
    for _ in range(max_cycles):
        moved = False
        for name, domain in domains.items():
            cands = []
            for v in domain:
                if v == getattr(current.spec, name):
                    continue
                try:
                    s = current.spec.replace(**{name: v})
                except SpecError:
                    continue
                if area(s) <= area_limit:
                    cands.append(s)
            evals = cache.many(cands)
            visited += evals
            best = None
            for ev in evals:
                if ev.objective < current.objective and (best is None or ev.objective < best.objective):
                    best = ev
            if best is not None:
                current = best
                trace.append(best)
                moved = True
        if not moved:
            break
    return DescentResult(current, area_limit, trace, visited)


def pareto_frontier(points: Iterable[T], key: Callable[[T], Tuple[float, float]] = lambda p: p) -> List[T]:
    """Points not dominated under (area, latency), both minimized; sorted by area, duplicates dropped."""
    ordered = sorted(points, key=lambda p: tuple(key(p)))
    out: List[T] = []
    best = math.inf
    for p in ordered:
        _, lat = key(p)
        if lat < best:
            out.append(p)
            best = lat
    return out


def search(initial: ChipSpec, area_limit: float, objective: Callable[[ChipSpec], object],
           domains: Mapping[str, Sequence] = DEFAULT_DOMAINS, thresholds: int = 4, ratio: float = 0.75,
           jobs: int = 1) -> Tuple[List[DescentResult], List[Evaluation]]:
    """Descent at each geometric area threshold; returns the runs and every evaluated point."""
    cache = _Cache(objective, _area_total, jobs)
    runs = []
    for limit in geometric_thresholds(area_limit, thresholds, ratio):
        start = initial
        if _area_total(start) > limit:
            start = _shrink_to(initial, limit, domains)
            if start is None:
                continue
        runs.append(coordinate_descent(start, limit, objective, domains, jobs=jobs, cache=cache))
    return runs, list(cache.store.values())


def _shrink_to(spec: ChipSpec, limit: float, domains: Mapping[str, Sequence]) -> Optional[ChipSpec]:
    """Greedy smallest-area starting point: each parameter to its minimum-area domain value."""
    cur = spec
    for name, domain in domains.items():
        best = None
        for v in domain:
            try:
                s = cur.replace(**{name: v})
            except SpecError:
                continue
            if best is None or _area_total(s) < _area_total(best):
                best = s
        if best is not None:
            cur = best
    return cur if _area_total(cur) <= limit else None
