"""NoC topology, routing and flow-level bandwidth sharing."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Set, Tuple

from .chipspec import NocTopology

Coord = Tuple[int, int]
Link = Tuple[Coord, Coord]


@dataclass(frozen=True)
class Route:
    links: Tuple[Link, ...]

    @property
    def hop_count(self) -> int:
        return len(self.links)


def _axis_steps(a: int, b: int, size: int, wrap: bool) -> List[int]:
    """Sequence of positions visited moving from a to b along one axis."""
    if a == b:
        return []
    if not wrap:
        step = 1 if b > a else -1
        return list(range(a + step, b + step, step))
    fwd = (b - a) % size
    bwd = (a - b) % size
    step = 1 if fwd <= bwd else -1
    count = fwd if fwd <= bwd else bwd
    return [(a + step * i) % size for i in range(1, count + 1)]


def route(src: Coord, dst: Coord, topology: NocTopology, grid: Tuple[int, int]) -> Route:
    """XY dimension-ordered route (columns first, then rows)."""
    rows, cols = grid
    for r, c in (src, dst):
        if not (0 <= r < rows and 0 <= c < cols):
            raise ValueError(f"coordinate {(r, c)} outside {rows}x{cols} grid")
    if src == dst:
        return Route(())
    if topology == NocTopology.ALL_TO_ALL:
        return Route(((src, dst),))
    wrap = topology == NocTopology.TORUS2D
    links: List[Link] = []
    cur = src
    for c in _axis_steps(src[1], dst[1], cols, wrap):
        nxt = (cur[0], c)
        links.append((cur, nxt))
        cur = nxt
    for r in _axis_steps(src[0], dst[0], rows, wrap):
        nxt = (r, cur[1])
        links.append((cur, nxt))
        cur = nxt
    return Route(tuple(links))


def hops(src: Coord, dst: Coord, topology: NocTopology, grid: Tuple[int, int]) -> int:
    if src == dst:
        return 0
    if topology == NocTopology.ALL_TO_ALL:
        return 1
    rows, cols = grid
    dr, dc = abs(src[0] - dst[0]), abs(src[1] - dst[1])
    if topology == NocTopology.TORUS2D:
        dr, dc = min(dr, rows - dr), min(dc, cols - dc)
    return dr + dc


def transfer_time(nbytes: float, rt: Route, link_bw: float, contenders: int = 1,
                  hop_latency: int = 1) -> float:
    """Cycles for one transfer whose busiest link carries ``contenders`` flows."""
    if nbytes < 0:
        raise ValueError("negative transfer size")
    return nbytes / (link_bw / max(1, contenders)) + rt.hop_count * hop_latency


class FlowNetwork:
    """Fluid model of concurrent transfers sharing NoC links.

    Each flow runs at ``link_bw / n`` where ``n`` is the largest number of
    flows on any link of its route; rates are recomputed whenever a flow
    starts or ends on a shared link. Completion predictions are returned as
    ``(time, flow_id, version)``; stale versions must be ignored.
    """

    def __init__(self, link_bw: float, hop_latency: int = 1) -> None:
        self.link_bw = link_bw
        self.hop_latency = hop_latency
        self._link_flows: Dict[Link, Set[int]] = {}
        self._flows: Dict[int, dict] = {}
        self.byte_hops = 0.0

    def __len__(self) -> int:
        return len(self._flows)

    def _rate(self, links) -> float:
        n = max((len(self._link_flows[l]) for l in links), default=1)
        return self.link_bw / max(1, n)

    def _settle(self, fid: int, now: float) -> None:
        f = self._flows[fid]
        f["remaining"] = max(0.0, f["remaining"] - f["rate"] * (now - f["since"]))
        f["since"] = now

    def _predict(self, fid: int):
        f = self._flows[fid]
        f["version"] += 1
        ser_end = f["since"] + (f["remaining"] / f["rate"] if f["remaining"] > 0 else 0.0)
        return (ser_end + f["hops"] * self.hop_latency, fid, f["version"])

    def start(self, fid: int, nbytes: float, rt: Route, now: float) -> List[Tuple[float, int, int]]:
        links = rt.links
        affected: Set[int] = set()
        for l in links:
            group = self._link_flows.setdefault(l, set())
            affected |= group
            group.add(fid)
        for other in sorted(affected):
            self._settle(other, now)
        self._flows[fid] = dict(remaining=float(nbytes), rate=self._rate(links) if links else self.link_bw,
                                since=now, links=links, hops=len(links), version=0)
        self.byte_hops += float(nbytes) * len(links)
        out = [self._predict(fid)]
        for other in sorted(affected):
            self._flows[other]["rate"] = self._rate(self._flows[other]["links"])
            out.append(self._predict(other))
        return out

    def is_current(self, fid: int, version: int) -> bool:
        f = self._flows.get(fid)
        return f is not None and f["version"] == version

    def finish(self, fid: int, now: float) -> List[Tuple[float, int, int]]:
        f = self._flows.pop(fid)
        affected: Set[int] = set()
        for l in f["links"]:
            group = self._link_flows[l]
            group.discard(fid)
            affected |= group
            if not group:
                del self._link_flows[l]
        out = []
        for other in sorted(affected):
            self._settle(other, now)
            self._flows[other]["rate"] = self._rate(self._flows[other]["links"])
            out.append(self._predict(other))
        return out

    def serialization_done(self, fid: int, now: float) -> bool:
        f = self._flows[fid]
        return f["remaining"] - f["rate"] * (now - f["since"]) <= 1e-9


def link_dependency_acyclic(topology: NocTopology, grid: Tuple[int, int]) -> bool:
    """Checks the channel dependency graph of XY routing for cycles."""
    rows, cols = grid
    edges: Dict[Link, Set[Link]] = {}
    coords = [(r, c) for r in range(rows) for c in range(cols)]
    for s in coords:
        for d in coords:
            links = route(s, d, topology, grid).links
            for a, b in zip(links, links[1:]):
                edges.setdefault(a, set()).add(b)
    state: Dict[Link, int] = {}
    for root in list(edges):
        if state.get(root):
            continue
        stack = [(root, iter(edges.get(root, ())))]
        state[root] = 1
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                state[node] = 2
                stack.pop()
            elif state.get(nxt) == 1:
                return False
            elif not state.get(nxt):
                state[nxt] = 1
                stack.append((nxt, iter(edges.get(nxt, ()))))
    return True
