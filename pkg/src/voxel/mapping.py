"""Tile-to-core mapping and tensor-to-bank placement."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

from .chipspec import ChipSpec, NocTopology, derive_geometry
from .graph import DramRef, DramSpan, ExecutionGraph, GraphError, Tensor, TensorRegion
from .noc_model import hops

Coord = Tuple[int, int]


@dataclass(frozen=True)
class CoreMap:
    """Tile index -> (wave, grid coordinate)."""

    coords: Tuple[Coord, ...]
    waves: Tuple[int, ...]
    grid: Tuple[int, int]

    def core(self, tile: int) -> int:
        r, c = self.coords[tile]
        return r * self.grid[1] + c

    def cores(self) -> List[int]:
        return [self.core(i) for i in range(len(self.coords))]

    def __len__(self) -> int:
        return len(self.coords)


def map_sequential(n_tiles: int, spec: ChipSpec) -> CoreMap:
    """Row-major, next free core; tiles beyond the core count start a new wave."""
    geo = derive_geometry(spec, warn=False)
    coords, waves = [], []
    for i in range(n_tiles):
        core = i % spec.num_cores
        coords.append(geo.coord(core))
        waves.append(i // spec.num_cores)
    return CoreMap(tuple(coords), tuple(waves), (geo.grid_rows, geo.grid_cols))


def folded_order(n: int) -> List[int]:
    """Path positions visited by a ring of n: 0, 2, 4, ..., then odd positions descending."""
    return list(range(0, n, 2)) + list(range(n - 1 - (n % 2 == 1), 0, -2))


def _serpentine(row0: int, nrows: int, cols: int) -> List[Coord]:
    path = []
    for k in range(nrows):
        cs = range(cols) if k % 2 == 0 else range(cols - 1, -1, -1)
        path += [(row0 + k, c) for c in cs]
    return path


def map_dimension_ordered(rings: Sequence[Sequence[int]], spec: ChipSpec) -> CoreMap:
    """Place each sharing ring along grid rows so ring neighbours are at most 2 hops apart.

    A ring that fits in a row uses that row; a longer one is laid along a
    serpentine over as many adjacent rows as it needs. In both cases the
    ring visits the path in folded order. Rings that do not fit in the
    remaining rows start a new wave.
    """
    geo = derive_geometry(spec, warn=False)
    rows, cols = geo.grid_rows, geo.grid_cols
    n_tiles = sum(len(r) for r in rings)
    coords: List[Optional[Coord]] = [None] * n_tiles
    waves = [0] * n_tiles
    row, wave = 0, 0
    for ring in rings:
        need = -(-len(ring) // cols)
        if need > rows:
            raise GraphError(f"ring of {len(ring)} tiles exceeds the {rows}x{cols} grid")
        if row + need > rows:
            row, wave = 0, wave + 1
        path = _serpentine(row, need, cols)[:len(ring)]
        for tile, pos in zip(ring, folded_order(len(ring))):
            if coords[tile] is not None:
                raise GraphError(f"tile {tile} appears in two rings")
            coords[tile] = path[pos]
            waves[tile] = wave
        row += need
    if any(c is None for c in coords):
        raise GraphError("rings must cover tile ids 0..n-1")
    return CoreMap(tuple(coords), tuple(waves), (rows, cols))


def ring_hops(coords: Sequence[Coord], topology: NocTopology, grid: Tuple[int, int]) -> List[int]:
    n = len(coords)
    if n < 2:
        return []
    return [hops(coords[i], coords[(i + 1) % n], topology, grid) for i in range(n)]


def ring_cores(length: int, spec: ChipSpec, ordered: bool = True, row: int = 0) -> List[int]:
    """Core ids of one ring in ring order, dimension-ordered or sequential."""
    geo = derive_geometry(spec, warn=False)
    cols = geo.grid_cols
    if not ordered:
        start = row * cols
        return [(start + i) % spec.num_cores for i in range(length)]
    path = _serpentine(row, -(-length // cols), cols)[:length]
    return [path[pos][0] * cols + path[pos][1] for pos in folded_order(length)]


class RingPolicy:
    """Core chooser for auto-assigned tiles: consecutive tiles fill rings in folded order."""

    def __init__(self, spec: ChipSpec, ring: int, ordered: bool = True) -> None:
        geo = derive_geometry(spec, warn=False)
        self.num_cores = spec.num_cores
        self.ring = ring
        rows_per_ring = -(-ring // geo.grid_cols)
        self.table: List[int] = []
        per_wave = max(1, geo.grid_rows // rows_per_ring)
        for k in range(per_wave):
            self.table += ring_cores(ring, spec, ordered, k * rows_per_ring)

    def __call__(self, index: int) -> int:
        return self.table[index % len(self.table)]


# -- placement ---------------------------------------------------------------

class PlacementError(GraphError):
    def __init__(self, msg: str, tensor: int = -1) -> None:
        super().__init__(msg)
        self.tensor = tensor


@dataclass
class PlacementPlan:
    policy: str
    pieces: Dict[Tuple[int, int], Tuple[Tuple[int, int, int], ...]]
    banks: Dict[int, Set[Tuple[int, int]]]
    groups: Tuple[Tuple[int, ...], ...] = ()
    part_count: Dict[int, int] = field(default_factory=dict)

    def part_pieces(self, tensor: int, part: int):
        if part >= 0:
            return self.pieces[(tensor, part)]
        out = []
        for p in range(self.part_count[tensor]):
            out += self.pieces[(tensor, p)]
        return tuple(out)

    def resolve(self, region: TensorRegion) -> DramSpan:
        loc = region.location
        if not isinstance(loc, DramRef):
            raise PlacementError(f"region {region.id} is not in DRAM")
        want_lo, want_hi = loc.offset, loc.offset + region.size_bytes
        out = []
        pos = 0
        for ch, addr, n in self.part_pieces(loc.tensor, loc.part):
            lo, hi = max(pos, want_lo), min(pos + n, want_hi)
            if lo < hi:
                out.append((ch, addr + lo - pos, hi - lo))
            pos += n
            if pos >= want_hi:
                break
        return DramSpan(tuple(out))


class _Banks:
    """Per-(channel, bank) row-aligned bump allocator."""

    def __init__(self, spec: ChipSpec) -> None:
        geo = derive_geometry(spec, warn=False)
        self.bpc = geo.banks_per_channel
        self.bank_bytes = geo.bank_bytes
        self.row = spec.dram_row_bytes
        self.iface = spec.dram_interface
        self.cursor: Dict[Tuple[int, int], int] = defaultdict(int)

    def take(self, channel: int, bank: int, nbytes: int, what: str) -> Tuple[int, int, int]:
        start = self.cursor[(channel, bank)]
        size = -(-nbytes // self.row) * self.row
        if start + size > self.bank_bytes:
            raise PlacementError(f"{what}: bank {bank} of channel {channel} is full")
        self.cursor[(channel, bank)] = start + size
        return channel, bank * self.bank_bytes + start, nbytes

    def stripe(self, channel: int, banks: Sequence[int], nbytes: int, what: str):
        chunk = -(-nbytes // len(banks))
        chunk = -(-chunk // self.iface) * self.iface
        out, left = [], nbytes
        for b in banks:
            if left <= 0:
                break
            take = min(chunk, left)
            out.append(self.take(channel, b, take, what))
            left -= take
        return tuple(out)


def _layout(tensors: Sequence[Tensor], spec: ChipSpec, banks_for, policy: str,
            groups=()) -> PlacementPlan:
    alloc = _Banks(spec)
    pieces, used = {}, defaultdict(set)
    for t in sorted(tensors, key=lambda t: t.id):
        bs = banks_for(t, alloc.bpc)
        for p, (nb, home) in enumerate(zip(t.part_bytes, t.homes)):
            ch = home % spec.num_cores
            try:
                pieces[(t.id, p)] = alloc.stripe(ch, bs, nb, t.name or f"tensor {t.id}")
            except PlacementError as err:
                raise PlacementError(str(err), t.id) from None
            used[t.id].update((ch, b) for b in bs)
    return PlacementPlan(policy, pieces, dict(used), tuple(groups), {t.id: t.parts for t in tensors})


def place_uniform(tensors: Sequence[Tensor], spec: ChipSpec) -> PlacementPlan:
    """Every tensor part striped over all banks of its home channel."""
    return _layout(tensors, spec, lambda t, bpc: list(range(bpc)), "uniform")


def place_interleaved(tensors: Sequence[Tensor], spec: ChipSpec) -> PlacementPlan:
    """Consecutively allocated tensors take consecutive, disjoint bank runs sized by tensor size."""
    order = sorted(tensors, key=lambda t: t.id)
    total = sum(t.nbytes for t in order) or 1
    runs: Dict[int, List[int]] = {}
    cursor = 0
    bpc = derive_geometry(spec, warn=False).banks_per_channel
    for t in order:
        nb = min(bpc, max(1, (bpc * t.nbytes) // total))
        runs[t.id] = [(cursor + i) % bpc for i in range(nb)]
        cursor = (cursor + nb) % bpc
    return _layout(order, spec, lambda t, _bpc: runs[t.id], "interleaved")


def concurrency_groups(graph: ExecutionGraph) -> List[Tuple[int, ...]]:
    """DRAM tensors accessed together.

    All DRAM tensors of one compute are concurrent, and so are a compute's
    output and the next compute's inputs on the same core. Groups declared
    in the plan are added as given.
    """
    groups: Set[Tuple[int, ...]] = set(g for g in graph.concurrency if len(g) > 1)
    prev_out: Dict[int, Set[int]] = {}
    for e in graph.events:
        if e.kind != "compute":
            continue
        ins = {r.location.tensor for r in e.tile.inputs if r.in_dram}
        out = {e.tile.output.location.tensor} if e.tile.output is not None and e.tile.output.in_dram else set()
        g = ins | out
        if len(g) > 1:
            groups.add(tuple(sorted(g)))
        chain = prev_out.get(e.core, set()) | ins
        if len(chain) > 1 and prev_out.get(e.core):
            groups.add(tuple(sorted(chain)))
        prev_out[e.core] = out
    return sorted(groups)


def color_tensors(tensors: Sequence[int], groups: Iterable[Tuple[int, ...]]) -> Dict[int, int]:
    """Greedy colouring, lowest tensor id first, lowest free colour."""
    adj: Dict[int, Set[int]] = defaultdict(set)
    for g in groups:
        for a in g:
            adj[a].update(x for x in g if x != a)
    color: Dict[int, int] = {}
    for t in sorted(tensors):
        taken = {color[n] for n in adj[t] if n in color}
        c = 0
        while c in taken:
            c += 1
        color[t] = c
    return color


def place_software_aware(tensors: Sequence[Tensor], graph: ExecutionGraph, spec: ChipSpec) -> PlacementPlan:
    """Concurrently accessed tensors go to disjoint banks of each channel.

    With K colours and K <= banks per channel, colour k owns banks
    ``b = k (mod K)``; with more colours than banks, colours share banks
    round-robin like the interleaved policy.
    """
    groups = concurrency_groups(graph)
    color = color_tensors([t.id for t in tensors], groups)
    bpc = derive_geometry(spec, warn=False).banks_per_channel
    k = max(color.values(), default=0) + 1

    def banks_for(t: Tensor, _bpc: int) -> List[int]:
        c = color[t.id]
        if k <= bpc:
            return [b for b in range(bpc) if b % k == c]
        return [c % bpc]

    try:
        return _layout(tensors, spec, banks_for, "software-aware", groups)
    except PlacementError as err:
        bad = [g for g in groups if err.tensor in g]
        raise PlacementError(f"{err}; concurrency group {bad[0] if bad else (err.tensor,)} "
                             "cannot be placed", err.tensor) from None


POLICIES = ("uniform", "interleaved", "software-aware")


def place(policy: str, graph: ExecutionGraph, spec: ChipSpec) -> PlacementPlan:
    tensors = list(graph.tensors.values())
    policy = policy.lower().replace("_", "-")
    if policy == "uniform":
        return place_uniform(tensors, spec)
    if policy == "interleaved":
        return place_interleaved(tensors, spec)
    if policy in ("software-aware", "sw-aware"):
        return place_software_aware(tensors, graph, spec)
    raise ValueError(f"unknown placement policy {policy!r}; choose from {', '.join(POLICIES)}")
