"""Plan interface and execution graph.

A plan is built with :class:`GraphBuilder` through four calls: ``compute``,
``movedata``, ``sync`` and ``collective``. ``finalize`` checks the result
and returns an immutable :class:`ExecutionGraph` for the engine.

DRAM tensors are declared logically (bytes per part plus the core each part
is meant for); addresses are assigned later by a placement policy. SRAM
regions get offsets from a first-fit allocator per core.
"""

from __future__ import annotations

import heapq
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

DTYPE_BYTES = {"bf16": 2, "fp16": 2, "fp32": 4, "int8": 1}


class GraphError(ValueError):
    pass


class OverCommit(GraphError):
    pass


class CycleError(GraphError):
    def __init__(self, cycle: Sequence[int]) -> None:
        super().__init__(f"dependency cycle: {' -> '.join(map(str, cycle))}")
        self.cycle = tuple(cycle)


@dataclass(frozen=True)
class Tensor:
    """A logical DRAM tensor split into parts, each meant for a home core."""

    id: int
    name: str
    part_bytes: Tuple[int, ...]
    homes: Tuple[int, ...]
    dtype: str = "bf16"

    @property
    def nbytes(self) -> int:
        return sum(self.part_bytes)

    @property
    def parts(self) -> int:
        return len(self.part_bytes)


@dataclass(frozen=True)
class DramRef:
    """Bytes [offset, offset+size) of one part of a DRAM tensor; part -1 is the whole tensor."""

    tensor: int
    part: int
    offset: int = 0


@dataclass(frozen=True)
class CoreSram:
    core: int
    offset: int


@dataclass(frozen=True)
class DramSpan:
    """Resolved DRAM location: ``(channel, address, nbytes)`` pieces in byte order."""

    pieces: Tuple[Tuple[int, int, int], ...]

    @property
    def channels(self) -> Tuple[int, ...]:
        return tuple(sorted({p[0] for p in self.pieces}))

    @property
    def nbytes(self) -> int:
        return sum(p[2] for p in self.pieces)


Location = Union[DramRef, CoreSram]


@dataclass(frozen=True)
class TensorRegion:
    id: int
    shape: Tuple[int, ...]
    dtype: str
    location: Location
    name: str = ""

    @property
    def numel(self) -> int:
        return math.prod(self.shape)

    @property
    def size_bytes(self) -> int:
        return self.numel * DTYPE_BYTES[self.dtype]

    @property
    def in_dram(self) -> bool:
        return isinstance(self.location, DramRef)

    @property
    def core(self) -> int:
        return self.location.core if isinstance(self.location, CoreSram) else -1


OP_ARITY = {"matmul": 3, "elementwise": 2, "softmax": 2, "reduce": 1}


@dataclass(frozen=True)
class OpTile:
    """``op`` is ``("matmul", M, K, N)``, ``("elementwise", n, fused)``,
    ``("softmax", rows, cols)`` or ``("reduce", n)``."""

    op: Tuple
    inputs: Tuple[TensorRegion, ...] = ()
    output: Optional[TensorRegion] = None

    def __post_init__(self) -> None:
        kind = self.op[0] if self.op else None
        if kind not in OP_ARITY or len(self.op) != OP_ARITY[kind] + 1:
            raise GraphError(f"bad op {self.op!r}")
        if any(int(d) < 0 for d in self.op[1:]):
            raise GraphError(f"negative dimension in {self.op!r}")
        if kind == "elementwise" and self.op[2] < 1:
            raise GraphError("fused_input_count must be >= 1")
        expect_in, expect_out = self._expected_sizes()
        for r, want in zip(self.inputs, expect_in):
            if want is not None and r.numel != want:
                raise GraphError(f"{kind} input {r.name or r.id} has {r.numel} elements, expected {want}")
        if self.output is not None and self.output.numel != expect_out:
            raise GraphError(f"{kind} output has {self.output.numel} elements, expected {expect_out}")

    def _expected_sizes(self):
        kind = self.op[0]
        if kind == "matmul":
            _, m, k, n = self.op
            return (m * k, k * n), m * n
        if kind == "elementwise":
            n = self.op[1]
            return (n,) * self.op[2], n
        if kind == "softmax":
            n = self.op[1] * self.op[2]
            return (n,), n
        n = self.op[1]
        return (n, n), n


@dataclass(frozen=True)
class Event:
    id: int
    kind: str                       # "compute" | "movedata" | "sync"
    deps: Tuple[int, ...] = ()
    core: int = -1
    tile: Optional[OpTile] = None
    src: Optional[TensorRegion] = None
    dst: Optional[TensorRegion] = None
    label: str = ""


@dataclass(frozen=True)
class ExecutionGraph:
    events: Tuple[Event, ...]
    tensors: Dict[int, Tensor]
    static_sram: Dict[int, int]
    num_cores: int
    concurrency: Tuple[Tuple[int, ...], ...] = ()

    def __len__(self) -> int:
        return len(self.events)

    @property
    def roots(self) -> List[int]:
        return [e.id for e in self.events if not e.deps]

    def topo_order(self) -> List[int]:
        return topological_order(self.events)

    def producers(self) -> Dict[int, List[int]]:
        """Event ids writing each DRAM tensor, in creation order."""
        out: Dict[int, List[int]] = defaultdict(list)
        for e in self.events:
            for r in _written(e):
                if r.in_dram:
                    out[r.location.tensor].append(e.id)
        return dict(out)


def _written(e: Event) -> Tuple[TensorRegion, ...]:
    if e.kind == "compute" and e.tile.output is not None:
        return (e.tile.output,)
    if e.kind == "movedata":
        return (e.dst,)
    return ()


def topological_order(events: Sequence[Event]) -> List[int]:
    ids = {e.id for e in events}
    indeg = {e.id: 0 for e in events}
    users: Dict[int, List[int]] = defaultdict(list)
    for e in events:
        for d in e.deps:
            if d not in ids:
                raise GraphError(f"event {e.id} depends on unknown event {d}")
            indeg[e.id] += 1
            users[d].append(e.id)
    ready = sorted(i for i, n in indeg.items() if n == 0)
    order: List[int] = []
    heapq.heapify(ready)
    while ready:
        i = heapq.heappop(ready)
        order.append(i)
        for u in users[i]:
            indeg[u] -= 1
            if indeg[u] == 0:
                heapq.heappush(ready, u)
    if len(order) != len(events):
        raise CycleError(_find_cycle({e.id: e.deps for e in events}, set(order)))
    return order


def _find_cycle(deps: Dict[int, Tuple[int, ...]], done: set) -> List[int]:
    color: Dict[int, int] = {}
    for root in sorted(deps):
        if root in done or color.get(root):
            continue
        path = [root]
        stack = [iter(deps[root])]
        color[root] = 1
        while stack:
            nxt = next(stack[-1], None)
            if nxt is None:
                color[path.pop()] = 2
                stack.pop()
            elif color.get(nxt) == 1:
                return path[path.index(nxt):] + [nxt]
            elif not color.get(nxt) and nxt not in done:
                color[nxt] = 1
                path.append(nxt)
                stack.append(iter(deps[nxt]))
    return []


class _FirstFit:
    def __init__(self, capacity: int) -> None:
        self.capacity = capacity
        self.used: List[Tuple[int, int]] = []
        self.peak = 0

    @property
    def live(self) -> int:
        return sum(s for _, s in self.used)

    def alloc(self, size: int) -> int:
        pos = 0
        for off, s in sorted(self.used):
            if off - pos >= size:
                break
            pos = max(pos, off + s)
        if pos + size > self.capacity:
            raise OverCommit(f"SRAM region of {size} B does not fit ({self.live} B live of {self.capacity} B)")
        self.used.append((pos, size))
        self.peak = max(self.peak, self.live)
        return pos

    def free(self, offset: int, size: int) -> None:
        self.used.remove((offset, size))


COLLECTIVES = ("allreduce", "allgather", "broadcast", "reducescatter")


class GraphBuilder:
    """Single-writer builder for an execution graph."""

    def __init__(self, spec, core_policy=None) -> None:
        self.spec = spec
        self.num_cores = spec.num_cores
        self.dtype = "bf16" if spec.dtype_bytes == 2 else {4: "fp32", 1: "int8"}[spec.dtype_bytes]
        self.core_policy = core_policy
        self._events: List[Event] = []
        self._extra_deps: Dict[int, List[int]] = defaultdict(list)
        self._tensors: Dict[int, Tensor] = {}
        self._regions = 0
        self._sram = {c: _FirstFit(spec.sram_per_core) for c in range(spec.num_cores)}
        self._auto_core = 0
        self._groups: List[Tuple[int, ...]] = []
        self.last_outputs: List[TensorRegion] = []

    # -- declarations -------------------------------------------------------

    def dram_tensor(self, name: str, part_bytes: Sequence[int], homes: Sequence[int],
                    dtype: Optional[str] = None) -> Tensor:
        if len(part_bytes) != len(homes) or not part_bytes:
            raise GraphError("need one home core per part")
        for h in homes:
            self._check_core(h)
        t = Tensor(len(self._tensors), name, tuple(int(b) for b in part_bytes), tuple(homes),
                   dtype or self.dtype)
        self._tensors[t.id] = t
        return t

    def region(self, tensor: Union[Tensor, int], part: int = -1, offset: int = 0,
               shape: Optional[Tuple[int, ...]] = None) -> TensorRegion:
        tid = tensor.id if isinstance(tensor, Tensor) else tensor
        if tid not in self._tensors:
            raise GraphError(f"unknown tensor id {tid}")
        t = self._tensors[tid]
        span = t.nbytes if part == -1 else t.part_bytes[part]
        esize = DTYPE_BYTES[t.dtype]
        if shape is None:
            shape = ((span - offset) // esize,)
        r = self._new_region(shape, t.dtype, DramRef(tid, part, offset), t.name)
        if offset < 0 or offset + r.size_bytes > span:
            raise GraphError(f"region [{offset}, {offset + r.size_bytes}) outside {t.name} part {part}")
        return r

    def sram_region(self, core: int, shape: Tuple[int, ...], name: str = "",
                    dtype: Optional[str] = None) -> TensorRegion:
        self._check_core(core)
        dt = dtype or self.dtype
        size = math.prod(shape) * DTYPE_BYTES[dt]
        off = self._sram[core].alloc(size)
        return self._new_region(tuple(shape), dt, CoreSram(core, off), name)

    def event(self, eid: int) -> Event:
        return self._events[eid]

    def sram_live(self, core: int) -> int:
        """Bytes of SRAM currently allocated on ``core``."""
        return self._sram[core].live

    def release(self, region: TensorRegion) -> None:
        if not isinstance(region.location, CoreSram):
            raise GraphError("only SRAM regions are released")
        self._sram[region.core].free(region.location.offset, region.size_bytes)

    def slice(self, region: TensorRegion, start: int, count: int) -> TensorRegion:
        """Elements [start, start+count) of a region as a new region at the same place."""
        if start < 0 or start + count > region.numel:
            raise GraphError("slice outside region")
        b = DTYPE_BYTES[region.dtype] * start
        loc = region.location
        loc = CoreSram(loc.core, loc.offset + b) if isinstance(loc, CoreSram) else \
            DramRef(loc.tensor, loc.part, loc.offset + b)
        return self._new_region((count,), region.dtype, loc, region.name)

    def _new_region(self, shape, dtype, loc, name) -> TensorRegion:
        r = TensorRegion(self._regions, tuple(int(s) for s in shape), dtype, loc, name)
        self._regions += 1
        return r

    def _check_core(self, core: int) -> None:
        if not 0 <= core < self.num_cores:
            raise GraphError(f"core {core} not in grid of {self.num_cores}")

    def _check_deps(self, deps: Iterable[int]) -> Tuple[int, ...]:
        out = tuple(sorted(set(int(d) for d in deps)))
        for d in out:
            if not 0 <= d < len(self._events):
                raise GraphError(f"unknown event id {d}")
        return out

    def _add(self, **kw) -> int:
        eid = len(self._events)
        self._events.append(Event(id=eid, **kw))
        return eid

    # -- plan calls ---------------------------------------------------------

    def compute(self, tile: OpTile, core: Optional[int] = None, deps: Iterable[int] = (),
                label: str = "") -> int:
        if core is None:
            core = self.core_policy(self._auto_core) if self.core_policy else self._auto_core % self.num_cores
            self._auto_core += 1
        self._check_core(core)
        fetched = sum(r.size_bytes for r in tile.inputs if r.in_dram or r.core != core)
        room = self.spec.sram_per_core - self._sram[core].live
        if fetched > room:
            raise OverCommit(f"tile needs {fetched} B of SRAM on core {core}, {room} B free")
        for r in tile.inputs:
            self._known(r)
        if tile.output is not None:
            self._known(tile.output)
        return self._add(kind="compute", deps=self._check_deps(deps), core=core, tile=tile, label=label)

    def movedata(self, src: Optional[TensorRegion], dst: TensorRegion, deps: Iterable[int] = (),
                 label: str = "") -> int:
        self._known(dst)
        if src is not None:
            self._known(src)
            if src.size_bytes != dst.size_bytes:
                raise GraphError(f"movedata size mismatch: {src.size_bytes} B -> {dst.size_bytes} B")
        return self._add(kind="movedata", deps=self._check_deps(deps), src=src, dst=dst,
                         core=dst.core if src is None or not isinstance(src.location, CoreSram) else src.core,
                         label=label)

    def place(self, tensor: Tensor) -> int:
        """Initial placement of a whole DRAM tensor (zero cost)."""
        return self.movedata(None, self.region(tensor))

    def sync(self, participants: Iterable[int], label: str = "") -> int:
        deps = self._check_deps(participants)
        if not deps:
            raise GraphError("sync over an empty participant set")
        return self._add(kind="sync", deps=deps, label=label)

    def add_dep(self, event: int, dep: int) -> None:
        self._check_deps((event, dep))
        self._extra_deps[event].append(dep)

    def concurrent(self, tensors: Iterable[Union[Tensor, int]]) -> None:
        """Declare DRAM tensors that are accessed concurrently beyond what single ops show."""
        self._groups.append(tuple(sorted({t.id if isinstance(t, Tensor) else t for t in tensors})))

    def _known(self, r: TensorRegion) -> None:
        if r.in_dram and r.location.tensor not in self._tensors:
            raise GraphError(f"unknown tensor id {r.location.tensor}")

    def collective(self, kind: str, regions: Sequence[TensorRegion], cores: Sequence[int],
                   deps: Iterable[int] = ()) -> List[int]:
        """Expand a collective into ring-ordered moves and reductions.

        ``cores`` gives the ring order; ``regions[i]`` lives on ``cores[i]``.
        For allgather the regions are the per-core shards and the gathered
        outputs are left in ``last_outputs``.
        """
        kind = kind.lower().replace("_", "").replace("-", "")
        if kind not in COLLECTIVES:
            raise GraphError(f"unknown collective {kind!r}")
        if len(regions) != len(cores) or not cores:
            raise GraphError("need one region per participating core")
        for c, r in zip(cores, regions):
            self._check_core(c)
            if r.core != c:
                raise GraphError(f"region {r.id} is not in SRAM of core {c}")
        if len({r.numel for r in regions}) != 1:
            raise GraphError("collective regions must have equal shapes")
        p = len(cores)
        base = self._check_deps(deps)
        last = {c: base for c in cores}
        out: List[int] = []
        self.last_outputs = list(regions)
        if kind == "broadcast":
            for i in range(p - 1):
                e = self.movedata(regions[i], regions[i + 1], last[cores[i]] + last[cores[i + 1]],
                                  label="bcast")
                last[cores[i + 1]] = (e,)
                out.append(e)
            return out
        n = regions[0].numel
        if kind == "allgather":
            gathered = [self.sram_region(c, (p * n,), name="gather") for c in cores]
            self.last_outputs = gathered
            for i, c in enumerate(cores):
                e = self.movedata(regions[i], self.slice(gathered[i], i * n, n), last[c], label="gather-local")
                last[c] = (e,)
                out.append(e)
            self._ring_gather(gathered, cores, [n] * p, [i * n for i in range(p)], last, out)
            return out
        sizes = [n // p + (1 if i < n % p else 0) for i in range(p)]
        offs = [sum(sizes[:i]) for i in range(p)]
        width = max(sizes)
        scratch = [self.sram_region(c, (width,), name="ring-rx") for c in cores]
        for s in range(p - 1):
            step: Dict[int, Tuple[int, ...]] = {}
            for i, c in enumerate(cores):
                j = (i + 1) % p
                ch = (i - s) % p
                if sizes[ch] == 0:
                    continue
                rx = self.slice(scratch[j], 0, sizes[ch])
                mv = self.movedata(self.slice(regions[i], offs[ch], sizes[ch]), rx,
                                   last[c] + last[cores[j]], label="ring-send")
                acc = self.slice(regions[j], offs[ch], sizes[ch])
                red = self.compute(OpTile(("reduce", sizes[ch]), (rx, acc), acc), cores[j], (mv,),
                                   label="ring-reduce")
                step[cores[j]] = step.get(cores[j], ()) + (red,)
                step[c] = step.get(c, ()) + (mv,)
                out += [mv, red]
            last.update(step)
        for c, r in zip(cores, scratch):
            self.release(r)
        if kind == "allreduce":
            self._ring_gather(list(regions), cores, sizes, offs, last, out, start=1)
        return out

    def _ring_gather(self, bufs, cores, sizes, offs, last, out, start: int = 0) -> None:
        """Each core forwards the chunk it completed last step to its successor."""
        p = len(cores)
        for s in range(p - 1):
            step: Dict[int, Tuple[int, ...]] = {}
            for i, c in enumerate(cores):
                j = (i + 1) % p
                ch = (i + start - s) % p
                if sizes[ch] == 0:
                    continue
                mv = self.movedata(self.slice(bufs[i], offs[ch], sizes[ch]),
                                   self.slice(bufs[j], offs[ch], sizes[ch]),
                                   last[c] + last[cores[j]], label="ring-gather")
                step[cores[j]] = step.get(cores[j], ()) + (mv,)
                step[c] = step.get(c, ()) + (mv,)
                out.append(mv)
            last.update(step)

    # -- finalize -----------------------------------------------------------

    def finalize(self) -> ExecutionGraph:
        if not self._events:
            raise GraphError("empty plan")
        events = []
        for e in self._events:
            extra = self._extra_deps.get(e.id)
            if extra:
                e = Event(e.id, e.kind, tuple(sorted(set(e.deps) | set(extra))), e.core, e.tile,
                          e.src, e.dst, e.label)
            events.append(e)
        topological_order(events)
        return ExecutionGraph(tuple(events), dict(self._tensors),
                              {c: a.peak for c, a in self._sram.items() if a.peak},
                              self.num_cores, tuple(self._groups))


# -- text form --------------------------------------------------------------

def _fmt_region(r: Optional[TensorRegion]) -> str:
    if r is None:
        return "-"
    shape = "x".join(map(str, r.shape))
    loc = r.location
    where = f"sram:{loc.core}:{loc.offset}" if isinstance(loc, CoreSram) else \
        f"dram:{loc.tensor}:{loc.part}:{loc.offset}"
    return f"{r.id}/{shape}/{r.dtype}/{where}"


def _parse_region(s: str) -> Optional[TensorRegion]:
    if s == "-":
        return None
    rid, shape, dtype, where = s.split("/")
    parts = where.split(":")
    loc = CoreSram(int(parts[1]), int(parts[2])) if parts[0] == "sram" else \
        DramRef(int(parts[1]), int(parts[2]), int(parts[3]))
    return TensorRegion(int(rid), tuple(int(x) for x in shape.split("x")), dtype, loc)


def dump_graph(graph: ExecutionGraph) -> str:
    """One line per event: ``id kind core deps op inputs output/src dst label``."""
    lines = [f"# tensors {len(graph.tensors)}"]
    for t in graph.tensors.values():
        lines.append(f"T {t.id} {t.name or '-'} {t.dtype} " +
                     " ".join(f"{b}@{h}" for b, h in zip(t.part_bytes, t.homes)))
    for e in graph.events:
        deps = ",".join(map(str, e.deps)) or "-"
        if e.kind == "compute":
            op = ",".join(map(str, e.tile.op))
            ins = ";".join(_fmt_region(r) for r in e.tile.inputs) or "-"
            body = f"{op} {ins} {_fmt_region(e.tile.output)}"
        elif e.kind == "movedata":
            body = f"{_fmt_region(e.src)} {_fmt_region(e.dst)}"
        else:
            body = ""
        lines.append(f"E {e.id} {e.kind} {e.core} {deps} {body} {e.label or '-'}".rstrip())
    return "\n".join(lines) + "\n"


def load_graph(text: str, num_cores: int) -> ExecutionGraph:
    tensors: Dict[int, Tensor] = {}
    events: List[Event] = []
    for line in text.splitlines():
        if not line or line.startswith("#"):
            continue
        f = line.split()
        if f[0] == "T":
            pb, homes = zip(*(x.split("@") for x in f[4:]))
            tensors[int(f[1])] = Tensor(int(f[1]), "" if f[2] == "-" else f[2],
                                        tuple(map(int, pb)), tuple(map(int, homes)), f[3])
            continue
        eid, kind, core = int(f[1]), f[2], int(f[3])
        deps = () if f[4] == "-" else tuple(int(x) for x in f[4].split(","))
        label = "" if f[-1] == "-" else f[-1]
        if kind == "compute":
            op = f[5].split(",")
            op = (op[0],) + tuple(int(x) for x in op[1:])
            ins = () if f[6] == "-" else tuple(_parse_region(x) for x in f[6].split(";"))
            tile = OpTile(op, ins, _parse_region(f[7]))
            events.append(Event(eid, kind, deps, core, tile, label=label))
        elif kind == "movedata":
            events.append(Event(eid, kind, deps, core, None, _parse_region(f[5]), _parse_region(f[6]),
                                label))
        else:
            events.append(Event(eid, kind, deps, core, label=label))
    topological_order(events)
    return ExecutionGraph(tuple(events), tensors, {}, num_cores)
