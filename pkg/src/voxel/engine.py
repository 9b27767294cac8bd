"""Event-driven traversal of an execution graph.

Time is kept in core cycles. DRAM channels run on integer DRAM cycles;
request arrivals are rounded up onto the DRAM clock and departures mapped
back.

Each core runs its compute events in program order. DRAM inputs of those
computes are fetched by a per-core pipeline in consumption order; a fetch
reserves its bytes from the core's free SRAM (capacity minus statically
allocated regions), so SRAM size bounds how far ahead fetching runs.
Requests are issued open-loop at the channel's burst rate and queued at
their channel. Because every future request arrives no earlier than the
current time, a channel is simulated up to time ``T`` once the clock
passes ``T``.
"""

from __future__ import annotations

import heapq
import math
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .chipspec import ChipSpec, core_groups, derive_geometry
from .core_model import CostCache
from .dram_model import (READ, WRITE, AddressMap, ChannelState, CoalescingCache, Cursor, DramTiming,
                         RefreshSchedule, Trace, apply_refresh_array, simulate_channel)
from .graph import ExecutionGraph, GraphError
from .mapping import PlacementPlan
from .noc_model import FlowNetwork, hops, route
from .power_thermal import Activity, EnergyConstants, EnergyReport, Throttle, energy_report

CATEGORIES = ("compute", "noc", "dram_access", "row_conflict_stall", "sync_wait")


class DeadlockError(RuntimeError):
    pass


@dataclass
class SimOptions:
    coalesce: bool = True
    refresh: bool = True
    tracker: bool = True
    throttle: bool = True
    density_override: Optional[Callable[[int], float]] = None
    energy: Optional[EnergyConstants] = None
    timeline: bool = False
    cache: Optional[CoalescingCache] = None


@dataclass
class SimReport:
    total_cycles: float
    breakdown: Dict[str, float]
    core_utilization: List[float]
    channel_utilization: List[float]
    energy: EnergyReport
    dram: Dict[str, int]
    coalescing: Dict[str, float]
    noc_bytes: float
    noc_byte_hops: float
    throttled_events: int
    spec_digest: str
    timeline: List[Tuple[int, str, int, float, float]] = field(default_factory=list)
    compute_durations: Dict[int, float] = field(default_factory=dict)
    tracker_spread_ok: bool = True

    def seconds(self, spec: ChipSpec) -> float:
        return self.total_cycles / (spec.core_freq_ghz * 1e9)

    def row(self) -> Dict[str, object]:
        """Flat fields for CSV output."""
        out: Dict[str, object] = {"total_cycles": self.total_cycles}
        for k in CATEGORIES:
            out[k] = self.breakdown[k]
        out["row_conflict_stall"] = self.breakdown["row_conflict_stall"]
        out["mean_core_util"] = float(np.mean(self.core_utilization)) if self.core_utilization else 0.0
        out["mean_channel_util"] = float(np.mean(self.channel_utilization)) if self.channel_utilization else 0.0
        out["energy_j"] = self.energy.total
        for k, v in self.energy.static.items():
            out[f"static_{k}_j"] = v
        for k, v in self.energy.dynamic.items():
            out[f"dynamic_{k}_j"] = v
        out.update({f"dram_{k}": v for k, v in self.dram.items()})
        out["coalesce_hit_rate"] = self.coalescing.get("hit_rate", 0.0)
        out["noc_bytes"] = self.noc_bytes
        out["throttled_events"] = self.throttled_events
        return out


class _Stream:
    __slots__ = ("remaining", "done_t", "on_done", "core", "start")

    def __init__(self, remaining: int, on_done, core: int, start: float) -> None:
        self.remaining = remaining
        self.done_t = start
        self.on_done = on_done
        self.core = core
        self.start = start


class _Chunk:
    """One stream's requests to one channel, sorted by arrival."""

    __slots__ = ("arr", "addr", "op", "ev", "seq", "hop", "stream", "pos", "head")

    def __init__(self, arr, addr, op, ev, seq, hop, stream) -> None:
        self.arr, self.addr, self.op, self.ev, self.seq, self.hop = arr, addr, op, ev, seq, hop
        self.stream = stream
        self.pos = 0
        self.head = int(arr[0])     # arrival of the first unprocessed request


class _Group:
    """Request tracker state for one core group (reads only)."""

    def __init__(self, cores) -> None:
        self.cores = list(cores)
        self.gen: Dict[int, List[tuple]] = {c: [] for c in self.cores}    # undispatched batches
        self.count = {c: 0 for c in self.cores}                           # generated
        self.sent = {c: 0 for c in self.cores}                            # dispatched
        self.arrivals: Dict[int, List[np.ndarray]] = {c: [] for c in self.cores}
        self.m = np.zeros(0, np.int64)                                    # running max per index
        self.dispatched: Dict[int, List[np.ndarray]] = {c: [] for c in self.cores}
        self.enabled = True


class Engine:
    def __init__(self, graph: ExecutionGraph, spec: ChipSpec, placement: Optional[PlacementPlan],
                 options: Optional[SimOptions] = None) -> None:
        self.g = graph
        self.spec = spec
        self.place = placement
        self.opt = options or SimOptions()
        self.geo = derive_geometry(spec, warn=False)
        self.grid = (self.geo.grid_rows, self.geo.grid_cols)
        self.ratio = spec.dram_freq_ghz / spec.core_freq_ghz
        self.timing = DramTiming.from_spec(spec, self.geo)
        self.amap = AddressMap.from_spec(spec, self.geo)
        self.beats = self.timing.burst_beats
        self.iface = spec.dram_interface
        self.refresh = RefreshSchedule.from_spec(spec, self.geo) if self.opt.refresh else None
        self.cache = self.opt.cache or CoalescingCache(self.timing, self.amap)
        self.cache_stats0 = (self.cache.lookups, self.cache.hits)
        self.costs = CostCache()
        self.k = self.opt.energy or EnergyConstants.load()
        self.throttle = Throttle(spec, self.k, self.opt.density_override) if self.opt.throttle else None
        self.net = FlowNetwork(spec.noc_link_bw, spec.noc_hop_latency)

        n = len(graph.events)
        self.heap: List[tuple] = []
        self.seq = 0
        self.now = 0.0
        self.finish: List[Optional[float]] = [None] * n
        self.issue: List[Optional[float]] = [None] * n
        self.pending_deps = [len(e.deps) for e in graph.events]
        self.users: Dict[int, List[int]] = defaultdict(list)
        for e in graph.events:
            for d in e.deps:
                self.users[d].append(e.id)
        self.waiters: Dict[int, List[Callable]] = defaultdict(list)

        # per-core compute program and fetch pipeline
        C = spec.num_cores
        self.program: Dict[int, List[int]] = defaultdict(list)
        self.jobs: Dict[int, List[tuple]] = defaultdict(list)
        self.job_bytes: Dict[int, int] = defaultdict(int)
        self.fetch_left: Dict[int, int] = {}
        writers = self._dram_writers()
        for e in graph.events:
            if e.kind != "compute":
                continue
            self.program[e.core].append(e.id)
            left = 0
            for r in e.tile.inputs:
                if r.in_dram:
                    prods = tuple(w for w, part, lo, hi in writers.get(r.location.tensor, ())
                                  if w < e.id and _overlap(part, lo, hi, r))
                    self.jobs[e.core].append((e.id, r, prods))
                    self.job_bytes[e.id] += r.size_bytes
                    left += 1
                elif r.core != e.core:
                    raise GraphError(f"compute {e.id} reads SRAM of core {r.core}; move it first")
            self.fetch_left[e.id] = left
        self.prog_ptr = {c: 0 for c in self.program}
        self.job_ptr = {c: 0 for c in self.jobs}
        self.pump_blocked: Dict[int, int] = {}
        self.deps_ok = [False] * n
        self.core_free = [0.0] * C
        self.core_busy = [False] * C
        self.pool_cap = [spec.sram_per_core - graph.static_sram.get(c, 0) for c in range(C)]
        self.pool = list(self.pool_cap)
        self.rd_cursor = [0] * C
        self.wr_cursor = [0] * C

        # DRAM channels
        # per channel: heap of (next arrival, first seq, chunk) for chunks with pending requests
        self.chunks: Dict[int, List[tuple]] = defaultdict(list)
        self.ch_cursor: Dict[int, Cursor] = {}
        self.ch_state: Dict[int, ChannelState] = {}
        self.req_seq = 0
        self.ch_stall = np.zeros(C, np.int64)
        self.ch_busy = np.zeros(C, np.int64)
        self.kinds = np.zeros(3, np.int64)
        self.requests = 0

        # core groups and trackers
        self.group_of: Dict[int, _Group] = {}
        if self.opt.tracker and spec.core_group_size > 1:
            counts = self._static_read_counts(writers)
            for cores in core_groups(spec):
                grp = _Group(cores)
                if len({counts.get(c, 0) for c in cores}) > 1:
                    grp.enabled = False
                    warnings.warn(f"core group {cores[0]}..{cores[-1]} has uneven DRAM request counts; "
                                  "request tracker disabled for it", RuntimeWarning)
                    continue
                for c in cores:
                    self.group_of[c] = grp

        # NoC ports and flows
        self.out_free = [True] * C
        self.in_free = [True] * C
        self.port_wait: List[Tuple[float, int]] = []
        self.flow_cb: Dict[int, Callable] = {}
        self.flow_ids = 0
        self.noc_bytes = 0.0

        # accounting
        self.iv: Dict[str, List[List[Tuple[float, float]]]] = {
            k: [[] for _ in range(C)] for k in ("compute", "noc", "dram")}
        self.act = Activity()
        self.event_act: Dict[int, Activity] = {}
        self.throttled = 0
        self.durations: Dict[int, float] = {}

    # -- static analysis -----------------------------------------------------

    def _dram_writers(self):
        out = defaultdict(list)
        for e in self.g.events:
            r = e.dst if e.kind == "movedata" else (e.tile.output if e.kind == "compute" else None)
            if r is not None and r.in_dram:
                loc = r.location
                out[loc.tensor].append((e.id, loc.part, loc.offset, loc.offset + r.size_bytes))
        return out

    def _bursts(self, span) -> int:
        total = 0
        for _, addr, n in span.pieces:
            first = addr - addr % self.iface
            total += -(-(addr + n - first) // self.iface)
        return total

    def _static_read_counts(self, writers) -> Dict[int, int]:
        counts: Dict[int, int] = defaultdict(int)
        if self.place is None:
            return counts
        for e in self.g.events:
            regs = []
            if e.kind == "compute":
                regs = [r for r in e.tile.inputs if r.in_dram]
                core = e.core
            elif e.kind == "movedata" and e.src is not None and e.src.in_dram and not e.dst.in_dram:
                regs, core = [e.src], e.dst.core
            for r in regs:
                counts[core] += self._bursts(self.place.resolve(r))
        return counts

    # -- event queue ---------------------------------------------------------

    def _at(self, t: float, prio: int, key: int, fn, *args) -> None:
        self.seq += 1
        heapq.heappush(self.heap, (t, prio, key, self.seq, fn, args))

    def run(self) -> SimReport:
        for e in self.g.events:
            if not e.deps:
                self._at(0.0, 1, e.id, self._ready, e.id)
        for c in self.jobs:
            self._at(0.0, 1, -1, self._pump, c)
        while True:
            while self.heap:
                t, _, _, _, fn, args = heapq.heappop(self.heap)
                self.now = t
                fn(*args)
            if any(f is None for f in self.finish):
                if self._flush_trackers():
                    continue
                blocked = [i for i, f in enumerate(self.finish) if f is None][:10]
                raise DeadlockError(f"no issuable events; blocked: {blocked}")
            break
        return self._report()

    def _complete(self, eid: int) -> None:
        self.finish[eid] = self.now
        for u in self.users.get(eid, ()):
            self.pending_deps[u] -= 1
            if self.pending_deps[u] == 0:
                self._at(self.now, 1, u, self._ready, u)
        for fn in self.waiters.pop(eid, ()):
            fn()

    def _ready(self, eid: int) -> None:
        e = self.g.events[eid]
        if e.kind == "sync":
            self.issue[eid] = self.now
            self._complete(eid)
        elif e.kind == "compute":
            self.deps_ok[eid] = True
            self._try_core(e.core)
        else:
            self.issue[eid] = self.now
            self._movedata(e)

    # -- compute -------------------------------------------------------------

    def _try_core(self, c: int) -> None:
        if self.core_busy[c]:
            return
        prog = self.program[c]
        i = self.prog_ptr[c]
        if i >= len(prog):
            return
        eid = prog[i]
        if not self.deps_ok[eid] or self.fetch_left[eid]:
            return
        e = self.g.events[eid]
        self.prog_ptr[c] = i + 1
        spec = self.spec
        cost = self.costs.op_cost(e.tile.op, spec.sa_width, spec.vector_lanes, spec.dtype_bytes)
        act = Activity(macs=cost.macs_total, vector_ops=cost.vector_ops,
                       sram_bytes=cost.sram_bytes_read + cost.sram_bytes_written)
        self.act.add(act)
        cycles = float(cost.cycles)
        if self.throttle is not None:
            fetched = self.job_bytes.get(eid, 0)
            region = Activity(act.macs, act.vector_ops, act.sram_bytes, 0.0, fetched, fetched)
            f = self.throttle.factor(c, region, cycles)
            if f != 1.0:
                cycles = cycles * f
                self.throttled += 1
        self.durations[eid] = cycles
        self.issue[eid] = self.now
        self.core_busy[c] = True
        end = self.now + cycles
        self.iv["compute"][c].append((self.now, end))
        self._at(end, 0, eid, self._compute_end, eid)

    def _compute_end(self, eid: int) -> None:
        e = self.g.events[eid]
        c = e.core
        self.core_busy[c] = False
        self.pool[c] += self.job_bytes.get(eid, 0)
        out = e.tile.output
        if out is not None and out.in_dram:
            span = self.place.resolve(out)
            self.act.sram_bytes += out.size_bytes
            self._issue(c, span, WRITE, eid, lambda: self._complete(eid))
        else:
            self._complete(eid)
        self._pump(c)
        self._try_core(c)

    def _pump(self, c: int) -> None:
        jobs = self.jobs.get(c)
        if not jobs:
            return
        while self.job_ptr[c] < len(jobs):
            eid, region, prods = jobs[self.job_ptr[c]]
            waiting = next((p for p in prods if self.finish[p] is None), None)
            if waiting is not None:
                if self.pump_blocked.get(c) != waiting:
                    self.pump_blocked[c] = waiting
                    self.waiters[waiting].append(lambda c=c: self._unblock(c))
                return
            need = region.size_bytes
            if need > self.pool[c] and self.pool[c] < self.pool_cap[c]:
                return
            self.pool[c] -= need
            self.job_ptr[c] += 1
            self.act.sram_bytes += need
            span = self.place.resolve(region)
            self._issue(c, span, READ, eid, lambda eid=eid: self._fetched(eid))

    def _unblock(self, c: int) -> None:
        self.pump_blocked.pop(c, None)
        self._pump(c)

    def _fetched(self, eid: int) -> None:
        self.fetch_left[eid] -= 1
        if self.fetch_left[eid] == 0:
            self._try_core(self.g.events[eid].core)

    # -- data movement -------------------------------------------------------

    def _movedata(self, e) -> None:
        src, dst = e.src, e.dst
        done = lambda: self._complete(e.id)
        if src is None:
            done()
        elif src.in_dram and dst.in_dram:
            home = self.place.resolve(src).pieces[0][0] % self.spec.num_cores
            span_w = self.place.resolve(dst)
            self.act.sram_bytes += 2 * src.size_bytes
            self._issue(home, self.place.resolve(src), READ, e.id,
                        lambda: self._issue(home, span_w, WRITE, e.id, done))
        elif src.in_dram:
            self.act.sram_bytes += dst.size_bytes
            self._issue(dst.core, self.place.resolve(src), READ, e.id, done)
        elif dst.in_dram:
            self.act.sram_bytes += src.size_bytes
            self._issue(src.core, self.place.resolve(dst), WRITE, e.id, done)
        elif src.core == dst.core:
            self.act.sram_bytes += 2 * src.size_bytes
            self._at(self.now + src.size_bytes / self.spec.sram_write_bw, 0, e.id, self._complete, e.id)
        else:
            self.port_wait.append((self.now, e.id))
            self._try_ports()

    def _try_ports(self) -> None:
        if not self.port_wait:
            return
        self.port_wait.sort()
        keep = []
        for ready, eid in self.port_wait:
            e = self.g.events[eid]
            a, b = e.src.core, e.dst.core
            if self.out_free[a] and self.in_free[b]:
                self.out_free[a] = self.in_free[b] = False
                nbytes = e.src.size_bytes
                self.act.sram_bytes += 2 * nbytes
                start = self.now

                def fin(eid=eid, a=a, b=b, start=start):
                    self.out_free[a] = self.in_free[b] = True
                    self.iv["noc"][a].append((start, self.now))
                    self.iv["noc"][b].append((start, self.now))
                    self._complete(eid)
                    self._try_ports()

                self._flow(a, b, nbytes, fin)
            else:
                keep.append((ready, eid))
        self.port_wait = keep

    def _flow(self, a: int, b: int, nbytes: float, cb) -> None:
        rt = route(self.geo.coord(a), self.geo.coord(b), self.spec.noc_topology, self.grid)
        fid = self.flow_ids
        self.flow_ids += 1
        self.flow_cb[fid] = cb
        self.noc_bytes += nbytes
        self.act.noc_byte_hops += nbytes * rt.hop_count
        for t, f, v in self.net.start(fid, nbytes, rt, self.now):
            self._at(t, 0, -2, self._flow_done, f, v)

    def _flow_done(self, fid: int, version: int) -> None:
        if not self.net.is_current(fid, version):
            return
        for t, f, v in self.net.finish(fid, self.now):
            self._at(t, 0, -2, self._flow_done, f, v)
        self.flow_cb.pop(fid)()

    # -- DRAM streams ---------------------------------------------------------

    def _issue(self, core: int, span, op: int, eid: int, on_done) -> None:
        """Split a span into bursts, pace them from ``core`` and queue them at their channels."""
        iface = self.iface
        addrs, chans = [], []
        for ch, addr, n in span.pieces:
            first = addr - addr % iface
            cnt = -(-(addr + n - first) // iface)
            addrs.append(first + iface * np.arange(cnt, dtype=np.int64))
            chans.append(np.full(cnt, ch % self.spec.num_cores, np.int64))
        addr = np.concatenate(addrs) if addrs else np.zeros(0, np.int64)
        chan = np.concatenate(chans) if chans else np.zeros(0, np.int64)
        total = len(addr)
        if total == 0:
            self._at(self.now, 0, eid, on_done)
            return
        cursor = self.rd_cursor if op == READ else self.wr_cursor
        start = max(math.ceil(self.now * self.ratio - 1e-9), cursor[core])
        arr = start + self.beats * np.arange(total, dtype=np.int64)
        cursor[core] = start + self.beats * total
        nbytes = total * iface
        self.act.dram_bytes += nbytes
        self.act.tsv_bytes += nbytes
        self.requests += total
        self.iv["dram"][core].append((self.now, None))
        ref = len(self.iv["dram"][core]) - 1
        remote = np.unique(chan[chan != core])
        stream = _Stream(total + len(remote), None, core, self.now)

        def finished(stream=stream, core=core, ref=ref):
            s, _ = self.iv["dram"][core][ref]
            self.iv["dram"][core][ref] = (s, self.now)
            on_done()

        stream.on_done = finished
        hop = np.zeros(total, np.float64)
        me = self.geo.coord(core)
        for ch in remote.tolist():
            h = hops(self.geo.coord(ch), me, self.spec.noc_topology, self.grid) * self.spec.noc_hop_latency
            hop[chan == ch] = h
            nb = int(np.count_nonzero(chan == ch)) * iface
            s0 = self.now

            def flow_done(stream=stream, core=core, s0=s0):
                self.iv["noc"][core].append((s0, self.now))
                self._stream_part(stream, self.now)

            a, b = (ch, core) if op == READ else (core, ch)
            self._flow(a, b, nb, flow_done)
        grp = self.group_of.get(core) if op == READ else None
        if grp is not None and grp.enabled:
            self._track(grp, core, (arr, addr, chan, hop, eid, stream))
        else:
            self._dispatch(arr, addr, chan, hop, op, eid, stream)

    def _dispatch(self, arr, addr, chan, hop, op, eid, stream) -> None:
        if len(arr) == 0:
            return
        if len(np.unique(chan)) == 1:
            groups = [(int(chan[0]), slice(None))]
        else:
            groups = [(int(ch), chan == ch) for ch in np.unique(chan)]
        for ch, sel in groups:
            a, ad, hp = arr[sel], addr[sel], hop[sel]
            if self.refresh is not None:
                bank = ad >> self.amap.bank_shift
                a = apply_refresh_array(a, bank, ch, self.refresh,
                                        self.timing.tRCD + self.timing.tCL + self.beats)
                order = np.argsort(a, kind="stable")
                a, ad, hp = a[order], ad[order], hp[order]
            n = len(a)
            seq = self.req_seq + np.arange(n, dtype=np.int64)
            self.req_seq += n
            ops = np.full(n, op, np.int8)
            evs = np.full(n, eid, np.int64)
            ck = _Chunk(a, ad, ops, evs, seq, hp, stream)
            heapq.heappush(self.chunks[ch], (ck.head, int(seq[0]), ck))
            last = int(a[-1])
            self._at(last / self.ratio, 2, ch, self._finalize, ch, last)

    def _finalize(self, ch: int, upto: int) -> None:
        chunks = self.chunks.get(ch)
        if not chunks:
            return
        parts = []
        while chunks and chunks[0][0] <= upto:
            ck = heapq.heappop(chunks)[2]
            end = int(np.searchsorted(ck.arr, upto, side="right"))
            parts.append((ck, ck.pos, end))
        if not parts:
            return
        arr = np.concatenate([ck.arr[s:e] for ck, s, e in parts])
        addr = np.concatenate([ck.addr[s:e] for ck, s, e in parts])
        op = np.concatenate([ck.op[s:e] for ck, s, e in parts])
        ev = np.concatenate([ck.ev[s:e] for ck, s, e in parts])
        seq = np.concatenate([ck.seq[s:e] for ck, s, e in parts])
        order = np.lexsort((seq, ev, arr))
        trace = Trace(addr[order], op[order], arr[order], ev[order])
        if self.opt.coalesce:
            res, self.ch_cursor[ch] = self.cache.run(trace, self.ch_cursor.get(ch))
        else:
            res = simulate_channel(trace, self.ch_state.setdefault(ch, ChannelState()), self.timing, self.amap)
        dep = np.empty(len(order), np.int64)
        dep[order] = res.departure
        self.ch_stall[ch] += int(res.stall.sum())
        self.ch_busy[ch] += len(order) * self.beats
        self.kinds += np.bincount(res.kind, minlength=3)[:3]
        pos = 0
        for ck, s, e in parts:
            d = dep[pos:pos + e - s] / self.ratio + ck.hop[s:e]
            pos += e - s
            ck.pos = e
            if e < len(ck.arr):
                ck.head = int(ck.arr[e])
                heapq.heappush(chunks, (ck.head, int(ck.seq[e]), ck))
            st = ck.stream
            st.done_t = max(st.done_t, float(d.max()))
            st.remaining -= e - s
            if st.remaining == 0:
                self._at(st.done_t, 0, -3, st.on_done)

    def _stream_part(self, stream: _Stream, t: float) -> None:
        stream.done_t = max(stream.done_t, t)
        stream.remaining -= 1
        if stream.remaining == 0:
            self._at(stream.done_t, 0, -3, stream.on_done)

    # -- core-group request tracker ------------------------------------------

    def _track(self, grp: _Group, core: int, batch) -> None:
        arr = batch[0]
        lo = grp.count[core]
        grp.count[core] = lo + len(arr)
        grp.gen[core].append((lo,) + batch)
        grp.arrivals[core].append(arr)
        self._advance(grp)

    def _advance(self, grp: _Group) -> None:
        kmin = min(grp.count.values())
        have = len(grp.m)
        if kmin > have:
            cols = []
            for c in grp.cores:
                flat = np.concatenate(grp.arrivals[c]) if len(grp.arrivals[c]) > 1 else grp.arrivals[c][0]
                cols.append(flat[:kmin - have])
                rest = flat[kmin - have:]
                grp.arrivals[c] = [rest] if len(rest) else []
            top = np.vstack(cols).max(axis=0)
            if have:
                top[0] = max(top[0], grp.m[-1])
            grp.m = np.concatenate([grp.m, np.maximum.accumulate(top)])
        bound = len(grp.m) + 1
        mprev = np.concatenate([[np.iinfo(np.int64).min], grp.m])
        for c in grp.cores:
            while grp.gen[c]:
                lo, arr, addr, chan, hop, eid, stream = grp.gen[c][0]
                hi = lo + len(arr)
                cut = min(hi, bound) - lo
                if cut <= 0:
                    break
                prev = mprev[lo:lo + cut]
                d = np.maximum(arr[:cut], prev)
                assert np.all(d >= prev), "tracker released a request before its predecessors"
                grp.dispatched[c].append(d)
                grp.sent[c] += cut
                self._dispatch(d, addr[:cut], chan[:cut], hop[:cut], READ, eid, stream)
                if cut < len(arr):
                    grp.gen[c][0] = (lo + cut, arr[cut:], addr[cut:], chan[cut:], hop[cut:], eid, stream)
                    break
                grp.gen[c].pop(0)

    def _flush_trackers(self) -> bool:
        flushed = False
        for grp in {id(g): g for g in self.group_of.values()}.values():
            if grp.enabled and any(grp.gen[c] for c in grp.cores):
                warnings.warn(f"core group starting at {grp.cores[0]} issued uneven request counts; "
                              "request tracker disabled for it", RuntimeWarning)
                grp.enabled = False
                for c in grp.cores:
                    for lo, arr, addr, chan, hop, eid, stream in grp.gen[c]:
                        self._dispatch(np.maximum(arr, math.ceil(self.now * self.ratio)), addr, chan,
                                       hop, READ, eid, stream)
                    grp.gen[c] = []
                flushed = True
        return flushed

    def _tracker_ok(self) -> bool:
        ok = True
        for grp in {id(g): g for g in self.group_of.values()}.values():
            if not grp.enabled:
                continue
            per = [np.concatenate(grp.dispatched[c]) if grp.dispatched[c] else np.zeros(0, np.int64)
                   for c in grp.cores]
            n = min(len(p) for p in per)
            if n < 2:
                continue
            stack = np.vstack([p[:n] for p in per])
            ok &= bool(np.all(stack[:, 1:] >= stack.max(axis=0)[:-1]))
        return ok

    # -- report ------------------------------------------------------------

    def _report(self) -> SimReport:
        C = self.spec.num_cores
        total = max((f for f in self.finish if f is not None), default=0.0)
        sums = {k: 0.0 for k in CATEGORIES}
        util = []
        for c in range(C):
            comp, noc, dram, idle = _partition(self.iv["compute"][c], self.iv["noc"][c],
                                               [iv for iv in self.iv["dram"][c] if iv[1] is not None], total)
            sums["compute"] += comp
            sums["noc"] += noc
            sums["dram_access"] += dram
            sums["sync_wait"] += idle
            util.append(comp / total if total > 0 else 0.0)
        breakdown = {k: v / C for k, v in sums.items()}
        breakdown["row_conflict_stall"] = float(self.ch_stall.mean() / self.ratio)
        chan_util = [min(1.0, float(b) / (total * self.ratio)) if total > 0 else 0.0 for b in self.ch_busy]
        looked = self.cache.lookups - self.cache_stats0[0]
        hit = self.cache.hits - self.cache_stats0[1]
        timeline = []
        if self.opt.timeline:
            timeline = [(e.id, e.kind, e.core, self.issue[e.id], self.finish[e.id]) for e in self.g.events]
        return SimReport(
            total_cycles=total,
            breakdown=breakdown,
            core_utilization=util,
            channel_utilization=chan_util,
            energy=energy_report(self.spec, self.k, self.act, total),
            dram={"requests": int(self.requests), "hits": int(self.kinds[0]), "misses": int(self.kinds[1]),
                  "conflicts": int(self.kinds[2]), "stall_cycles": int(self.ch_stall.sum())},
            coalescing={"lookups": looked, "hit_rate": hit / looked if looked else 0.0},
            noc_bytes=self.noc_bytes,
            noc_byte_hops=self.act.noc_byte_hops,
            throttled_events=self.throttled,
            spec_digest=self.spec.digest(),
            timeline=timeline,
            compute_durations=dict(self.durations),
            tracker_spread_ok=self._tracker_ok(),
        )


def _overlap(part: int, lo: int, hi: int, r) -> bool:
    loc = r.location
    if part != loc.part and part != -1 and loc.part != -1:
        return False
    if part != loc.part:
        return True
    return lo < loc.offset + r.size_bytes and loc.offset < hi


def _partition(compute, noc, dram, total: float) -> Tuple[float, float, float, float]:
    """Split [0, total) by priority compute > noc > dram > idle; returns the four lengths."""
    cats = [compute, noc, dram]
    points = {0.0, total}
    for ivs in cats:
        for s, e in ivs:
            points.add(s)
            points.add(e)
    pts = np.array(sorted(points))
    if len(pts) < 2:
        return 0.0, 0.0, 0.0, total
    seg = np.diff(pts)
    taken = np.zeros(len(seg), bool)
    out = []
    for ivs in cats:
        cover = np.zeros(len(pts), np.int64)
        if ivs:
            s = np.searchsorted(pts, [a for a, _ in ivs])
            e = np.searchsorted(pts, [b for _, b in ivs])
            np.add.at(cover, s, 1)
            np.add.at(cover, e, -1)
        on = np.cumsum(cover)[:-1] > 0
        mine = on & ~taken
        out.append(float(seg[mine].sum()))
        taken |= on
    out.append(float(seg[~taken].sum()))
    return tuple(out)


def simulate(graph: ExecutionGraph, spec: ChipSpec, placement: Optional[PlacementPlan] = None,
             options: Optional[SimOptions] = None) -> SimReport:
    return Engine(graph, spec, placement, options).run()
