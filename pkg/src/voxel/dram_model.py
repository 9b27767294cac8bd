"""Per-channel DRAM timing.

Two independent paths compute the same per-request timing:

* :func:`simulate_channel` steps an in-order open-page automaton over
  absolute addresses and timestamps.
* :func:`coalesced_simulate` works on match keys (XOR of consecutive
  addresses, op-type pair, inter-arrival gap) over a state normalized to
  the previous request. Because the normalized state plus the key fully
  determines the next request's timing, results are memoized per
  transition and per fixed-length segment and replayed on repetition.

Timing parameters are in DRAM cycles.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

READ, WRITE = 0, 1
HIT, MISS, CONFLICT = 0, 1, 2

NEG = -(1 << 60)


@dataclass(frozen=True)
class DramTiming:
    tCL: int = 14
    tRCD: int = 14
    tRP: int = 14
    tRAS: int = 34
    tWTR: int = 8
    burst_beats: int = 1

    @classmethod
    def from_spec(cls, spec, geometry) -> "DramTiming":
        return cls(spec.tCL, spec.tRCD, spec.tRP, spec.tRAS, spec.tWTR, geometry.burst_beats)


@dataclass(frozen=True)
class AddressMap:
    """Channel-local address = bank | row | column | burst offset (high to low)."""

    burst_bytes: int = 128
    row_bytes: int = 2048
    bank_bytes: int = 1 << 30
    banks: int = 1

    @classmethod
    def from_spec(cls, spec, geometry) -> "AddressMap":
        return cls(spec.dram_interface, spec.dram_row_bytes, geometry.bank_bytes,
                   geometry.banks_per_channel)

    @property
    def row_shift(self) -> int:
        return self.row_bytes.bit_length() - 1

    @property
    def bank_shift(self) -> int:
        return self.bank_bytes.bit_length() - 1

    @property
    def row_mask(self) -> int:
        return (self.bank_bytes // self.row_bytes) - 1

    def bank_of(self, addr):
        return addr >> self.bank_shift

    def row_of(self, addr):
        return (addr >> self.row_shift) & self.row_mask

    @property
    def capacity(self) -> int:
        return self.bank_bytes * self.banks


@dataclass(frozen=True)
class MemoryRequest:
    address: int
    op: int
    arrival: int
    event: int = 0


@dataclass
class Trace:
    """Column arrays of requests, sorted by (arrival, event)."""

    addr: np.ndarray
    op: np.ndarray
    arrival: np.ndarray
    event: np.ndarray

    @classmethod
    def from_requests(cls, reqs: Sequence[MemoryRequest]) -> "Trace":
        return cls(
            np.array([r.address for r in reqs], dtype=np.int64),
            np.array([r.op for r in reqs], dtype=np.int8),
            np.array([r.arrival for r in reqs], dtype=np.int64),
            np.array([r.event for r in reqs], dtype=np.int64),
        )

    @classmethod
    def empty(cls) -> "Trace":
        return cls(np.zeros(0, np.int64), np.zeros(0, np.int8), np.zeros(0, np.int64),
                   np.zeros(0, np.int64))

    def __len__(self) -> int:
        return len(self.addr)

    def sorted(self) -> "Trace":
        order = np.lexsort((self.event, self.arrival))
        return Trace(self.addr[order], self.op[order], self.arrival[order], self.event[order])

    def requests(self) -> List[MemoryRequest]:
        return [MemoryRequest(int(a), int(o), int(t), int(e))
                for a, o, t, e in zip(self.addr, self.op, self.arrival, self.event)]


@dataclass
class ChannelResult:
    departure: np.ndarray
    stall: np.ndarray
    kind: np.ndarray

    @property
    def latency(self) -> np.ndarray:
        return self.departure

    def __len__(self) -> int:
        return len(self.departure)


class UnalignedAddress(ValueError):
    pass


def _check_trace(trace: Trace, amap: AddressMap) -> None:
    if len(trace) == 0:
        return
    if np.any(trace.addr % amap.burst_bytes):
        bad = int(trace.addr[np.argmax(trace.addr % amap.burst_bytes != 0)])
        raise UnalignedAddress(f"address {bad:#x} not aligned to {amap.burst_bytes} B")
    if np.any(trace.addr < 0) or np.any(trace.addr >= amap.capacity):
        raise ValueError("address outside channel span")
    if len(trace) > 1:
        a, e = trace.arrival, trace.event
        bad = (a[1:] < a[:-1]) | ((a[1:] == a[:-1]) & (e[1:] < e[:-1]))
        if np.any(bad):
            raise ValueError("trace must be sorted by (arrival, event)")


# -- reference automaton ----------------------------------------------------

@dataclass
class BankState:
    open_row: Optional[int] = None
    act: int = NEG          # last ACTIVATE
    col_ready: int = NEG    # earliest column command to the open row
    data_end: int = NEG     # end of the last data burst from this bank


@dataclass
class ChannelState:
    banks: Dict[int, BankState] = field(default_factory=dict)
    last_col: int = NEG
    bus_free: int = NEG
    write_end: int = NEG


def _step(st: ChannelState, t: DramTiming, arrival: int, bank: int, row: int, op: int):
    b = st.banks.get(bank)
    if b is None:
        b = st.banks[bank] = BankState()
    floor_col = max(arrival, st.last_col + 1, st.bus_free - t.tCL)
    if op == READ:
        floor_col = max(floor_col, st.write_end + t.tWTR)
    if b.open_row == row:
        kind = HIT
        col = max(floor_col, b.col_ready)
    else:
        if b.open_row is None:
            kind = MISS
            act = arrival
        else:
            kind = CONFLICT
            pre = max(arrival, b.act + t.tRAS, b.data_end)
            act = pre + t.tRP
        b.open_row = row
        b.act = act
        b.col_ready = act + t.tRCD
        col = max(floor_col, b.col_ready)
    stall = col - floor_col if kind == CONFLICT else 0
    end = col + t.tCL + t.burst_beats
    st.last_col = col
    st.bus_free = end
    b.data_end = end
    if op == WRITE:
        st.write_end = end
    return end, stall, kind


def simulate_channel(trace: Trace, state: Optional[ChannelState] = None,
                     timing: DramTiming = DramTiming(), amap: AddressMap = AddressMap()) -> ChannelResult:
    """Service requests in (arrival, event) order; returns departure times.

    A row hit issues its column command once the data bus and command slot
    allow; a conflict first precharges (no earlier than tRAS after the row's
    activation and after its last burst) and re-activates. ``state`` is
    updated in place.
    """
    _check_trace(trace, amap)
    st = state if state is not None else ChannelState()
    n = len(trace)
    dep = np.empty(n, np.int64)
    stall = np.zeros(n, np.int64)
    kind = np.zeros(n, np.int8)
    banks = amap.bank_of(trace.addr).tolist()
    rows = amap.row_of(trace.addr).tolist()
    ops = trace.op.tolist()
    arr = trace.arrival.tolist()
    for i in range(n):
        dep[i], stall[i], kind[i] = _step(st, timing, arr[i], banks[i], rows[i], ops[i])
    return ChannelResult(dep, stall, kind)


# -- match keys and the coalescing cache ------------------------------------

def match_keys(trace: Trace) -> List[Tuple[int, int, int]]:
    """``(addr_i XOR addr_{i-1}, op_{i-1}, op_i)`` for i >= 1."""
    if len(trace) < 2:
        return []
    x = (trace.addr[1:] ^ trace.addr[:-1]).tolist()
    return list(zip(x, trace.op[:-1].tolist(), trace.op[1:].tolist()))


def divergence_window(ref_keys: Sequence, keys: Sequence, n: int) -> List[int]:
    """Request indices tagged for re-simulation: N either side of each divergence.

    A request diverges when its address relative to the trace head (the XOR
    prefix of its keys) or its op differs from the reference.
    """
    tagged = set()
    acc_r = acc_k = 0
    length = len(keys) + 1
    for i in range(1, length):
        kr, kk = ref_keys[i - 1], keys[i - 1]
        acc_r ^= kr[0]
        acc_k ^= kk[0]
        if acc_r != acc_k or kr[2] != kk[2]:
            tagged.update(range(max(0, i - n), min(length, i + n + 1)))
    return sorted(tagged)


@dataclass
class Cursor:
    """Where a channel's coalesced stream left off."""

    state: int = 0
    prev_addr: Optional[int] = None
    prev_arrival: int = 0   # effective (clamped) arrival of the previous request
    prev_op: int = READ
    prev_raw: int = 0       # its actual arrival


class CoalescingCache:
    """Memo of normalized-state transitions shared by structurally equal channels."""

    SEGMENT = 64

    def __init__(self, timing: DramTiming = DramTiming(), amap: AddressMap = AddressMap()) -> None:
        self.timing = timing
        self.amap = amap
        t = timing
        self._floors = (-1, t.tCL, -t.tWTR)
        self._bank_floors = (-t.tRAS, 0, 0)
        self._ids: Dict[tuple, int] = {}
        self._states: List[tuple] = []
        self._horizon: List[int] = []
        self._lcrel: List[int] = []
        self.slack = t.tRP + t.tRAS + t.tRCD
        self._trans: Dict[tuple, tuple] = {}
        self._segments: Dict[tuple, tuple] = {}
        self._lock = threading.Lock()
        self.lookups = 0
        self.hits = 0
        self.simulated = 0
        self.initial = self._intern((self._floors[0], self._floors[1], self._floors[2], ()))

    @property
    def hit_rate(self) -> float:
        return self.hits / self.lookups if self.lookups else 0.0

    def reset_stats(self) -> None:
        self.lookups = self.hits = self.simulated = 0

    def _intern(self, st: tuple) -> int:
        sid = self._ids.get(st)
        if sid is not None:
            return sid
        with self._lock:
            sid = self._ids.get(st)
            if sid is None:
                sid = len(self._states)
                lc, bf, we, banks = st
                h = max(lc - self._floors[0], bf - self._floors[1], we - self._floors[2], 0)
                for _, _, act, cr, de in banks:
                    h = max(h, act - self._bank_floors[0], cr, de)
                self._states.append(st)
                self._horizon.append(h)
                self._lcrel.append(lc)
                self._ids[st] = sid
        return sid

    def _transition(self, sid: int, x: int, op: int, d: int):
        """Advance normalized state by one request; returns (latency, stall, kind, next)."""
        t = self.timing
        amap = self.amap
        lc, bf, we, banks = self._states[sid]
        f0, f1, f2 = self._floors
        g0 = self._bank_floors[0]
        lc = max(lc - d, f0)
        bf = max(bf - d, f1)
        we = max(we - d, f2)
        xb = x >> amap.bank_shift
        xr = (x >> amap.row_shift) & amap.row_mask
        moved = []
        cur = None
        for rb, rr, act, cr, de in banks:
            entry = [rb ^ xb, rr ^ xr, max(act - d, g0), max(cr - d, 0), max(de - d, 0)]
            if entry[0] == 0:
                cur = entry
            else:
                moved.append(entry)
        floor_col = max(0, lc + 1, bf - t.tCL)
        if op == READ:
            floor_col = max(floor_col, we + t.tWTR)
        if cur is not None and cur[1] == 0:
            kind = HIT
            col = max(floor_col, cur[3])
        else:
            if cur is None:
                kind = MISS
                act = 0
            else:
                kind = CONFLICT
                act = max(0, cur[2] + t.tRAS, cur[4]) + t.tRP
            cur = [0, 0, act, act + t.tRCD, 0]
            col = max(floor_col, cur[3])
        stall = col - floor_col if kind == CONFLICT else 0
        end = col + t.tCL + t.burst_beats
        cur[4] = end
        if op == WRITE:
            we = end
        moved.append(cur)
        nbanks = tuple(sorted(tuple(e) for e in moved))
        nsid = self._intern((col, end, we, nbanks))
        return end, stall, kind, nsid

    def run(self, trace: Trace, cursor: Optional[Cursor] = None) -> Tuple[ChannelResult, Cursor]:
        """Time ``trace`` continuing from ``cursor``; returns results and the new cursor.

        Each arrival is first raised to at least ``last_col - slack``: an
        arrival that far behind the channel cannot bind any timing decision,
        present or future, so the normalized state stays bounded even when
        the channel is backlogged.
        """
        _check_trace(trace, self.amap)
        n = len(trace)
        cur = cursor if cursor is not None else Cursor(state=self.initial)
        rel = np.empty(n, np.int64)
        stall = np.zeros(n, np.int64)
        kind = np.zeros(n, np.int8)
        if n == 0:
            return ChannelResult(rel, stall, kind), cur
        addr, ops, arr = trace.addr, trace.op, trace.arrival
        first = cur.prev_addr is None
        prev_addr = int(addr[0]) if first else cur.prev_addr
        prev_raw = int(arr[0]) if first else cur.prev_raw
        aeff = int(arr[0]) if first else cur.prev_arrival
        xs = np.empty(n, np.int64)
        xs[0] = addr[0] ^ prev_addr
        xs[1:] = addr[1:] ^ addr[:-1]
        ds = np.empty(n, np.int64)
        ds[0] = arr[0] - prev_raw
        ds[1:] = arr[1:] - arr[:-1]
        pops = np.empty(n, np.int8)
        pops[0] = cur.prev_op
        pops[1:] = ops[:-1]
        dep = np.empty(n, np.int64)
        sid = cur.state
        S = self.SEGMENT
        K = self.slack
        sat = (S + 1) * (K + 1)
        seg = self._segments
        trans = self._trans
        horizon = self._horizon
        lcrel = self._lcrel
        arr_l = xl = pl = ol = None
        i = 0
        hits = 0
        while i < n:
            raw0 = prev_raw if i == 0 else arr_l[i - 1] if arr_l is not None else int(arr[i - 1])
            skey = None
            if i + S <= n:
                lag = aeff - raw0
                cap = int(arr[i + S - 1]) - raw0 + sat
                skey = (sid, min(lag, cap), xs[i:i + S].tobytes(), ds[i:i + S].tobytes(),
                        ops[i:i + S].tobytes(), int(pops[i]))
                got = seg.get(skey)
                if got is not None:
                    r_, s_, k_, sid, adv = got
                    dep[i:i + S] = aeff + r_
                    stall[i:i + S] = s_
                    kind[i:i + S] = k_
                    aeff += adv
                    hits += S
                    i += S
                    continue
            if xl is None:
                arr_l, xl, pl, ol = arr.tolist(), xs.tolist(), pops.tolist(), ops.tolist()
            base = aeff
            stop = min(n, i + S)
            for j in range(i, stop):
                d = arr_l[j] - aeff
                floor_d = lcrel[sid] - K
                if d < floor_d:
                    d = floor_d
                aeff += d
                h = horizon[sid]
                if d > h:
                    d = h
                key = (sid, xl[j], pl[j], ol[j], d)
                got = trans.get(key)
                if got is None:
                    got = self._transition(sid, xl[j], ol[j], d)
                    trans[key] = got
                    self.simulated += 1
                else:
                    hits += 1
                lat, stall[j], kind[j], sid = got
                dep[j] = aeff + lat
            if skey is not None:
                seg[skey] = (dep[i:stop] - base, stall[i:stop].copy(), kind[i:stop].copy(), sid,
                             aeff - base)
            i = stop
        self.lookups += n
        self.hits += hits
        new = Cursor(sid, int(addr[-1]), aeff, int(ops[-1]), int(arr[-1]))
        return ChannelResult(dep, stall, kind), new


def coalesced_simulate(trace: Trace, cache: CoalescingCache,
                       cursor: Optional[Cursor] = None) -> ChannelResult:
    return cache.run(trace, cursor)[0]


# -- refresh ----------------------------------------------------------------

@dataclass(frozen=True)
class RefreshSchedule:
    """Staggered periodic per-bank refresh, times in DRAM cycles."""

    tREFI: int
    tRFC: int
    channels: int = 1
    banks: int = 1

    @classmethod
    def from_spec(cls, spec, geometry) -> "RefreshSchedule":
        f = spec.dram_freq_ghz
        return cls(int(round(spec.tREFI_ns * f)), int(round(spec.tRFC_ns * f)),
                   geometry.channel_count, geometry.banks_per_channel)

    def offset(self, channel: int, bank) -> int:
        slots = self.channels * self.banks
        return ((channel * self.banks + bank) * self.tREFI) // slots

    def window(self, channel: int, bank: int, arrival: int) -> Tuple[int, int]:
        """The refresh interval [start, end) at or after the one containing ``arrival``."""
        off = self.offset(channel, bank)
        k = (arrival - off) // self.tREFI
        start = off + k * self.tREFI
        return start, start + self.tRFC


def apply_refresh(request: MemoryRequest, schedule: RefreshSchedule, channel: int,
                  amap: AddressMap, service: int) -> int:
    """Arrival shifted past any refresh of the request's bank overlapping its service."""
    bank = amap.bank_of(request.address)
    t = request.arrival
    start, end = schedule.window(channel, bank, t)
    if start <= t < end:
        return end
    nxt = start + schedule.tREFI
    if t + service > nxt:
        return nxt + schedule.tRFC
    return t


def apply_refresh_array(arrival: np.ndarray, bank: np.ndarray, channel: int,
                        schedule: RefreshSchedule, service: int) -> np.ndarray:
    off = ((channel * schedule.banks + bank) * schedule.tREFI) // (schedule.channels * schedule.banks)
    phase = (arrival - off) % schedule.tREFI
    out = arrival.copy()
    inside = phase < schedule.tRFC
    out[inside] = arrival[inside] - phase[inside] + schedule.tRFC
    ahead = (~inside) & (phase + service > schedule.tREFI)
    out[ahead] = arrival[ahead] - phase[ahead] + schedule.tREFI + schedule.tRFC
    return out


# -- core-group request tracker ---------------------------------------------

@dataclass(frozen=True)
class Admission:
    dispatch: bool
    waiting_on: Tuple[int, ...] = ()


class GroupTracker:
    """Keeps a group's per-core DRAM request counts within one of each other.

    Request indices are 1-based: core ``c`` may dispatch its i-th request
    only after every other member has dispatched its (i-1)-th.
    """

    def __init__(self, group_id: int, cores: Iterable[int]) -> None:
        self.group_id = group_id
        self.cores = tuple(cores)
        self.dispatched = {c: 0 for c in self.cores}
        self.enabled = True
        self.stalled: List[Tuple[int, int]] = []

    def spread(self) -> int:
        counts = self.dispatched.values()
        return max(counts) - min(counts)

    def dispatch(self, core: int) -> None:
        self.dispatched[core] += 1
        if self.enabled:
            assert self.spread() <= 1, "tracker spread invariant violated"

    def release(self) -> List[Tuple[int, int]]:
        """Dispatch every stalled request that became admissible, in (index, core) order."""
        out = []
        progress = True
        while progress:
            progress = False
            for item in sorted(self.stalled):
                idx, core = item
                if tracker_admit(self, core, idx).dispatch:
                    self.stalled.remove(item)
                    self.dispatch(core)
                    out.append(item)
                    progress = True
                    break
        return out


def tracker_admit(tracker: GroupTracker, core: int, index: int) -> Admission:
    if not tracker.enabled or len(tracker.cores) == 1:
        return Admission(True)
    need = index - 1
    behind = tuple(c for c in tracker.cores if c != core and tracker.dispatched[c] < need)
    if behind:
        if (index, core) not in tracker.stalled:
            tracker.stalled.append((index, core))
        return Admission(False, behind)
    return Admission(True)


def group_dispatch_times(arrivals: Sequence[np.ndarray]) -> List[np.ndarray]:
    """Dispatch times for equal-length per-core request arrival arrays.

    ``d_c[i] = max(a_c[i], max_k d_k[i-1])``; the running maximum makes this
    a cumulative max over the per-index group maximum.
    """
    if not arrivals:
        return []
    stack = np.vstack(arrivals)
    top = np.maximum.accumulate(stack.max(axis=0))
    prev = np.empty_like(top)
    prev[0] = NEG
    prev[1:] = top[:-1]
    return [np.maximum(a, prev) for a in stack]


def check_tracker_spread(dispatch: Sequence[np.ndarray]) -> bool:
    """True when no core's request i+1 went out before all cores' request i."""
    if len(dispatch) < 2:
        return True
    stack = np.vstack(dispatch)
    return bool(np.all(stack[:, 1:] >= stack.max(axis=0)[:-1]))


# -- trace files ------------------------------------------------------------

def dump_trace(rows: Iterable[Tuple[int, MemoryRequest]]) -> str:
    lines = ["channel,addr,op,arrival"]
    for ch, r in rows:
        lines.append(f"{ch},{r.address:#x},{'W' if r.op == WRITE else 'R'},{r.arrival}")
    return "\n".join(lines) + "\n"


def load_trace(text: str) -> Dict[int, List[MemoryRequest]]:
    out: Dict[int, List[MemoryRequest]] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#") or line.startswith("channel"):
            continue
        try:
            ch, addr, op, arr = (p.strip() for p in line.split(","))
            req = MemoryRequest(int(addr, 0), WRITE if op.upper().startswith("W") else READ,
                                int(arr), len(out.get(int(ch), ())))
        except ValueError:
            raise ValueError(f"trace line {lineno}: cannot parse {line!r}") from None
        out.setdefault(int(ch), []).append(req)
    return out
