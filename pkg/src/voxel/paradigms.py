"""Execution plans for the three compute paradigms.

All plans share the same weight layout rule: every weight byte is read from
DRAM exactly once, by the core that computes with it, from that core's own
channel. They differ in how activations move:

* ``spmd``: every operator is split over all cores; inputs are gathered
  before compute, K-split partial sums are all-reduced after it, and a
  barrier closes the operator.
* ``dataflow``: consecutive operators run on disjoint core sets as a
  microbatch pipeline; weights stay resident in SRAM and results are sent
  to the next stage's cores.
* ``compute-shift``: each grid row is a ring; weight column blocks stay on
  their core while activation blocks circulate around the ring, so there
  is no reduction step.

Attention runs head-parallel in every paradigm, between two barriers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .chipspec import ChipSpec, derive_geometry
from .graph import ExecutionGraph, GraphBuilder, GraphError, OpTile, Tensor, TensorRegion
from .mapping import folded_order, ring_cores
from .workloads import Operator

PARADIGMS = ("spmd", "dataflow", "compute-shift")
TILE_MAPS = ("dim-ordered", "sequential")


@dataclass
class Plan:
    graph: ExecutionGraph
    paradigm: str
    tile_map: str
    rings: List[List[int]]
    weight_bytes: int
    info: Dict[str, object] = field(default_factory=dict)


@dataclass
class _Act:
    """An activation spread evenly over cores: region and producing events per core."""

    regions: Dict[int, TensorRegion]
    events: Dict[int, Tuple[int, ...]]
    owned: bool = True      # regions may be released by the consumer


def _cdiv(a: int, b: int) -> int:
    return -(-a // b)


def _divisors(n: int) -> List[int]:
    return [d for d in range(1, n + 1) if n % d == 0]


class _Planner:
    name = ""

    def __init__(self, ops: Sequence[Operator], spec: ChipSpec, tile_map: str = "dim-ordered") -> None:
        if tile_map not in TILE_MAPS:
            raise ValueError(f"unknown tile map {tile_map!r}")
        self.ops = list(ops)
        self.spec = spec
        self.tile_map = tile_map
        self.b = GraphBuilder(spec)
        self.P = spec.num_cores
        geo = derive_geometry(spec, warn=False)
        self.rows, self.cols = geo.grid_rows, geo.grid_cols
        ordered = tile_map == "dim-ordered"
        self.rings = [ring_cores(self.cols, spec, ordered, row=r) for r in range(self.rows)]
        self.order = [c for ring in self.rings for c in ring]
        # column rings: same ring position across row rings
        rorder = folded_order(self.rows) if ordered else list(range(self.rows))
        self.columns = [[self.rings[q][j] for q in rorder] for j in range(self.cols)]
        self.esize = spec.dtype_bytes
        # streaming tile size: bounded so that extra SRAM only deepens prefetch
        self.budget = max(spec.dram_interface, min(spec.sram_per_core // 8, 64 << 10))
        self.weight_total = 0
        self.kv: Dict[int, Tuple[Tensor, Dict[int, int]]] = {}

    # -- shared pieces ---------------------------------------------------------

    def weight(self, name: str, part_bytes: Sequence[int], homes: Sequence[int]) -> Tensor:
        t = self.b.dram_tensor(name, part_bytes, homes)
        self.b.place(t)
        self.weight_total += t.nbytes
        return t

    def act_init(self, numel: int) -> _Act:
        per = _cdiv(numel, self.P)
        regs = {c: self.b.sram_region(c, (per,), name="x") for c in range(self.P)}
        return _Act(regs, {c: () for c in range(self.P)})

    def release(self, act: _Act) -> None:
        for r in act.regions.values():
            self.b.release(r)

    def gather(self, act: _Act, groups: Sequence[Sequence[int]]) -> _Act:
        """All-gather each core's share within its group; releases the shares."""
        regs, evs = {}, {}
        for grp in groups:
            if len(grp) == 1:
                c = grp[0]
                regs[c], evs[c] = act.regions[c], act.events[c]
                continue
            deps = sorted({e for c in grp for e in act.events[c]})
            out = self.b.collective("allgather", [act.regions[c] for c in grp], list(grp), deps)
            last = {c: () for c in grp}
            for eid in out:
                e = self.b.event(eid)
                last[e.dst.core] = (eid,)
            for c, r in zip(grp, self.b.last_outputs):
                regs[c], evs[c] = r, last[c] or tuple(deps)
            for c in grp:
                self.b.release(act.regions[c])
        return _Act(regs, evs)

    def stream_matmul(self, core: int, m: int, k: int, n: int, x: TensorRegion, wt: Tensor, part: int,
                      out: TensorRegion, deps: Sequence[int], label: str, w_offset: int = 0) -> int:
        """Matmul whose B operand streams from DRAM in K-chunks of at most ``budget`` bytes."""
        kc = max(1, min(k, self.budget // (n * self.esize)))
        eid = -1
        for start in range(0, k, kc):
            kk = min(kc, k - start)
            xs = self.b.slice(x, min(start * m, x.numel - m * kk), m * kk)
            ws = self.b.region(wt, part, w_offset + start * n * self.esize, (kk * n,))
            eid = self.b.compute(OpTile(("matmul", m, kk, n), (xs, ws), out), core,
                                 deps if start == 0 else (), label=label)
        return eid

    def local_matmul(self, core: int, m: int, k: int, n: int, x: TensorRegion, w: TensorRegion,
                     out: TensorRegion, deps: Sequence[int], label: str) -> int:
        xs = self.b.slice(x, 0, m * k)
        ws = self.b.slice(w, 0, k * n)
        return self.b.compute(OpTile(("matmul", m, k, n), (xs, ws), out), core, deps, label=label)

    def elementwise(self, act: _Act, op: Operator, cores: Optional[Sequence[int]] = None) -> _Act:
        """Per-core elementwise work; a gating op shrinks each share to the output size."""
        n, fused = op.dims
        cs = list(cores if cores is not None else sorted(act.regions))
        share = _cdiv(n, len(cs))
        regs, evs = dict(act.regions), dict(act.events)
        owned = act.owned
        for c in cs:
            r = act.regions[c]
            if share * fused <= r.numel and share < r.numel:
                out = self.b.sram_region(c, (share,), name=op.name)
                ins = tuple(self.b.slice(r, i * share, share) for i in range(fused))
            else:
                out, ins = r, (r,) * fused
            evs[c] = (self.b.compute(OpTile(("elementwise", out.numel, fused), ins, out), c,
                                     act.events[c], label=op.name),)
            if out is not r:
                if act.owned:
                    self.b.release(r)
                regs[c] = out
                owned = True
        return _Act(regs, evs, owned)

    def barrier(self, act: _Act, label: str) -> _Act:
        deps = sorted({e for v in act.events.values() for e in v})
        if not deps:
            return act
        s = self.b.sync(deps, label=label)
        return _Act(act.regions, {c: (s,) for c in act.regions}, act.owned)

    def attention(self, act: _Act, layer_ops: Sequence[Operator]) -> _Act:
        """Head-parallel attention: instance i runs on core ``order[i % P]``."""
        by = {op.name: op for op in layer_ops}
        score = by["attn_score"]
        rows, d, kv = score.dims
        inst = score.instances
        act = self.barrier(act, "qkv-done")
        entry = next(iter(act.events.values()))
        store = by.get("kv_store")
        placed: Dict[int, List[int]] = {}
        for i in range(inst):
            placed.setdefault(self.order[i % self.P], []).append(i)
        kvt = None
        if score.operand == "kv":
            kvt = self.b.dram_tensor(f"kv{score.layer}", [2 * kv * d * self.esize] * inst,
                                     [self.order[i % self.P] for i in range(inst)])
            self.b.place(kvt)
        kc = max(1, min(kv, self.budget // (d * self.esize)))
        rc = max(1, min(rows, self.budget // (kc * self.esize)))
        done: List[int] = []
        for c, items in placed.items():
            q = self.b.sram_region(c, (rows * d,), name="q")
            o = self.b.sram_region(c, (rows * d,), name="ctx")
            s = self.b.sram_region(c, (rc * kc,), name="scores")
            local = []
            if kvt is None:
                kreg = self.b.sram_region(c, (kv * d,), name="k")
                vreg = self.b.sram_region(c, (kv * d,), name="v")
                local = [kreg, vreg]
            prev: Tuple[int, ...] = entry
            for i in items:
                if kvt is not None:
                    kreg = self.b.region(kvt, i, 0, (kv * d,))
                    vreg = self.b.region(kvt, i, kv * d * self.esize, (kv * d,))
                    if store is not None:
                        new = self.b.slice(q, 0, d)
                        tail = (kv - 1) * d * self.esize
                        wk = self.b.movedata(new, self.b.region(kvt, i, tail, (d,)), prev, label="kv-store")
                        wv = self.b.movedata(new, self.b.region(kvt, i, kv * d * self.esize + tail, (d,)),
                                             prev, label="kv-store")
                        prev = prev + (wk, wv)
                for r0 in range(0, rows, rc):
                    rr = min(rc, rows - r0)
                    qs = self.b.slice(q, r0 * d, rr * d)
                    os_ = self.b.slice(o, r0 * d, rr * d)
                    # scores are formed one KV chunk at a time
                    for k0 in range(0, kv, kc):
                        kk = min(kc, kv - k0)
                        ss = self.b.slice(s, 0, rr * kk)
                        ks = self.b.slice(kreg, k0 * d, kk * d)
                        vs = self.b.slice(vreg, k0 * d, kk * d)
                        e1 = self.b.compute(OpTile(("matmul", rr, d, kk), (qs, ks), ss), c, prev, label="attn_score")
                        e2 = self.b.compute(OpTile(("softmax", rr, kk), (ss,), ss), c, (e1,), label="softmax")
                        e3 = self.b.compute(OpTile(("matmul", rr, kk, d), (ss, vs), os_), c, (e2,),
                                            label="attn_ctx")
                        prev = (e3,)
                    done.append(prev[0])
            for r in local + [s, o, q]:
                self.b.release(r)
        s_id = self.b.sync(done or list(entry), label="attn-done")
        return _Act(act.regions, {c: (s_id,) for c in act.regions}, act.owned)

    def layers(self) -> List[List[Operator]]:
        out: Dict[int, List[Operator]] = {}
        for op in self.ops:
            out.setdefault(op.layer, []).append(op)
        return [out[k] for k in sorted(out)]

    def input_numel(self) -> int:
        first = next(op for op in self.ops if op.kind == "matmul" and op.operand == "weight")
        return first.dims[0] * first.dims[1]

    def build(self) -> Plan:
        act = self.act_init(self.input_numel())
        for layer in self.layers():
            act = self.run_layer(act, layer)
        graph = self.b.finalize()
        return Plan(graph, self.name, self.tile_map, self.rings, self.weight_total, self.info())

    def run_layer(self, act: _Act, layer: List[Operator]) -> _Act:
        for op in layer:
            if op.kind == "matmul" and op.operand == "weight":
                act = self.matmul(act, op)
            elif op.name == "attn_score":
                act = self.attention(act, layer)
            elif op.kind == "elementwise":
                act = self.elementwise(act, op)
        return act

    def matmul(self, act: _Act, op: Operator) -> _Act:
        raise NotImplementedError

    def info(self) -> Dict[str, object]:
        return {}


# -- SPMD -------------------------------------------------------------------

def choose_split(m: int, k: int, n: int, p: int, sa: int) -> Tuple[int, int, int]:
    """(pm, pk, pn) with pm*pk*pn = p minimizing the per-core working set.

    Splits that leave M or N tiles unaligned to the array width are
    penalized by their padding; ties prefer fewer K splits.
    """
    best = None
    for pm in _divisors(p):
        for pk in _divisors(p // pm):
            pn = p // (pm * pk)
            if pm > m or pk > k or pn > n:
                continue
            mt, kt, nt = _cdiv(m, pm), _cdiv(k, pk), _cdiv(n, pn)
            ws = mt * kt + kt * nt + mt * nt
            pad = (_cdiv(mt, sa) * sa * _cdiv(nt, sa) * sa) / (mt * nt)
            key = (ws * pad, pk, pm)
            if best is None or key < best[0]:
                best = (key, (pm, pk, pn))
    if best is None:
        raise GraphError(f"cannot split ({m}, {k}, {n}) over {p} cores")
    return best[1]


class SpmdPlanner(_Planner):
    name = "spmd"

    def __init__(self, *a, **kw) -> None:
        super().__init__(*a, **kw)
        self._prev_outs: Dict[int, TensorRegion] = {}

    def matmul(self, act: _Act, op: Operator) -> _Act:
        M, K, N = op.dims
        pm, pk, pn = choose_split(M, K, N, self.P, self.spec.sa_width)
        mt, kt, nt = _cdiv(M, pm), _cdiv(K, pk), _cdiv(N, pn)
        cores = self.order
        tile_of = {}
        for im in range(pm):
            for ik in range(pk):
                for i_n in range(pn):
                    tile_of[(im, ik, i_n)] = cores[(im * pk + ik) * pn + i_n]
        # inputs: gather the X block shared by the pn cores of each (im, ik)
        groups = [[tile_of[(im, ik, i_n)] for i_n in range(pn)] for im in range(pm) for ik in range(pk)]
        x = self.gather(act, groups) if pn > 1 else act
        wt = self.weight(f"{op.name}{op.layer}", [kt * nt * self.esize] * self.P,
                         [tile_of[t] for t in sorted(tile_of)])
        parts = {tile_of[t]: i for i, t in enumerate(sorted(tile_of))}
        outs, evs = {}, {}
        for t, c in tile_of.items():
            xr = x.regions[c]
            if xr.numel < mt * kt:
                raise GraphError(f"SPMD input block too small on core {c}")
            outs[c] = self.b.sram_region(c, (mt * nt,), name=op.name)
            evs[c] = (self.stream_matmul(c, mt, kt, nt, xr, wt, parts[c], outs[c], x.events[c], op.name),)
        if pn > 1 or act.owned:
            for c in x.regions:
                self.b.release(x.regions[c])
        if pk > 1:
            for im in range(pm):
                for i_n in range(pn):
                    grp = [tile_of[(im, ik, i_n)] for ik in range(pk)]
                    deps = sorted({e for c in grp for e in evs[c]})
                    ev = self.b.collective("allreduce", [outs[c] for c in grp], grp, deps)
                    for c in grp:
                        evs[c] = tuple(ev) or evs[c]
        out = self.barrier(_Act(outs, evs), f"{op.name}-barrier")
        # each core keeps an even share of the output for the next operator
        share = _cdiv(M * N, self.P)
        kept = {c: self.b.slice(r, 0, min(share, r.numel)) for c, r in outs.items()}
        for r in self._prev_outs.values():
            self.b.release(r)
        self._prev_outs = outs
        return _Act(kept, out.events, owned=False)

    def release(self, act: _Act) -> None:
        pass

    def gather(self, act: _Act, groups) -> _Act:
        regs, evs = {}, {}
        for grp in groups:
            deps = sorted({e for c in grp for e in act.events[c]})
            out = self.b.collective("allgather", [act.regions[c] for c in grp], list(grp), deps)
            last = {c: () for c in grp}
            for eid in out:
                e = self.b.event(eid)
                last[e.dst.core] = last[e.dst.core] + (eid,)
            for c, r in zip(grp, self.b.last_outputs):
                regs[c], evs[c] = r, last[c] or tuple(deps)
        return _Act(regs, evs)


# -- compute-shift -----------------------------------------------------------

class ComputeShiftPlanner(_Planner):
    name = "compute-shift"

    def __init__(self, *a, **kw) -> None:
        super().__init__(*a, **kw)
        self.variants: Dict[str, int] = {}
        self._done: List[Dict[int, int]] = []
        self._wbufs: List[TensorRegion] = []

    def matmul(self, act: _Act, op: Operator) -> _Act:
        M, K, N = op.dims
        R, Q, P = self.cols, self.rows, self.P
        np_, mr = _cdiv(N, P), _cdiv(M, R)
        wpart = K * np_ * self.esize
        xblk = mr * K * self.esize
        out_b = M * np_ * self.esize
        room = 0.9 * self.spec.sram_per_core
        sa = self.spec.sa_width
        folds_n = _cdiv(np_, sa)
        # estimated array cycles: row blocks keep full K per fold, K-shards keep full M
        rows_cost = R * _cdiv(mr, sa) * folds_n * (K + 2 * sa - 2)
        k_cost = R * _cdiv(M, sa) * folds_n * (_cdiv(K, R) + 2 * sa - 2)
        if rows_cost < k_cost and 2 * wpart + 2 * xblk + out_b <= room:
            mode = "resident-2"
        elif rows_cost < k_cost and wpart + 2 * xblk + out_b <= room:
            mode = "resident-1"
        else:
            mode = "stream"
        self.variants[mode] = self.variants.get(mode, 0) + 1
        homes = [self.rings[q][j] for q in range(Q) for j in range(R)]
        wt = self.weight(f"{op.name}{op.layer}", [wpart] * P, homes)
        if mode != "resident-2":
            for r in self._wbufs:
                self.b.release(r)
            self._wbufs = []
        load = {}
        if mode != "stream":
            back = 2 if mode == "resident-2" else 1
            prior = self._done[-back] if len(self._done) >= back else {}
            for part, c in enumerate(homes):
                buf = self.b.sram_region(c, (K * np_,), name="w")
                deps = (prior[c],) if c in prior else ()
                load[c] = (buf, self.b.movedata(self.b.region(wt, part), buf, deps, label="w-load"))
            for r in self._wbufs:
                self.b.release(r)
            self._wbufs = [buf for buf, _ in load.values()]
        # every ring needs all of X: gather the even shares along grid columns
        x = self.gather(act, self.columns) if Q > 1 else act
        outs = {c: self.b.sram_region(c, (M * np_,), name=op.name) for c in homes}
        part_of = {c: i for i, c in enumerate(homes)}
        kr = _cdiv(K, R)

        def rows_step(s, j, c, buf, deps):
            # resident W column block times the X row block currently held
            blk = (j + s) % R
            o = self.b.slice(outs[c], min(blk * mr, M - mr) * np_, mr * np_)
            if buf.numel < mr * K:
                raise GraphError(f"row block does not fit the shift buffer on core {c}")
            return self.local_matmul(c, mr, K, np_, buf, load[c][0], o, deps + ((load[c][1],) if s == 0 else ()),
                                     op.name)

        def k_step(s, j, c, buf, deps):
            # X K-shard times the matching W rows streamed from DRAM
            blk = (j + s) % R
            kk = min(kr, K - blk * kr)
            if kk <= 0:
                return None
            return self.stream_matmul(c, M, kk, np_, buf, wt, part_of[c], outs[c], deps, op.name,
                                      w_offset=blk * kr * np_ * self.esize)

        spare = mr * K if mode != "stream" else M * kr
        evs: Dict[int, Tuple[int, ...]] = {}
        for ring in self.rings:
            last = self._ring_shift(ring, x, spare, rows_step if mode != "stream" else k_step)
            evs.update(last)
        for c in x.regions:
            self.b.release(x.regions[c])
        self._done.append({c: evs[c][-1] for c in homes})
        return _Act(outs, evs)

    def _ring_shift(self, ring: Sequence[int], x: _Act, spare: int, step_fn) -> Dict[int, Tuple[int, ...]]:
        """R steps of compute; between steps each core receives its successor's block."""
        R = len(ring)
        bufs = [{c: x.regions[c] for c in ring}, {c: self.b.sram_region(c, (spare,), name="shift") for c in ring}]
        valid = {c: x.events[c] for c in ring}
        comp_prev: Dict[int, Optional[int]] = {}
        moves_prev: Dict[int, int] = {}
        last: Dict[int, Tuple[int, ...]] = {c: x.events[c] for c in ring}
        for s in range(R):
            cur, nxt = bufs[s % 2], bufs[(s + 1) % 2]
            comp = {}
            for j, c in enumerate(ring):
                comp[c] = step_fn(s, j, c, cur[c], valid[c])
                if comp[c] is not None:
                    last[c] = (comp[c],)
            if s == R - 1:
                break
            moves = {}
            for j, c in enumerate(ring):
                succ, pred = ring[(j + 1) % R], ring[(j - 1) % R]
                deps = valid[succ]
                if comp_prev.get(c) is not None:
                    deps = deps + (comp_prev[c],)
                if pred in moves_prev:
                    deps = deps + (moves_prev[pred],)
                n = min(cur[succ].numel, nxt[c].numel)
                moves[c] = self.b.movedata(self.b.slice(cur[succ], 0, n), self.b.slice(nxt[c], 0, n), deps,
                                           label="shift")
            valid = {c: (moves[c],) for c in ring}
            comp_prev, moves_prev = comp, moves
        for c in ring:
            self.b.release(bufs[1][c])
        return last

    def info(self) -> Dict[str, object]:
        return {"variants": dict(self.variants)}


# -- dataflow ----------------------------------------------------------------

class DataflowPlanner(_Planner):
    name = "dataflow"

    def __init__(self, ops, spec, tile_map="dim-ordered", microbatches: int = 4,
                 wave_fraction: float = 0.3) -> None:
        super().__init__(ops, spec, tile_map)
        if microbatches < 1:
            raise ValueError("need at least one microbatch")
        self.nmb = microbatches
        self.wave_fraction = wave_fraction
        self.waves: List[List[str]] = []
        self._wave_done: List[int] = []

    def build(self) -> Plan:
        # walk the operator list, grouping weight matmuls into waves whose weights fit in SRAM
        cap = self.wave_fraction * self.spec.sram_per_core * self.P
        segments: List[List[Operator]] = []
        cur: List[Operator] = []
        cur_bytes = 0
        for op in self.ops:
            if op.kind == "matmul" and op.operand == "weight":
                wb = op.weight_elems() * self.esize
                if cur and cur_bytes + wb > cap:
                    segments.append(cur)
                    cur, cur_bytes = [], 0
                cur_bytes += wb
            elif op.name == "attn_score" and cur:
                segments.append(cur)
                cur, cur_bytes = [], 0
            cur.append(op)
        if cur:
            segments.append(cur)
        act = self.act_init(self.input_numel())
        loads_prev: List[TensorRegion] = []
        for seg in segments:
            if any(op.name == "attn_score" for op in seg):
                act = self.attention(act, [o for o in self.ops if o.layer == seg[0].layer])
                rest = [o for o in seg if o.name not in ("attn_score", "softmax", "attn_ctx", "kv_store")]
                if not any(o.kind == "matmul" and o.operand == "weight" for o in rest):
                    for o in rest:
                        if o.kind == "elementwise":
                            act = self.elementwise(act, o)
                    continue
                seg = rest
            act, loads_prev = self._wave(act, seg, loads_prev)
        graph = self.b.finalize()
        return Plan(graph, self.name, self.tile_map, self.rings, self.weight_total,
                    {"waves": self.waves, "microbatches": self.nmb})

    def _wave(self, act: _Act, seg: List[Operator], old_loads):
        stages: List[Tuple[Operator, List[Operator]]] = []
        for op in seg:
            if op.kind == "matmul" and op.operand == "weight":
                stages.append((op, []))
            elif stages:
                stages[-1][1].append(op)
        if not stages:
            return act, old_loads
        # weights for this wave overwrite the buffers of the wave two back
        prefetch_after = self._wave_done[-2:-1]
        self.waves.append([op.name for op, _ in stages])
        # cores per stage proportional to FLOPs, at least one each
        flops = [op.flops for op, _ in stages]
        share = [max(1, round(self.P * f / sum(flops))) for f in flops]
        while sum(share) > self.P:
            share[share.index(max(share))] -= 1
        while sum(share) < self.P:
            share[share.index(min(share))] += 1
        groups, pos = [], 0
        for s in share:
            groups.append(self.order[pos:pos + s])
            pos += s
        # weights: each stage core loads its column block once
        loads: List[TensorRegion] = []
        wreg: Dict[int, Tuple[TensorRegion, int]] = {}
        for (op, _), cores in zip(stages, groups):
            M, K, N = op.dims
            nt = _cdiv(N, len(cores))
            wt = self.weight(f"{op.name}{op.layer}", [K * nt * self.esize] * len(cores), cores)
            for part, c in enumerate(cores):
                buf = self.b.sram_region(c, (K * nt,), name="w")
                loads.append(buf)
                wreg[c] = (buf, self.b.movedata(self.b.region(wt, part), buf, prefetch_after, label="w-load"))
        for r in old_loads:
            self.b.release(r)
        # microbatch pipeline; stage 0 pulls its input rows from the current holders
        first_op, last_op = stages[0][0], stages[-1][0]
        M = first_op.dims[0]
        mb_rows = [M // self.nmb + (1 if i < M % self.nmb else 0) for i in range(self.nmb)]
        mb_rows = [m for m in mb_rows if m > 0]
        last_nt = _cdiv(last_op.dims[2], len(groups[-1]))
        result = {c: self.b.sram_region(c, (M * last_nt,), name=last_op.name) for c in groups[-1]}
        holders = {c: (act.regions[c], act.events[c]) for c in sorted(act.regions)}
        finals: Dict[int, Tuple[int, ...]] = {c: () for c in result}
        row0 = 0
        for m in mb_rows:
            src = holders
            for si, ((op, tail), cores) in enumerate(zip(stages, groups)):
                _, K, N = op.dims
                nt = _cdiv(N, len(cores))
                per = _cdiv(m * K, len(src))
                outs = {}
                for c in cores:
                    xin = self.b.sram_region(c, (per * len(src),), name="xin")
                    got = []
                    for k_i, (pc, (pr, pe)) in enumerate(src.items()):
                        cnt = min(pr.numel, per)
                        got.append(self.b.movedata(self.b.slice(pr, 0, cnt), self.b.slice(xin, k_i * per, cnt),
                                                   pe, label="stage-xfer"))
                    if si == len(stages) - 1:
                        o = self.b.slice(result[c], row0 * nt, m * nt)
                    else:
                        o = self.b.sram_region(c, (m * nt,), name=op.name)
                    e = self.local_matmul(c, m, K, nt, xin, wreg[c][0], o, tuple(got) + (wreg[c][1],), op.name)
                    for t in tail:
                        if t.kind == "elementwise":
                            e = self.b.compute(OpTile(("elementwise", o.numel, t.dims[1]), (o,) * t.dims[1], o),
                                               c, (e,), label=t.name)
                    self.b.release(xin)
                    outs[c] = (o, (e,))
                if si > 0:
                    for pr, _ in src.values():
                        self.b.release(pr)
                src = outs
            for c, (_, ev) in src.items():
                finals[c] = finals[c] + ev
            row0 += m
        for r, _ in holders.values():
            self.b.release(r)
        done = self.b.sync(sorted({e for v in finals.values() for e in v}), label="wave-done")
        self._wave_done.append(done)
        return _Act(result, {c: finals[c] for c in result}), loads


def plan(paradigm: str, ops: Sequence[Operator], spec: ChipSpec, tile_map: str = "dim-ordered",
         microbatches: int = 4) -> Plan:
    key = paradigm.lower().replace("_", "-")
    if key == "spmd":
        return SpmdPlanner(ops, spec, tile_map).build()
    if key == "dataflow":
        return DataflowPlanner(ops, spec, tile_map, microbatches).build()
    if key in ("compute-shift", "computeshift", "shift"):
        return ComputeShiftPlanner(ops, spec, tile_map).build()
    raise ValueError(f"unknown paradigm {paradigm!r}; choose from {', '.join(PARADIGMS)}")
