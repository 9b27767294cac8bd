"""Small synthetic plans that isolate one DRAM effect each."""

from __future__ import annotations

from typing import Optional

from .chipspec import ChipSpec, derive_geometry
from .graph import ExecutionGraph, GraphBuilder, OpTile


def two_tensor_stream(spec: ChipSpec, tensor_bytes: int = 32 << 10, chunk_bytes: int = 512) -> ExecutionGraph:
    """Every core adds two DRAM tensors homed on its own channel, chunk by chunk.

    Each compute reads one chunk of each tensor, so the two tensors are
    accessed concurrently at chunk granularity. Whether that costs row
    conflicts depends only on how placement maps the tensors to banks.
    """
    if tensor_bytes % chunk_bytes:
        raise ValueError("tensor size must be a multiple of the chunk size")
    b = GraphBuilder(spec)
    n = chunk_bytes // spec.dtype_bytes
    for c in range(spec.num_cores):
        a = b.dram_tensor(f"a{c}", [tensor_bytes], [c])
        bb = b.dram_tensor(f"b{c}", [tensor_bytes], [c])
        b.place(a)
        b.place(bb)
        out = b.sram_region(c, (n,), name="sum")
        for off in range(0, tensor_bytes, chunk_bytes):
            ins = (b.region(a, 0, off, (n,)), b.region(bb, 0, off, (n,)))
            b.compute(OpTile(("elementwise", n, 2), ins, out), c, label="add")
    return b.finalize()


def cluster_skew_bytes(spec: ChipSpec, cluster: int = 8) -> int:
    """Broadcast token size that staggers neighbours by one channel sweep plus half a row burst."""
    geo = derive_geometry(spec, warn=False)
    burst = spec.dram_row_bytes // spec.dram_interface * geo.burst_beats
    cycles = burst * cluster + burst // 2
    return int(cycles * spec.noc_link_bw)


def shared_shard_stream(spec: ChipSpec, cluster: int = 8, rows_per_part: int = 8,
                        skew_bytes: Optional[int] = None, inflight: int = 2) -> ExecutionGraph:
    """Decode-style weight sharing: each cluster of cores reads one shard striped over its channels.

    Part ``j`` of a cluster's shard lives on the channel of the cluster's
    ``j``-th core. Every core of the cluster streams the whole shard, one
    row of every part per compute, so all cores walk the same addresses.
    A broadcast chain along the cluster staggers their start times; a core
    group tracker covering the cluster can re-align them. SRAM is filled so
    that only ``inflight`` computes' inputs can be prefetched, which ties
    each core's request stream to its own (staggered) progress.
    """
    if spec.num_cores % cluster:
        raise ValueError("core count must be a multiple of the cluster size")
    b = GraphBuilder(spec)
    row = spec.dram_row_bytes
    n = row // spec.dtype_bytes
    skew = cluster_skew_bytes(spec, cluster) if skew_bytes is None else skew_bytes
    tok_n = max(1, skew // spec.dtype_bytes)
    for g in range(spec.num_cores // cluster):
        cores = list(range(g * cluster, (g + 1) * cluster))
        shard = b.dram_tensor(f"shard{g}", [rows_per_part * row] * cluster, cores)
        b.place(shard)
        toks = [b.sram_region(c, (tok_n,), name="token") for c in cores]
        start = {cores[0]: ()}
        prev = ()
        for i in range(1, cluster):
            prev = (b.movedata(toks[i - 1], toks[i], prev, label="skew"),)
            start[cores[i]] = prev
        for c in cores:
            out = b.sram_region(c, (n,), name="acc")
            spare = spec.sram_per_core - b.sram_live(c) - inflight * cluster * row
            if spare > 0:
                b.sram_region(c, (spare // spec.dtype_bytes,), name="reserved")
            deps = start[c]
            for r in range(rows_per_part):
                ins = tuple(b.region(shard, j, r * row, (n,)) for j in range(cluster))
                b.compute(OpTile(("elementwise", n, cluster), ins, out), c, deps, label="gemv")
                deps = ()
    return b.finalize()


__all__ = ["two_tensor_stream", "shared_shard_stream", "cluster_skew_bytes"]
