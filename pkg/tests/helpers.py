"""Shared builders for the test suite."""

from __future__ import annotations

from typing import List

import numpy as np

from voxel.chipspec import ChipSpec
from voxel.dram_model import AddressMap, Trace

TRACE_MAP = AddressMap(burst_bytes=128, row_bytes=2048, bank_bytes=1 << 24, banks=4)


def small_spec(**kw) -> ChipSpec:
    base = dict(num_cores=16, core_group_size=1)
    base.update(kw)
    return ChipSpec(**base)


def random_trace(rng: np.random.Generator, n: int, amap: AddressMap = TRACE_MAP, kind=None) -> Trace:
    """A channel trace that is fully random, a repeated block, or a repeated block with shifted rows.

    Repeated blocks carry occasional divergent addresses and arrival jitter,
    so both the memo hit path and the re-simulation path are exercised.
    """
    kind = int(rng.choice(3, p=[0.1, 0.6, 0.3])) if kind is None else kind
    bursts = amap.capacity // amap.burst_bytes
    gap = rng.choice([0, 1, 2, 4, 16, 40], n, p=[.3, .2, .2, .15, .1, .05])
    if kind == 0:
        addr = rng.integers(0, bursts, n) * amap.burst_bytes
    else:
        blen = int(rng.integers(8, 200))
        reps = -(-n // blen)
        base = rng.integers(0, 64, blen) * amap.row_bytes + rng.integers(0, 16, blen) * amap.burst_bytes
        shift = np.zeros(reps, np.int64)
        if kind == 2:
            shift = rng.integers(0, 4, reps) * 64 * amap.row_bytes
        addr = (base[None, :] + shift[:, None]).ravel()[:n]
        div = rng.random(n) < (0.002 if kind == 1 else 0.01)
        addr[div] = rng.integers(0, 64 * 16, int(div.sum())) * amap.burst_bytes + int(shift.max())
        gap = np.tile(gap[:blen], reps)[:n]
        jit = rng.random(n) < 0.002
        gap[jit] += rng.integers(1, 50, int(jit.sum()))
    op = (rng.random(n) < rng.choice([0.0, 0.1, 0.5])).astype(np.int8)
    arr = np.cumsum(gap).astype(np.int64)
    return Trace(addr.astype(np.int64), op, arr, np.arange(n, dtype=np.int64))


def layer_block_traces(channels: int = 64, layers: int = 40, block: int = 1000, seed: int = 3) -> List[Trace]:
    """Per-channel traces made of identical layer blocks: streamed reads over four banks plus writes."""
    rng = np.random.default_rng(seed)
    amap = TRACE_MAP
    i = np.arange(block)
    addr = (i * amap.burst_bytes) % (amap.bank_bytes // 4) + ((i // 256) % amap.banks) * amap.bank_bytes
    op = (i % 16 == 15).astype(np.int8)
    gap = rng.choice([1, 2, 3, 8], block)
    out = []
    for ch in range(channels):
        a = np.tile(addr, layers) ^ ((ch % 8) * amap.row_bytes)
        t = np.cumsum(np.tile(gap, layers)) + ch * 7
        out.append(Trace(a.astype(np.int64), np.tile(op, layers), t.astype(np.int64),
                         np.arange(layers * block, dtype=np.int64)))
    return out
