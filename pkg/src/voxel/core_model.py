"""Analytical AI-core timing: output-stationary systolic array and vector unit."""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Dict, Hashable, Tuple


@dataclass(frozen=True)
class TileCost:
    cycles: int
    macs_useful: int = 0
    macs_total: int = 0
    vector_ops: int = 0
    sram_bytes_read: int = 0
    sram_bytes_written: int = 0

    @property
    def spatial_utilization(self) -> float:
        if self.macs_total == 0:
            return 1.0
        return self.macs_useful / self.macs_total


def _cdiv(a: int, b: int) -> int:
    return -(-a // b)


def matmul_cost(m: int, k: int, n: int, sa_width: int, dtype_bytes: int = 2) -> TileCost:
    """Output-stationary fold model.

    Each ``s x s`` fold of the output streams ``K`` partial products through
    the array, plus ``2s - 2`` cycles of fill and drain.
    """
    if min(m, k, n) < 1 or sa_width < 1:
        raise ValueError(f"bad matmul shape {(m, k, n)} for SA width {sa_width}")
    s = sa_width
    folds = _cdiv(m, s) * _cdiv(n, s)
    return TileCost(
        cycles=folds * (k + 2 * s - 2),
        macs_useful=m * k * n,
        macs_total=folds * s * s * k,
        sram_bytes_read=(m * k + k * n) * dtype_bytes,
        sram_bytes_written=m * n * dtype_bytes,
    )


def vector_cost(n: int, fused_input_count: int, lanes: int, dtype_bytes: int = 2,
                passes: int = 1) -> TileCost:
    if n < 0 or fused_input_count < 1:
        raise ValueError("vector op needs n >= 0 and at least one input")
    if n == 0:
        return TileCost(cycles=0)
    return TileCost(
        cycles=passes * _cdiv(n, lanes),
        vector_ops=passes * n,
        sram_bytes_read=passes * fused_input_count * n * dtype_bytes,
        sram_bytes_written=passes * n * dtype_bytes,
    )


def softmax_cost(rows: int, cols: int, lanes: int, dtype_bytes: int = 2) -> TileCost:
    # max, exp-and-sum, normalize: three passes over the tile
    return vector_cost(rows * cols, 1, lanes, dtype_bytes, passes=3)


class CostCache:
    """Memoizes tile costs keyed by (op kind, shape, SA width).

    Lookups are lock-free; inserts take a lock so concurrent writers agree
    on a single object per key.
    """

    def __init__(self) -> None:
        self._table: Dict[Hashable, TileCost] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def __len__(self) -> int:
        return len(self._table)

    def get(self, key: Hashable, compute) -> TileCost:
        cost = self._table.get(key)
        if cost is not None:
            self.hits += 1
            return cost
        value = compute()
        with self._lock:
            cost = self._table.setdefault(key, value)
        self.misses += 1
        return cost

    def op_cost(self, op: Tuple, sa_width: int, lanes: int, dtype_bytes: int = 2) -> TileCost:
        """Cost of a tile given as ``(kind, *dims)``."""
        kind = op[0]
        key = (op, sa_width, lanes, dtype_bytes)
        if kind == "matmul":
            _, m, k, n = op
            return self.get(key, lambda: matmul_cost(m, k, n, sa_width, dtype_bytes))
        if kind == "elementwise":
            _, n, fused = op
            return self.get(key, lambda: vector_cost(n, fused, lanes, dtype_bytes))
        if kind == "softmax":
            _, rows, cols = op
            return self.get(key, lambda: softmax_cost(rows, cols, lanes, dtype_bytes))
        if kind == "reduce":
            _, n = op
            # accumulate one incoming partial into the local one
            return self.get(key, lambda: vector_cost(n, 2, lanes, dtype_bytes))
        raise ValueError(f"unknown op kind {kind!r}")
