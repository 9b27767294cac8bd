"""Transformer model descriptions expanded into per-layer operator lists."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .graph import DTYPE_BYTES

PREFILL, DECODE = "prefill", "decode"


@dataclass(frozen=True)
class ModelSpec:
    name: str
    num_layers: int
    hidden_dim: int
    num_heads: int
    ffn_dim: int
    vocab_size: int
    num_kv_heads: Optional[int] = None
    head_dim: Optional[int] = None
    gated_ffn: bool = True
    kind: str = "decoder"           # "decoder" or "dit"
    image_tokens: int = 256
    dtype: str = "bf16"

    def __post_init__(self) -> None:
        for f in ("num_layers", "hidden_dim", "num_heads", "ffn_dim", "vocab_size"):
            if getattr(self, f) < 1:
                raise ValueError(f"{self.name}: {f} must be positive")
        if self.hidden_dim % self.num_heads:
            raise ValueError(f"{self.name}: hidden_dim {self.hidden_dim} not divisible by "
                             f"num_heads {self.num_heads}")
        if self.num_heads % self.kv_heads:
            raise ValueError(f"{self.name}: num_heads must be a multiple of kv heads")
        if self.kind not in ("decoder", "dit"):
            raise ValueError(f"{self.name}: unknown model kind {self.kind!r}")

    @property
    def kv_heads(self) -> int:
        return self.num_kv_heads or self.num_heads

    @property
    def dhead(self) -> int:
        return self.head_dim or self.hidden_dim // self.num_heads

    @property
    def dtype_bytes(self) -> int:
        return DTYPE_BYTES[self.dtype]

    def with_layers(self, n: int) -> "ModelSpec":
        return replace(self, num_layers=n)


@dataclass(frozen=True)
class PhaseSpec:
    phase: str
    batch: int = 32
    seq_len: int = 2048     # prompt length for prefill, context length for decode

    def __post_init__(self) -> None:
        if self.phase not in (PREFILL, DECODE):
            raise ValueError(f"unknown phase {self.phase!r}")
        if self.batch < 1 or self.seq_len < 1:
            raise ValueError("batch and sequence length must be >= 1")


@dataclass(frozen=True)
class Operator:
    """One model operator.

    ``dims`` is ``(M, K, N)`` for matmul, ``(n, fused_inputs)`` for
    elementwise, ``(rows, cols)`` for softmax and ``(n,)`` for a KV store.
    ``instances`` counts independent copies (batch x heads for attention).
    ``operand`` names where a matmul's B operand lives: ``"weight"`` and
    ``"kv"`` are in DRAM, ``"act"`` is a prior output.
    """

    name: str
    kind: str
    layer: int
    dims: Tuple[int, ...]
    instances: int = 1
    operand: str = "act"

    @property
    def flops(self) -> int:
        if self.kind == "matmul":
            m, k, n = self.dims
            return 2 * m * k * n * self.instances
        return self.dims[0] * (self.dims[1] if self.kind == "softmax" else 1) * self.instances

    def weight_elems(self) -> int:
        if self.kind == "matmul" and self.operand == "weight":
            _, k, n = self.dims
            return k * n * self.instances
        return 0

    def shape_key(self) -> Tuple:
        return (self.name, self.kind, self.dims, self.instances, self.operand)


def _data_file() -> Path:
    return Path(str(resources.files("voxel") / "data" / "models.json"))


def load_models(path: Optional[str] = None) -> Dict[str, ModelSpec]:
    text = Path(path).read_text() if path else _data_file().read_text()
    raw = json.loads(text)
    return {name.lower(): ModelSpec(name=name.lower(), **fields) for name, fields in raw.items()}


def get_model(name: str, path: Optional[str] = None) -> ModelSpec:
    models = load_models(path)
    key = name.lower()
    if key not in models:
        raise KeyError(f"unknown model {name!r}; known: {', '.join(sorted(models))}")
    return models[key]


def expand(model: ModelSpec, phase: PhaseSpec) -> List[Operator]:
    """Operators for one forward pass, layer by layer.

    Decode processes one new token per sequence against ``seq_len`` cached
    positions; prefill processes ``seq_len`` tokens per sequence. A DiT
    model has a single phase over its image tokens and no KV cache.
    """
    H, F, d = model.hidden_dim, model.ffn_dim, model.dhead
    h, kvh = model.num_heads, model.kv_heads
    group = h // kvh
    dit = model.kind == "dit"
    if dit:
        q_len, kv_len = model.image_tokens, model.image_tokens
    elif phase.phase == DECODE:
        q_len, kv_len = 1, phase.seq_len
    else:
        q_len, kv_len = phase.seq_len, phase.seq_len
    M = phase.batch * q_len
    # queries sharing one KV head are stacked into the M dimension
    rows = q_len * group
    inst = phase.batch * kvh
    ffn_up = F * (2 if model.gated_ffn else 1)
    ops: List[Operator] = []
    for layer in range(model.num_layers):
        ops += [
            Operator("norm_attn", "elementwise", layer, (M * H, 1)),
            Operator("qkv", "matmul", layer, (M, H, (h + 2 * kvh) * d), operand="weight"),
        ]
        if not dit:
            ops.append(Operator("kv_store", "store", layer, (2 * M * kvh * d,)))
        ops += [
            Operator("attn_score", "matmul", layer, (rows, d, kv_len), inst,
                     operand="act" if dit else "kv"),
            Operator("softmax", "softmax", layer, (rows, kv_len), inst),
            Operator("attn_ctx", "matmul", layer, (rows, kv_len, d), inst,
                     operand="act" if dit else "kv"),
            Operator("out_proj", "matmul", layer, (M, h * d, H), operand="weight"),
            Operator("residual_norm", "elementwise", layer, (M * H, 2)),
            Operator("ffn_up", "matmul", layer, (M, H, ffn_up), operand="weight"),
            Operator("ffn_act", "elementwise", layer, (M * F, 2 if model.gated_ffn else 1)),
            Operator("ffn_down", "matmul", layer, (M, F, H), operand="weight"),
            Operator("residual", "elementwise", layer, (M * H, 2)),
        ]
    return ops


def weight_bytes(ops: List[Operator], dtype_bytes: int = 2) -> int:
    return sum(op.weight_elems() for op in ops) * dtype_bytes


def layer_signature(ops: List[Operator], layer: int) -> Tuple:
    """Hashable multiset of operator shapes in one layer."""
    return tuple(sorted(op.shape_key() for op in ops if op.layer == layer))
