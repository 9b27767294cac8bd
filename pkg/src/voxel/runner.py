"""Plan, place and simulate one workload on one chip."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .chipspec import ChipSpec
from .engine import SimOptions, SimReport, simulate
from .mapping import place
from .paradigms import Plan, plan
from .workloads import ModelSpec, PhaseSpec, expand, get_model


@dataclass(frozen=True)
class Workload:
    model: str
    phase: str
    batch: int = 8
    seq_len: int = 256
    layers: Optional[int] = None        # reduced layer count; None keeps the model's own
    models_file: Optional[str] = None

    @property
    def label(self) -> str:
        layers = f"-L{self.layers}" if self.layers else ""
        return f"{self.model}{layers}-{self.phase}-b{self.batch}-s{self.seq_len}"

    def model_spec(self) -> ModelSpec:
        m = get_model(self.model, self.models_file)
        return m.with_layers(self.layers) if self.layers else m


def build_plan(spec: ChipSpec, wl: Workload, paradigm: str = "compute-shift",
               tile_map: str = "dim-ordered", microbatches: int = 4) -> Plan:
    ops = expand(wl.model_spec(), PhaseSpec(wl.phase, wl.batch, wl.seq_len))
    return plan(paradigm, ops, spec, tile_map=tile_map, microbatches=microbatches)


def run_workload(spec: ChipSpec, wl: Workload, paradigm: str = "compute-shift", tile_map: str = "dim-ordered",
                 placement: str = "software-aware", options: Optional[SimOptions] = None,
                 microbatches: int = 4) -> SimReport:
    p = build_plan(spec, wl, paradigm, tile_map, microbatches)
    return simulate(p.graph, spec, place(placement, p.graph, spec), options or SimOptions())
