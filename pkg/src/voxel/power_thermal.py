"""Energy accounting and power-density throttling.

Dynamic energy is activity times per-unit constants; static energy is each
component's static power times elapsed time. A thermal region is one core
plus the DRAM stacked above it, sharing that core's footprint.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Callable, Dict, Optional

from .chipspec import ChipSpec, area_of

COMPONENTS = ("SA", "VU", "SRAM", "NoC", "DRAM", "TSV")


class ThermalError(ValueError):
    pass


@dataclass(frozen=True)
class EnergyConstants:
    mac_pj: float = 0.5
    vu_pj_per_op: float = 0.2
    sram_pj_per_byte: float = 1.0
    noc_pj_per_byte_hop: float = 0.8
    dram_pj_per_byte: float = 4.0
    tsv_pj_per_byte: float = 0.4
    logic_static_w_per_mm2: float = 0.0695
    dram_static_w_per_gib: float = 0.1

    @classmethod
    def load(cls, path: Optional[str] = None) -> "EnergyConstants":
        src = Path(path) if path else Path(str(resources.files("voxel") / "data" / "energy.json"))
        raw = json.loads(src.read_text())
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown energy constants: {', '.join(sorted(unknown))}")
        return cls(**raw)


@dataclass
class Activity:
    macs: int = 0
    vector_ops: int = 0
    sram_bytes: int = 0
    noc_byte_hops: float = 0.0
    dram_bytes: int = 0
    tsv_bytes: int = 0

    def add(self, other: "Activity") -> None:
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))


def event_energy(act: Activity, k: EnergyConstants) -> Dict[str, float]:
    """Dynamic energy in joules per component."""
    pj = 1e-12
    return {
        "SA": act.macs * k.mac_pj * pj,
        "VU": act.vector_ops * k.vu_pj_per_op * pj,
        "SRAM": act.sram_bytes * k.sram_pj_per_byte * pj,
        "NoC": act.noc_byte_hops * k.noc_pj_per_byte_hop * pj,
        "DRAM": act.dram_bytes * k.dram_pj_per_byte * pj,
        "TSV": act.tsv_bytes * k.tsv_pj_per_byte * pj,
    }


def static_power(spec: ChipSpec, k: EnergyConstants) -> Dict[str, float]:
    """Static watts per component; VU and NoC split the remaining logic area evenly."""
    a = area_of(spec)
    w = k.logic_static_w_per_mm2
    return {
        "SA": a.sa_area_total * w,
        "VU": a.other_area * w / 2,
        "SRAM": a.sram_area_total * w,
        "NoC": a.other_area * w / 2,
        "DRAM": spec.dram_capacity / 2 ** 30 * k.dram_static_w_per_gib,
        "TSV": a.tsv_area_total * w,
    }


@dataclass(frozen=True)
class EnergyReport:
    static: Dict[str, float]
    dynamic: Dict[str, float]
    total: float

    @classmethod
    def build(cls, static: Dict[str, float], dynamic: Dict[str, float]) -> "EnergyReport":
        return cls(dict(static), dict(dynamic), _sum_parts(static, dynamic))

    def identity_holds(self) -> bool:
        return self.total == _sum_parts(self.static, self.dynamic) and \
            all(v >= 0 for v in list(self.static.values()) + list(self.dynamic.values()))


def _sum_parts(static: Dict[str, float], dynamic: Dict[str, float]) -> float:
    return sum(static[c] for c in COMPONENTS) + sum(dynamic[c] for c in COMPONENTS)


def energy_report(spec: ChipSpec, k: EnergyConstants, activity: Activity, cycles: float) -> EnergyReport:
    seconds = cycles / (spec.core_freq_ghz * 1e9)
    static = {c: p * seconds for c, p in static_power(spec, k).items()}
    return EnergyReport.build(static, event_energy(activity, k))


@dataclass
class PowerDensityState:
    region_area: float
    static_w: float
    limit: float
    throttle: Dict[int, float] = field(default_factory=dict)


class Throttle:
    """Scales a compute event's duration when its region runs over the density limit.

    Region power is taken to scale with core frequency, so running at
    ``limit / density`` of nominal frequency brings the region exactly to
    the limit in one step.
    """

    def __init__(self, spec: ChipSpec, k: EnergyConstants,
                 density_override: Optional[Callable[[int], float]] = None) -> None:
        self.spec = spec
        self.k = k
        self.limit = spec.power_density_limit
        self.override = density_override
        area = area_of(spec)
        region_area = area.total / spec.num_cores
        static_w = sum(static_power(spec, k).values()) / spec.num_cores
        self.state = PowerDensityState(region_area, static_w, self.limit)
        self.freq_hz = spec.core_freq_ghz * 1e9
        if math.isfinite(self.limit) and static_w / region_area > self.limit:
            raise ThermalError(f"static power density {static_w / region_area:.3f} W/mm2 exceeds "
                               f"the limit {self.limit} W/mm2; no frequency scaling can help")

    @property
    def active(self) -> bool:
        return math.isfinite(self.limit) or self.override is not None

    def density(self, core: int, act: Activity, cycles: float) -> float:
        if self.override is not None:
            return self.override(core)
        if cycles <= 0:
            return self.state.static_w / self.state.region_area
        joules = sum(event_energy(act, self.k).values())
        watts = self.state.static_w + joules * self.freq_hz / cycles
        return watts / self.state.region_area

    def factor(self, core: int, act: Activity, cycles: float) -> float:
        if not self.active:
            return 1.0
        d = self.density(core, act, cycles)
        if d <= self.limit:
            return 1.0
        f = d / self.limit
        self.state.throttle[core] = max(self.state.throttle.get(core, 1.0), f)
        return f
