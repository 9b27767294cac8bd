"""Event-driven performance, energy and design-space model of AI accelerators on 3D-stacked DRAM."""

from .chipspec import ChipSpec, SpecError, area_of, derive_geometry, load_spec, render
from .engine import SimOptions, SimReport, simulate
from .mapping import place
from .paradigms import PARADIGMS, plan
from .runner import Workload, build_plan, run_workload
from .workloads import PhaseSpec, expand, get_model

__version__ = "0.1.0"

__all__ = [
    "ChipSpec", "SpecError", "area_of", "derive_geometry", "load_spec", "render",
    "SimOptions", "SimReport", "simulate", "place", "PARADIGMS", "plan",
    "Workload", "build_plan", "run_workload", "PhaseSpec", "expand", "get_model",
]
