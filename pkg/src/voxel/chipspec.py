"""Hardware parameterization of a 3D-stacked AI chip.

A ``ChipSpec`` is immutable. Load one from a flat ``key: value`` document
(values may carry units, e.g. ``sram_per_core: 2 MB``), derive the DRAM and
core-grid geometry from it, and compute the bottom-die area breakdown.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, Optional, Tuple


class SpecError(ValueError):
    """Invalid chip configuration (parse error or violated constraint)."""


class NocTopology(str, Enum):
    MESH2D = "mesh"
    TORUS2D = "torus"
    ALL_TO_ALL = "all2all"

    @classmethod
    def parse(cls, text: str) -> "NocTopology":
        aliases = {
            "mesh": cls.MESH2D, "mesh2d": cls.MESH2D,
            "torus": cls.TORUS2D, "torus2d": cls.TORUS2D,
            "all2all": cls.ALL_TO_ALL, "alltoall": cls.ALL_TO_ALL,
            "all-to-all": cls.ALL_TO_ALL,
        }
        key = text.strip().lower()
        if key not in aliases:
            raise SpecError(f"unknown NoC topology {text!r}")
        return aliases[key]


# Area calibration at the default configuration (bottom die, mm^2):
# systolic arrays 260, SRAM 433, TSV 18.4, other 91.2.
_DEFAULT_CORES = 256
_DEFAULT_SA = 32
_DEFAULT_SRAM = 2048 * 1024
_DEFAULT_BW = 12e12

AREA_PER_MAC_MM2 = 260.0 / (_DEFAULT_CORES * _DEFAULT_SA ** 2)
AREA_PER_SRAM_BYTE_MM2 = 433.0 / (_DEFAULT_CORES * _DEFAULT_SRAM)
# TSV area is charged per byte/s of DRAM bandwidth carried across the die.
AREA_PER_TSV_BW_MM2 = 18.4 / _DEFAULT_BW
AREA_OTHER_PER_CORE_MM2 = 91.2 / _DEFAULT_CORES


@dataclass(frozen=True)
class ChipSpec:
    """Full parameterization of a simulated chip.

    Frequencies are in GHz, bandwidths in bytes/s (DRAM) or bytes/cycle
    (NoC, SRAM), capacities in bytes, DRAM timings in DRAM cycles.
    """

    num_cores: int = 256
    sa_width: int = 32
    vector_lanes: int = 64
    sram_per_core: int = 2048 * 1024
    sram_read_bw: int = 64
    sram_write_bw: int = 32
    core_freq_ghz: float = 1.6
    noc_topology: NocTopology = NocTopology.MESH2D
    noc_link_bw: float = 32.0
    noc_hop_latency: int = 1
    dram_total_bw: float = 12e12
    dram_capacity: int = 192 * 1024 ** 3
    dram_layers: int = 8
    banks_per_layer: int = 16
    tCL: int = 14
    tRCD: int = 14
    tRP: int = 14
    tRAS: int = 34
    tWTR: int = 8
    dram_interface: int = 128
    dram_row_bytes: int = 2048
    dram_queue_depth: int = 32
    dram_freq_ghz: float = 1.6
    tREFI_ns: float = 3900.0
    tRFC_ns: float = 350.0
    core_group_size: int = 8
    power_density_limit: float = 0.7
    dtype_bytes: int = 2

    def __post_init__(self) -> None:
        if isinstance(self.noc_topology, str) and not isinstance(self.noc_topology, NocTopology):
            object.__setattr__(self, "noc_topology", NocTopology.parse(self.noc_topology))
        validate(self)

    def replace(self, **changes) -> "ChipSpec":
        return dataclasses.replace(self, **changes)

    @property
    def num_groups(self) -> int:
        return self.num_cores // self.core_group_size

    def digest(self) -> str:
        """Short stable hash of the resolved configuration."""
        return hashlib.sha1(render(self).encode()).hexdigest()[:12]


_COUNT_FIELDS = (
    "num_cores", "sa_width", "vector_lanes", "dram_layers", "banks_per_layer",
    "dram_interface", "dram_queue_depth", "core_group_size", "dram_row_bytes",
    "dtype_bytes", "sram_read_bw", "sram_write_bw",
)


def validate(spec: ChipSpec) -> None:
    for name in _COUNT_FIELDS:
        if int(getattr(spec, name)) < 1:
            raise SpecError(f"{name} must be >= 1 (got {getattr(spec, name)})")
    if spec.sa_width & (spec.sa_width - 1):
        raise SpecError(f"sa_width must be a power of two (got {spec.sa_width})")
    if spec.sram_per_core <= 0:
        raise SpecError("sram_per_core must be > 0")
    if spec.num_cores % spec.core_group_size:
        raise SpecError(
            f"core_group_size {spec.core_group_size} does not divide num_cores {spec.num_cores}")
    for name in ("core_freq_ghz", "dram_freq_ghz", "noc_link_bw", "dram_total_bw", "dram_capacity"):
        if not getattr(spec, name) > 0:
            raise SpecError(f"{name} must be > 0")
    for name in ("tCL", "tRCD", "tRP", "tRAS", "tWTR", "noc_hop_latency"):
        if getattr(spec, name) < 0:
            raise SpecError(f"{name} must be >= 0")
    if spec.dram_row_bytes % spec.dram_interface:
        raise SpecError("dram_row_bytes must be a multiple of dram_interface")
    if spec.power_density_limit <= 0:
        raise SpecError("power_density_limit must be > 0")
    # Core-to-core transfers must be slower than the SRAM can feed them.
    if not spec.noc_link_bw < spec.sram_read_bw:
        raise SpecError(
            f"noc_link_bw ({spec.noc_link_bw}) must be strictly below sram_read_bw ({spec.sram_read_bw})")
    rows, cols = grid_shape(spec.num_cores)
    if spec.core_group_size > 1 and not _group_is_adjacent(spec.core_group_size, rows, cols):
        raise SpecError(
            f"core_group_size {spec.core_group_size} cannot form physically adjacent groups on a {rows}x{cols} grid")


def _group_is_adjacent(g: int, rows: int, cols: int) -> bool:
    # Groups are row-major strips (wrapping to the next row only when g is a
    # multiple of the row width), so they stay rectangles.
    return cols % g == 0 or g % cols == 0


def grid_shape(n: int) -> Tuple[int, int]:
    """Most square factorization ``rows x cols`` with ``rows <= cols``."""
    r = int(math.isqrt(n))
    while n % r:
        r -= 1
    return r, n // r


# -- geometry ---------------------------------------------------------------

@dataclass(frozen=True)
class DerivedGeometry:
    grid_rows: int
    grid_cols: int
    channel_count: int
    banks_per_channel: int
    bank_bytes: int
    rows_per_bank: int
    channel_bw: float          # bytes/s
    channel_bytes_per_cycle: float   # per DRAM cycle
    burst_beats: int           # DRAM cycles to transfer one interface beat
    banks_rounded: bool        # banks < channels, so banks were rounded up

    @property
    def grid(self) -> Tuple[int, int]:
        return self.grid_rows, self.grid_cols

    def coord(self, core: int) -> Tuple[int, int]:
        return divmod(core, self.grid_cols)

    def core_at(self, row: int, col: int) -> int:
        return row * self.grid_cols + col


def _pow2_ceil(x: int) -> int:
    return 1 << max(0, (int(x) - 1).bit_length())


def derive_geometry(spec: ChipSpec, warn: bool = True) -> DerivedGeometry:
    """Grid, channel and bank geometry.

    One TSV channel sits above every core. Banks are spread round-robin over
    the channels; a channel always gets at least one logical bank. Bank
    counts and bank sizes are rounded up to powers of two so that addresses
    decompose into bit fields.
    """
    rows, cols = grid_shape(spec.num_cores)
    channels = spec.num_cores
    total_banks = spec.dram_layers * spec.banks_per_layer
    rounded = total_banks < channels
    bpc = _pow2_ceil(max(1, -(-total_banks // channels)))
    if rounded and warn:
        warnings.warn(
            f"{total_banks} banks over {channels} channels: each channel gets 1 logical bank "
            "and capacity is split", RuntimeWarning, stacklevel=2)
    per_channel_cap = spec.dram_capacity // channels
    bank_bytes = _pow2_ceil(max(spec.dram_row_bytes, -(-per_channel_cap // bpc)))
    channel_bw = spec.dram_total_bw / channels
    bpc_cycle = channel_bw / (spec.dram_freq_ghz * 1e9)
    beats = max(1, math.ceil(spec.dram_interface / bpc_cycle - 1e-9))
    return DerivedGeometry(
        grid_rows=rows, grid_cols=cols, channel_count=channels,
        banks_per_channel=bpc, bank_bytes=bank_bytes,
        rows_per_bank=bank_bytes // spec.dram_row_bytes,
        channel_bw=channel_bw, channel_bytes_per_cycle=bpc_cycle,
        burst_beats=beats, banks_rounded=rounded,
    )


def core_groups(spec: ChipSpec) -> list:
    """Lists of core ids, one per group, each a row-major adjacent strip."""
    g = spec.core_group_size
    return [list(range(i, i + g)) for i in range(0, spec.num_cores, g)]


# -- area -------------------------------------------------------------------

@dataclass(frozen=True)
class AreaModel:
    sa_area_total: float
    sram_area_total: float
    tsv_area_total: float
    other_area: float
    per_region: Dict[Tuple[int, int], Dict[str, float]] = field(default_factory=dict, compare=False)

    @property
    def total(self) -> float:
        return self.sa_area_total + self.sram_area_total + self.tsv_area_total + self.other_area

    @property
    def region_area(self) -> float:
        return self.total / max(1, len(self.per_region))


def area_of(spec: ChipSpec) -> AreaModel:
    sa = spec.num_cores * spec.sa_width ** 2 * AREA_PER_MAC_MM2
    sram = spec.num_cores * spec.sram_per_core * AREA_PER_SRAM_BYTE_MM2
    tsv = spec.dram_total_bw * AREA_PER_TSV_BW_MM2
    other = spec.num_cores * AREA_OTHER_PER_CORE_MM2
    rows, cols = grid_shape(spec.num_cores)
    n = spec.num_cores
    share = {"sa": sa / n, "sram": sram / n, "tsv": tsv / n, "other": other / n}
    regions = {(r, c): dict(share) for r in range(rows) for c in range(cols)}
    return AreaModel(sa, sram, tsv, other, regions)


# -- text format ------------------------------------------------------------

_BYTE_UNITS = {"b": 1, "kb": 1024, "mb": 1024 ** 2, "gb": 1024 ** 3, "tb": 1024 ** 4,
               "kib": 1024, "mib": 1024 ** 2, "gib": 1024 ** 3}
_BW_UNITS = {"b/s": 1.0, "kb/s": 1e3, "mb/s": 1e6, "gb/s": 1e9, "tb/s": 1e12,
             "gbps": 1e9, "tbps": 1e12}
_FIELDS = {f.name: f for f in dataclasses.fields(ChipSpec)}
_BYTE_FIELDS = {"sram_per_core", "dram_capacity", "dram_interface", "dram_row_bytes"}


def _parse_value(name: str, raw: str):
    text = raw.strip()
    ftype = _FIELDS[name].type
    if name == "noc_topology":
        return NocTopology.parse(text)
    parts = text.split(None, 1)
    number, unit = parts[0], (parts[1].strip().lower().replace(" ", "") if len(parts) > 1 else "")
    try:
        value = float(number)
    except ValueError:
        raise SpecError(f"{name}: cannot parse number from {raw!r}") from None
    if unit:
        if name in _BYTE_FIELDS and unit in _BYTE_UNITS:
            value *= _BYTE_UNITS[unit]
        elif name == "dram_total_bw" and unit in _BW_UNITS:
            value *= _BW_UNITS[unit]
        elif name == "noc_link_bw" and unit in ("b/cycle", "bytes/cycle"):
            pass
        elif name.endswith("_ghz") and unit == "ghz":
            pass
        elif name.endswith("_ghz") and unit == "mhz":
            value /= 1000.0
        elif name.endswith("_ns") and unit in ("ns", "us"):
            value *= 1000.0 if unit == "us" else 1.0
        elif name == "power_density_limit" and unit in ("w/mm2", "w/mm^2"):
            pass
        else:
            raise SpecError(f"{name}: unsupported unit {parts[1]!r}")
    if ftype in ("int", int):
        if value != int(value):
            raise SpecError(f"{name}: expected an integer, got {raw!r}")
        return int(value)
    return value


def parse_overrides(pairs: Iterable[Tuple[str, str]], where: Iterable[str] = ()) -> dict:
    out: dict = {}
    labels = list(where)
    for i, (key, raw) in enumerate(pairs):
        label = labels[i] if i < len(labels) else key
        key = key.strip()
        if key == "dram_timing":
            try:
                a, b, c, d = (int(v) for v in raw.strip().split("-"))
            except ValueError:
                raise SpecError(f"{label}: dram_timing must look like 14-14-14-34") from None
            out.update(tCL=a, tRCD=b, tRP=c, tRAS=d)
            continue
        if key not in _FIELDS:
            raise SpecError(f"{label}: unknown key {key!r}")
        try:
            out[key] = _parse_value(key, raw)
        except SpecError as exc:
            raise SpecError(f"{label}: {exc}") from None
    return out


def load_spec(text: str, base: Optional[ChipSpec] = None) -> ChipSpec:
    """Parse a ``key: value`` document; absent keys keep their defaults."""
    pairs, where = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if ":" not in stripped:
            raise SpecError(f"line {lineno}: expected 'key: value', got {line.strip()!r}")
        key, raw = stripped.split(":", 1)
        pairs.append((key, raw))
        where.append(f"line {lineno}")
    changes = parse_overrides(pairs, where)
    base = base or ChipSpec()
    return dataclasses.replace(base, **changes)


def render(spec: ChipSpec) -> str:
    lines = []
    for f in dataclasses.fields(ChipSpec):
        value = getattr(spec, f.name)
        if isinstance(value, NocTopology):
            value = value.value
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{f.name}: {value}")
    return "\n".join(lines) + "\n"
