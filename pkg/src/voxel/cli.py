"""Command-line front end: single runs, parameter sweeps, design-space search and trace replay."""

from __future__ import annotations

import argparse
import io
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from .chipspec import ChipSpec, SpecError, derive_geometry, load_spec, parse_overrides, render
from .dram_model import (AddressMap, ChannelState, CoalescingCache, DramTiming, Trace, coalesced_simulate,
                         load_trace, simulate_channel)
from .dse import DEFAULT_DOMAINS, DEFAULT_WORKLOADS, SimObjective, pareto_frontier, search
from .engine import SimOptions, SimReport, simulate
from .graph import GraphError, dump_graph
from .mapping import POLICIES, place
from .paradigms import PARADIGMS, TILE_MAPS
from .runner import Workload, build_plan

CSV_VERSION = 1


class CliError(Exception):
    pass


class _Once(argparse.Action):
    """Store a value, rejecting a second occurrence of the flag."""

    def __call__(self, parser, namespace, values, option_string=None):
        if getattr(namespace, f"_seen_{self.dest}", False):
            raise CliError(f"{option_string} given more than once")
        setattr(namespace, f"_seen_{self.dest}", True)
        setattr(namespace, self.dest, values)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(kind: str, header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    buf.write(f"# voxel-csv v{CSV_VERSION} {kind}\n")
    buf.write(",".join(header) + "\n")
    for r in rows:
        buf.write(",".join(_fmt(v) for v in r) + "\n")
    return buf.getvalue()


# -- argument handling ---------------------------------------------------------

def _add_spec_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--spec", action=_Once, help="chip spec file of 'key: value' lines")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one spec field")
    p.add_argument("--noc", action=_Once, help="NoC topology: mesh, torus or all2all")
    p.add_argument("--dram-bw", action=_Once, help="total DRAM bandwidth, e.g. 12e12 or '12 TB/s'")
    p.add_argument("--dram-timing", action=_Once, help="tCL-tRCD-tRP-tRAS, e.g. 14-14-14-34")
    p.add_argument("--power-limit", action=_Once, help="power density limit in W/mm2 ('inf' disables)")


def _add_workload_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", action=_Once, default="desk-1k")
    p.add_argument("--models", action=_Once, help="model description file (JSON)")
    p.add_argument("--phase", action=_Once, default="prefill", choices=("prefill", "decode"))
    p.add_argument("--batch", action=_Once, type=int, default=8)
    p.add_argument("--seq", action=_Once, type=int, default=256)
    p.add_argument("--layers", action=_Once, type=int, help="run only this many layers")
    p.add_argument("--paradigm", action=_Once, default="compute-shift", choices=PARADIGMS)
    p.add_argument("--tile-map", action=_Once, default="dim-ordered", choices=TILE_MAPS)
    p.add_argument("--placement", action=_Once, default="software-aware", choices=sorted(POLICIES))
    p.add_argument("--microbatches", action=_Once, type=int, default=4)
    p.add_argument("--seed", action=_Once, type=int, default=0)
    p.add_argument("--no-coalesce", action="store_true", help="simulate every DRAM request individually")


def resolve_spec(args) -> ChipSpec:
    base = load_spec(Path(args.spec).read_text()) if args.spec else ChipSpec()
    pairs: List[Tuple[str, str]] = []
    for item in args.set:
        if "=" not in item:
            raise CliError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        pairs.append((k.strip(), v))
    keys = [k for k, _ in pairs]
    repeated = sorted({k for k in keys if keys.count(k) > 1})
    if repeated:
        raise CliError(f"--set repeats {', '.join(repeated)}")
    flag_fields = (("noc", "noc_topology"), ("dram_bw", "dram_total_bw"), ("dram_timing", "dram_timing"),
                   ("power_limit", "power_density_limit"))
    for flag, key in flag_fields:
        value = getattr(args, flag, None)
        if value is None:
            continue
        if key in keys or (key == "dram_timing" and {"tCL", "tRCD", "tRP", "tRAS"} & set(keys)):
            raise CliError(f"--{flag.replace('_', '-')} conflicts with --set {key}")
        pairs.append((key, value))
    changes = parse_overrides(pairs)
    return base.replace(**changes) if changes else base


def _workload(args) -> Workload:
    return Workload(args.model, args.phase, args.batch, args.seq, args.layers, args.models)


def _report_text(spec: ChipSpec, wl: Workload, args, r: SimReport) -> str:
    lines = [f"workload: {wl.label}  paradigm: {args.paradigm}  tile map: {args.tile_map}  "
             f"placement: {args.placement}", "", "[chip spec]  digest " + spec.digest(), render(spec).rstrip(), ""]
    lines.append("[latency]")
    lines.append(f"total: {r.total_cycles:.1f} cycles ({r.seconds(spec) * 1e6:.3f} us)")
    for k, v in r.breakdown.items():
        frac = v / r.total_cycles if r.total_cycles else 0.0
        lines.append(f"  {k:<20} {v:>14.1f}  {frac:6.1%}")
    lines.append("")
    lines.append("[dram]")
    for k, v in r.dram.items():
        lines.append(f"  {k:<20} {v}")
    lines.append(f"  coalescing hit rate  {r.coalescing.get('hit_rate', 0.0):.4f}")
    lines.append("")
    lines.append("[energy]")
    lines.append(f"total: {r.energy.total:.6e} J")
    for k, v in r.energy.static.items():
        lines.append(f"  static  {k:<6} {v:.6e} J")
    for k, v in r.energy.dynamic.items():
        lines.append(f"  dynamic {k:<6} {v:.6e} J")
    lines.append(f"  throttled events {r.throttled_events}")
    return "\n".join(lines) + "\n"


_RUN_HEADER = ("workload", "paradigm", "tile_map", "placement", "seed", "spec_digest")


def _run_point(job) -> Tuple[List[str], List[object]]:
    spec, wl, paradigm, tile_map, placement, microbatches, coalesce, seed = job
    p = build_plan(spec, wl, paradigm, tile_map, microbatches)
    r = simulate(p.graph, spec, place(placement, p.graph, spec), SimOptions(coalesce=coalesce))
    row = r.row()
    return list(row), [wl.label, paradigm, tile_map, placement, seed, spec.digest()] + list(row.values())


# -- subcommands -------------------------------------------------------------

def cmd_run(args) -> int:
    spec = resolve_spec(args)
    wl = _workload(args)
    p = build_plan(spec, wl, args.paradigm, args.tile_map, args.microbatches)
    if args.dump_graph:
        Path(args.dump_graph).write_text(dump_graph(p.graph))
    r = simulate(p.graph, spec, place(args.placement, p.graph, spec),
                 SimOptions(coalesce=not args.no_coalesce, timeline=bool(args.timeline)))
    sys.stdout.write(_report_text(spec, wl, args, r))
    if args.timeline:
        rows = [(eid, kind, "" if core is None else core, start, end) for eid, kind, core, start, end in r.timeline]
        Path(args.timeline).write_text(write_csv("timeline", ("event", "kind", "core", "start", "end"), rows))
    if args.out:
        row = r.row()
        Path(args.out).write_text(write_csv("run", list(_RUN_HEADER) + list(row), [
            [wl.label, args.paradigm, args.tile_map, args.placement, args.seed, spec.digest()] + list(row.values())]))
    return 0


_SWEEP_EXTRA = {"paradigm", "placement", "tile_map", "phase", "batch", "seq"}


def cmd_sweep(args) -> int:
    spec0 = resolve_spec(args)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise CliError("--values is empty")
    jobs = []
    for v in values:
        spec, wl = spec0, _workload(args)
        paradigm, tile_map, placement = args.paradigm, args.tile_map, args.placement
        if args.param in _SWEEP_EXTRA:
            if args.param == "paradigm":
                paradigm = v
            elif args.param == "placement":
                placement = v
            elif args.param == "tile_map":
                tile_map = v
            elif args.param == "phase":
                wl = Workload(wl.model, v, wl.batch, wl.seq_len, wl.layers, wl.models_file)
            else:
                n = int(v)
                wl = Workload(wl.model, wl.phase, n if args.param == "batch" else wl.batch,
                              n if args.param == "seq" else wl.seq_len, wl.layers, wl.models_file)
        else:
            spec = spec0.replace(**parse_overrides([(args.param, v)]))
        jobs.append((spec, wl, paradigm, tile_map, placement, args.microbatches, not args.no_coalesce, args.seed))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_point, jobs))
    else:
        results = [_run_point(j) for j in jobs]
    header = ["param", "value"] + list(_RUN_HEADER) + results[0][0]
    rows = [[args.param, v] + vals for v, (_, vals) in zip(values, results)]
    text = write_csv("sweep", header, rows)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_dse(args) -> int:
    spec0 = resolve_spec(args)
    domains = dict(DEFAULT_DOMAINS)
    for item in args.domain:
        name, _, vals = item.partition("=")
        if name not in DEFAULT_DOMAINS and name not in ChipSpec.__dataclass_fields__:
            raise CliError(f"--domain: unknown parameter {name!r}")
        domains[name] = tuple(parse_overrides([(name, v)])[name] for v in vals.split(",") if v.strip())
        if not domains[name]:
            raise CliError(f"--domain {name} has no values")
    objective = SimObjective(DEFAULT_WORKLOADS, args.paradigm, args.placement, args.tile_map)
    runs, points = search(spec0, args.area_limit, objective, domains, args.thresholds, args.ratio,
                          jobs=args.jobs)
    frontier = {id(p) for p in pareto_frontier(points, key=lambda e: (e.area, e.objective))}
    names = list(domains)
    labels = sorted({k for p in points for k in p.latencies})
    header = ["spec_hash"] + names + ["area_mm2"] + [f"latency_s:{w}" for w in labels] + ["geomean_s", "dominated"]
    rows = []
    for p in sorted(points, key=lambda e: (e.area, e.objective, e.spec.digest())):
        vals = p.values(names)
        rows.append([p.spec.digest()] + [vals[n] for n in names] + [p.area] +
                    [p.latencies.get(w, "") for w in labels] + [p.objective, int(id(p) not in frontier)])
    text = write_csv("dse", header, rows)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    for r in runs:
        sys.stderr.write(f"threshold {r.threshold:.1f} mm2: best {r.best.spec.digest()} "
                         f"area {r.best.area:.1f} geomean {r.best.objective:.6e} s\n")
    return 0


def cmd_trace_replay(args) -> int:
    spec = resolve_spec(args)
    geo = derive_geometry(spec, warn=False)
    timing, amap = DramTiming.from_spec(spec, geo), AddressMap.from_spec(spec, geo)
    reqs = load_trace(Path(args.trace).read_text())
    cache = CoalescingCache(timing, amap)
    rows = []
    for ch in sorted(reqs):
        trace = Trace.from_requests(reqs[ch]).sorted()
        res = coalesced_simulate(trace, cache) if args.coalesce else \
            simulate_channel(trace, ChannelState(), timing, amap)
        for i in range(len(trace.addr)):
            rows.append((ch, hex(int(trace.addr[i])), "W" if trace.op[i] else "R", int(trace.arrival[i]),
                         int(res.departure[i]), int(res.stall[i]), ("hit", "miss", "conflict")[int(res.kind[i])]))
    text = write_csv("trace-replay", ("channel", "addr", "op", "arrival", "departure", "stall", "kind"), rows)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="voxel", description="3D-DRAM AI accelerator simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate one workload")
    _add_spec_flags(run)
    _add_workload_flags(run)
    run.add_argument("--timeline", action=_Once, help="write per-event timeline CSV here")
    run.add_argument("--dump-graph", action=_Once, help="write the execution graph text here")
    run.add_argument("--out", action=_Once, help="write a one-row CSV here")
    run.set_defaults(fn=cmd_run)

    sw = sub.add_parser("sweep", help="simulate one workload over a list of parameter values")
    _add_spec_flags(sw)
    _add_workload_flags(sw)
    sw.add_argument("--param", action=_Once, required=True)
    sw.add_argument("--values", action=_Once, required=True, help="comma-separated values")
    sw.add_argument("--jobs", action=_Once, type=int, default=1)
    sw.add_argument("--out", action=_Once)
    sw.set_defaults(fn=cmd_sweep)

    d = sub.add_parser("dse", help="area-constrained coordinate-descent search")
    _add_spec_flags(d)
    d.add_argument("--area-limit", action=_Once, type=float, default=850.0)
    d.add_argument("--thresholds", action=_Once, type=int, default=4)
    d.add_argument("--ratio", action=_Once, type=float, default=0.75)
    d.add_argument("--paradigm", action=_Once, default="compute-shift", choices=PARADIGMS)
    d.add_argument("--tile-map", action=_Once, default="dim-ordered", choices=TILE_MAPS)
    d.add_argument("--placement", action=_Once, default="software-aware", choices=sorted(POLICIES))
    d.add_argument("--domain", action="append", default=[], metavar="NAME=V1,V2,...",
                   help="replace one parameter's search domain")
    d.add_argument("--jobs", action=_Once, type=int, default=1)
    d.add_argument("--out", action=_Once)
    d.set_defaults(fn=cmd_dse)

    tr = sub.add_parser("trace-replay", help="replay a DRAM request trace through the channel model")
    _add_spec_flags(tr)
    tr.add_argument("--trace", action=_Once, required=True, help="CSV of channel,addr,op,arrival")
    tr.add_argument("--coalesce", action="store_true", help="use the coalescing cache")
    tr.add_argument("--out", action=_Once)
    tr.set_defaults(fn=cmd_trace_replay)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "microbatches", 1) < 1:
            raise CliError("--microbatches must be >= 1")
        if getattr(args, "jobs", 1) < 1:
            raise CliError("--jobs must be >= 1")
        return args.fn(args)
    except (CliError, SpecError, GraphError, KeyError, ValueError, FileNotFoundError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        sys.stderr.write(f"voxel: error: {msg}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
