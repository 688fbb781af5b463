"""Command-line front end: solve, pvcurve, generate, bench.

Exit codes: 0 success, 2 input error, 3 non-convergence, 4 internal
error.  Solver failures leave a machine-readable ``error.json`` in the
output directory.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import shutil
import sys
import time
from pathlib import Path

import numpy as np

from .gsn import GsnError, GsnOptions, solve_gsn
from .ingest import (
    CaseFormatError,
    CouplingMap,
    parse_coupling_map,
    parse_feeder_doc,
    parse_transmission,
    build_combined,
)
from .netmodel import NetworkError, build_index_map, validate
from .newton import SolveFailure, SolverOptions, solve_direct
from .results import poi_extremes, poi_voltages, solution_dict

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NO_CONVERGENCE = 3
EXIT_INTERNAL = 4

PVCURVE_HEADER = "lf"
BENCH_HEADER = "k,unknowns,wall_time_s,epochs,mean_inner_iterations"


class InputError(ValueError):
    pass


def _solver_options(args) -> SolverOptions:
    base = {}
    if getattr(args, "options", None):
        base = json.loads(Path(args.options).read_text())
    fields = {f.name for f in dataclasses.fields(SolverOptions)}
    unknown = set(base) - fields
    if unknown:
        raise InputError(f"unknown solver option(s) in {args.options}: {sorted(unknown)}")
    opts = SolverOptions(**base)
    if args.tol is not None:
        opts.tol = args.tol
    if args.dvmax is not None:
        opts.dv_max = args.dvmax
    if args.gamma is not None:
        opts.gamma = args.gamma
    if args.homotopy is not None:
        opts.homotopy = args.homotopy
    return opts


def _gsn_options(args, out_dir: Path | None) -> GsnOptions:
    gsn = GsnOptions(workers=args.workers)
    if args.outer_tol is not None:
        gsn.outer_tol = args.outer_tol
    if out_dir is not None:
        gsn.epoch_log_path = out_dir / "epochs.jsonl"
    return gsn


def _load_network(args):
    case = Path(args.case)
    if not case.exists():
        raise InputError(f"case file {case} not found")
    tnet = parse_transmission(case)
    if args.coupling:
        cpath = Path(args.coupling)
        if not cpath.exists():
            raise InputError(f"coupling map {cpath} not found")
        cmap = parse_coupling_map(cpath)
        docs = {}
        for entry in cmap.entries:
            fpath = cmap.feeder_path(entry)
            if not fpath.exists():
                raise InputError(f"feeder file {fpath} not found")
            docs[entry.feeder] = parse_feeder_doc(fpath)
        net = build_combined(tnet, cmap, docs, keep_bus_load=args.keep_bus_load)
    else:
        net = tnet
    violations = validate(net)
    if violations:
        raise InputError("invalid network:\n" + "\n".join(f"  {v}" for v in violations))
    return net


def _solve(net, args, out_dir: Path | None):
    opts = _solver_options(args)
    if args.solver == "gsn":
        gsn = _gsn_options(args, out_dir)
        x, rep = solve_gsn(net, opts, gsn)
        return x, rep.to_dict(), rep
    x, rep = solve_direct(net, opts)
    return x, rep.to_dict(), rep


def _write_error(out_dir: Path | None, code: int, message: str) -> None:
    record = {"schema": 1, "error": message, "exit_code": code}
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "error.json").write_text(json.dumps(record, indent=2) + "\n")
    print(f"error: {message}", file=sys.stderr)


# ----------------------------------------------------------------------
# solve
# ----------------------------------------------------------------------


def cmd_solve(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    net = _load_network(args)
    x, rep_dict, _rep = _solve(net, args, out_dir)
    imap = build_index_map(net)

    (out_dir / "solution.json").write_text(json.dumps(solution_dict(net, imap, x), indent=2) + "\n")
    (out_dir / "report.json").write_text(json.dumps(rep_dict, indent=2) + "\n")

    lines = ["tandem solve summary", f"case: {args.case}", f"solver: {args.solver}"]
    lines.append("converged: yes")
    if "final_residual" in rep_dict:
        lines.append(f"final residual: {rep_dict['final_residual']:.3e}")
    if "epochs" in rep_dict:
        lines.append(f"epochs: {rep_dict['epochs']}")
    if "iterations" in rep_dict:
        lines.append(f"iterations: {rep_dict['iterations']}")
    ext = poi_extremes(net, imap, x)
    if ext is None:
        lines.append("ports: 0 (POI-free network)")
        mags = [(abs(imap.voltage(x, b.id, ph)), b.id, ph) for b in net.buses for ph in b.phases]
        hi, lo = max(mags), min(mags)
        lines.append(f"max voltage: bus {hi[1]} phase {hi[2]}  {hi[0]:.4f}")
        lines.append(f"min voltage: bus {lo[1]} phase {lo[2]}  {lo[0]:.4f}")
    else:
        lines.append(f"ports: {len(net.ports)}")
        lines.append("POI substation voltages:")
        lines.append("              node      magnitude")
        lines.append(f"max voltage   {ext['max']['node']:<8}  {ext['max']['magnitude']:.4f}")
        lines.append(f"min voltage   {ext['min']['node']:<8}  {ext['min']['magnitude']:.4f}")
    summary = "\n".join(lines) + "\n"
    (out_dir / "summary.txt").write_text(summary)
    print(summary, end="")
    return EXIT_OK


# ----------------------------------------------------------------------
# pvcurve
# ----------------------------------------------------------------------


def _lf_values(start: float, stop: float, step: float) -> list[float]:
    if step <= 0 or stop < start:
        raise InputError("loading-factor range must satisfy start <= stop, step > 0")
    out, v, k = [], start, 0
    while v <= stop + 1e-9:
        out.append(round(v, 9))
        k += 1
        v = start + k * step
    return out


def _parse_contingency(spec: str | None, net):
    if not spec:
        return None
    drop_elements, drop_gens = [], []
    for item in spec.split(","):
        item = item.strip()
        if not item:
            continue
        kind, _, val = item.partition(":")
        if kind == "branch":
            drop_elements.append(int(val))
        elif kind == "gen":
            drop_gens.append(int(val))
        else:
            raise InputError(f"bad contingency item {item!r}; use branch:<id> or gen:<bus>")
    known_el = {e.id for e in net.elements}
    for eid in drop_elements:
        if eid not in known_el:
            raise InputError(f"contingency branch {eid} not in the case")
    known_gen = {g.bus for g in net.generators}
    for b in drop_gens:
        if b not in known_gen:
            raise InputError(f"contingency generator bus {b} not in the case")
    return drop_elements, drop_gens


def _svg_plot(path: Path, series: dict[str, list[tuple[float, float]]], x_label: str, y_label: str) -> None:
    """Minimal polyline plot; one line per named series."""
    w, h, margin = 640, 420, 50
    pts = [p for s in series.values() for p in s]
    if not pts:
        path.write_text('<svg xmlns="http://www.w3.org/2000/svg"/>\n')
        return
    xs, ys = [p[0] for p in pts], [p[1] for p in pts]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0

    def sx(x):
        return margin + (x - x0) / (x1 - x0) * (w - 2 * margin)

    def sy(y):
        return h - margin - (y - y0) / (y1 - y0) * (h - 2 * margin)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">',
        f'<rect width="{w}" height="{h}" fill="white"/>',
        f'<line x1="{margin}" y1="{h-margin}" x2="{w-margin}" y2="{h-margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{h-margin}" stroke="black"/>',
        f'<text x="{w//2}" y="{h-12}" text-anchor="middle" font-size="12">{x_label}</text>',
        f'<text x="14" y="{h//2}" font-size="12" transform="rotate(-90 14 {h//2})" text-anchor="middle">{y_label}</text>',
        f'<text x="{margin}" y="{h-margin+16}" font-size="10" text-anchor="middle">{x0:g}</text>',
        f'<text x="{w-margin}" y="{h-margin+16}" font-size="10" text-anchor="middle">{x1:g}</text>',
        f'<text x="{margin-6}" y="{h-margin}" font-size="10" text-anchor="end">{y0:g}</text>',
        f'<text x="{margin-6}" y="{margin+4}" font-size="10" text-anchor="end">{y1:g}</text>',
    ]
    for i, (name, data) in enumerate(series.items()):
        if not data:
            continue
        color = colors[i % len(colors)]
        coords = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in data)
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        parts.append(
            f'<text x="{w-margin+4}" y="{margin + 14*i + 10}" font-size="11" fill="{color}">{name}</text>'
        )
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n")


def cmd_pvcurve(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    net = _load_network(args)
    if not net.ports:
        raise InputError("pvcurve needs at least one coupling port")
    lfs = _lf_values(args.lf_start, args.lf_stop, args.lf_step)
    der_scales = [float(s) for s in args.der_scale.split(",")] if args.der_scale else [1.0]
    contingency = _parse_contingency(args.contingency, net)
    poi_bus = sorted(net.ports, key=lambda p: p.id)[0].transmission_bus
    opts = _solver_options(args)

    scenarios: list[tuple[str, float, bool]] = []
    for s in der_scales:
        scenarios.append((f"v_poi_der{s:g}", s, False))
    if contingency:
        for s in der_scales:
            scenarios.append((f"v_poi_cont_der{s:g}", s, True))

    columns: dict[str, dict[float, float]] = {name: {} for name, _, _ in scenarios}
    alive = {name: True for name, _, _ in scenarios}
    for lf in lfs:
        scaled = net.with_loading_factor(lf)
        for name, der, cont in scenarios:
            if not alive[name]:
                continue
            case = scaled.with_der_scale(der)
            if cont:
                case = case.without_elements(contingency[0]).without_generators(contingency[1])
            try:
                if args.solver == "gsn":
                    x, _ = solve_gsn(case, opts, _gsn_options(args, None))
                else:
                    x, _ = solve_direct(case, opts)
            except (SolveFailure, GsnError):
                alive[name] = False  # past the nose; scenario stops here
                continue
            imap = build_index_map(case)
            v = dict(poi_voltages(case, imap, x))[poi_bus]
            columns[name][lf] = v

    header = PVCURVE_HEADER + "".join(f",{name}" for name, _, _ in scenarios)
    rows = [header]
    for lf in lfs:
        if not any(lf in columns[name] for name, _, _ in scenarios):
            continue
        cells = [f"{lf:g}"]
        for name, _, _ in scenarios:
            cells.append(f"{columns[name][lf]:.6f}" if lf in columns[name] else "")
        rows.append(",".join(cells))
    (out_dir / "pvcurve.csv").write_text("\n".join(rows) + "\n")

    series = {
        name: sorted((lf, v) for lf, v in columns[name].items()) for name, _, _ in scenarios
    }
    _svg_plot(out_dir / "pvcurve.svg", series, "loading factor", "|V| at POI (pu)")
    print(f"pvcurve: wrote {out_dir/'pvcurve.csv'} ({len(rows)-1} rows)")
    return EXIT_OK


# ----------------------------------------------------------------------
# generate
# ----------------------------------------------------------------------


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def cmd_generate(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    net = _load_network(args)  # also validates the coupling map
    if not args.coupling:
        raise InputError("generate needs a coupling map")
    case = Path(args.case)
    cmap = parse_coupling_map(Path(args.coupling))

    copied = {}
    for src in [case, Path(args.coupling)] + [cmap.feeder_path(e) for e in cmap.entries]:
        dst = out_dir / src.name
        if src.resolve() != dst.resolve():
            shutil.copy(src, dst)
        copied[src.name] = _sha256(dst)

    manifest = {
        "schema": 1,
        "case": case.name,
        "coupling_map": Path(args.coupling).name,
        "ports": len(net.ports),
        "buses": len(net.buses),
        "unknowns": build_index_map(net).n,
        "feeders": sorted({e.feeder for e in cmap.entries}),
        "couplings": [{"feeder": e.feeder, "bus": e.bus} for e in cmap.entries],
        "checksums": copied,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"generate: bundle at {out_dir} with {len(net.ports)} port(s)")
    return EXIT_OK


# ----------------------------------------------------------------------
# bench
# ----------------------------------------------------------------------


def cmd_bench(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    case = Path(args.case)
    if not case.exists():
        raise InputError(f"case file {case} not found")
    feeder = Path(args.feeder)
    if not feeder.exists():
        raise InputError(f"feeder file {feeder} not found")
    counts = [int(k) for k in args.counts.split(",")]
    if not counts or any(k <= 0 for k in counts):
        raise InputError("counts must be positive integers")

    tnet = parse_transmission(case)
    doc = parse_feeder_doc(feeder)
    from .netmodel import BusKind
    from .ingest import CouplingEntry

    pq_buses = sorted(b.id for b in tnet.buses if b.kind is BusKind.PQ)
    if max(counts) > len(pq_buses):
        raise InputError(f"case has only {len(pq_buses)} PQ buses; cannot attach {max(counts)} feeders")

    opts = _solver_options(args)
    rows = [BENCH_HEADER]
    for k in counts:
        entries = [CouplingEntry(feeder=feeder.name, bus=pq_buses[i]) for i in range(k)]
        cmap = CouplingMap(entries=entries, base_dir=feeder.parent)
        net = build_combined(tnet, cmap, {feeder.name: doc})
        n = build_index_map(net).n
        gsn = _gsn_options(args, None)
        gsn.progress = False
        t0 = time.perf_counter()
        try:
            _, rep = solve_gsn(net, opts, gsn)
            wall = time.perf_counter() - t0
            mean_inner = float(
                np.mean([sum(d.values()) / max(1, len(d)) for d in rep.inner_iterations])
            )
            rows.append(f"{k},{n},{wall:.4f},{rep.epochs},{mean_inner:.2f}")
        except (SolveFailure, GsnError) as exc:
            wall = time.perf_counter() - t0
            rows.append(f"{k},{n},{wall:.4f},,")
            print(f"bench: k={k} failed: {exc}", file=sys.stderr)
        print(rows[-1], file=sys.stderr)
    (out_dir / "bench.csv").write_text("\n".join(rows) + "\n")
    print(f"bench: wrote {out_dir/'bench.csv'}")
    return EXIT_OK


# ----------------------------------------------------------------------
# argument parsing
# ----------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser, coupling: bool = True):
    p.add_argument("--case", required=True, help="MATPOWER-style transmission case file")
    if coupling:
        p.add_argument("--coupling", help="coupling map JSON (feeder files resolved relative to it)")
    p.add_argument("--solver", choices=("direct", "gsn"), default="direct")
    p.add_argument("--workers", type=int, default=1, help="parallel subcircuit workers for gsn")
    p.add_argument("--tol", type=float, default=None, help="inner mismatch tolerance (pu current)")
    p.add_argument("--outer-tol", type=float, default=None, help="gsn boundary-change tolerance")
    p.add_argument("--dvmax", type=float, default=None, help="per-iteration voltage step cap (pu)")
    p.add_argument("--gamma", type=float, default=None, help="continuation admittance scale factor")
    p.add_argument("--homotopy", choices=("auto", "on", "off"), default=None)
    p.add_argument("--keep-bus-load", action="store_true",
                   help="keep the transmission bus load at coupled buses instead of replacing it")
    p.add_argument("--options", help="JSON file with solver option overrides")
    p.add_argument("--out", default=".", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tandem",
                                 description="Combined transmission and distribution power flow")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one case and write solution/report/summary")
    _add_common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("pvcurve", help="sweep the loading factor and record POI voltage")
    _add_common(p)
    p.add_argument("--lf-start", type=float, default=1.0)
    p.add_argument("--lf-stop", type=float, default=2.0)
    p.add_argument("--lf-step", type=float, default=0.05)
    p.add_argument("--der-scale", default=None, help="comma list of DER scaling factors (default 1.0)")
    p.add_argument("--contingency", default=None,
                   help="comma list of branch:<id> / gen:<bus> to remove in a contingency scenario")
    p.set_defaults(func=cmd_pvcurve)

    p = sub.add_parser("generate", help="bundle a combined case with a manifest")
    _add_common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("bench", help="scalability sweep over replicated feeder counts")
    _add_common(p, coupling=False)
    p.add_argument("--feeder", required=True, help="feeder JSON replicated k times")
    p.add_argument("--counts", default="1,4,16", help="comma list of feeder counts")
    p.set_defaults(func=cmd_bench)

    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    ap = build_parser()
    args = ap.parse_args(argv)
    out_dir = Path(args.out) if getattr(args, "out", None) else None
    try:
        return args.func(args)
    except (InputError, CaseFormatError, NetworkError, FileNotFoundError) as exc:
        _write_error(out_dir, EXIT_INPUT, str(exc))
        return EXIT_INPUT
    except (SolveFailure, GsnError) as exc:
        _write_error(out_dir, EXIT_NO_CONVERGENCE, str(exc))
        return EXIT_NO_CONVERGENCE
    except Exception as exc:  # pragma: no cover - defensive
        log.exception("internal error")
        _write_error(out_dir, EXIT_INTERNAL, f"internal error: {exc}")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
