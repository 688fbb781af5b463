"""Parsers and combined-network construction.

Three inputs exist: MATPOWER-style transmission case files (the usual
``mpc.bus`` / ``mpc.gen`` / ``mpc.branch`` matrices), feeder documents
in this package's JSON schema (``"schema": 1``), and coupling maps that
attach feeder files to transmission buses.  Everything is converted to
per-unit on the transmission case's MVA base at construction; feeder
per-phase quantities use the per-phase power base (one third of the
system base) and line-to-neutral voltage base, so the coupling-port
equations need no conversion factors.
"""

from __future__ import annotations

import cmath
import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .netmodel import (
    POSITIVE_SEQUENCE,
    Bus,
    BusKind,
    Connection,
    CouplingPort,
    DerInjection,
    ElementKind,
    Generator,
    Load,
    Network,
    SeriesElement,
    Shunt,
    flat_voltages,
)

log = logging.getLogger(__name__)

FEEDER_SCHEMA_VERSION = 1
DEFAULT_BASE_MVA = 100.0

_KNOWN_SECTIONS = {"baseMVA", "bus", "gen", "branch"}


class CaseFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


# ----------------------------------------------------------------------
# MATPOWER transmission cases
# ----------------------------------------------------------------------


def _read_matrices(text: str):
    """Extract ``mpc.<name> = ...`` assignments with row line numbers."""
    sections: dict[str, tuple] = {}
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        raw = lines[i].split("%", 1)[0].strip()
        m = re.match(r"mpc\.(\w+)\s*=\s*(.*)", raw)
        if not m:
            i += 1
            continue
        name, rest = m.group(1), m.group(2).strip()
        if not rest.startswith("["):
            sections[name] = ("scalar", rest.rstrip(";").strip(), i + 1)
            i += 1
            continue
        rows, row_lines = [], []
        body = rest[1:]
        lineno = i
        while True:
            part = body.split("]", 1)[0]
            done = "]" in body
            part = part.strip().rstrip(";")
            if part:
                for chunk in part.split(";"):
                    chunk = chunk.strip()
                    if chunk:
                        rows.append(chunk)
                        row_lines.append(lineno + 1)
            if done:
                break
            lineno += 1
            if lineno >= len(lines):
                raise CaseFormatError(f"unterminated matrix mpc.{name}", i + 1)
            body = lines[lineno].split("%", 1)[0]
        sections[name] = ("matrix", (rows, row_lines), i + 1)
        i = lineno + 1
    return sections


def _numbers(row: str, line: int) -> list[float]:
    out = []
    for tok in row.replace(",", " ").split():
        try:
            out.append(float(tok))
        except ValueError:
            raise CaseFormatError(f"bad numeric token {tok!r}", line) from None
    return out


def parse_transmission(path) -> Network:
    """Parse a MATPOWER case file into a per-unit positive-sequence network."""
    path = Path(path)
    sections = _read_matrices(path.read_text())

    for name, (_, _, line) in sections.items():
        if name not in _KNOWN_SECTIONS:
            log.warning("%s:%d: ignoring unknown section mpc.%s", path.name, line, name)

    if "baseMVA" not in sections:
        raise CaseFormatError("missing mpc.baseMVA")
    kind, value, line = sections["baseMVA"]
    if kind != "scalar":
        raise CaseFormatError("mpc.baseMVA must be a scalar", line)
    base = float(value)
    if base <= 0:
        raise CaseFormatError("baseMVA must be positive", line)

    if "bus" not in sections:
        raise CaseFormatError("missing mpc.bus")

    gen_rows: list[tuple[list[float], int]] = []
    if "gen" in sections:
        rows, row_lines = sections["gen"][1]
        gen_rows = [(_numbers(r, ln), ln) for r, ln in zip(rows, row_lines)]

    # first pass over generators: setpoints per bus (merged when stacked)
    gens_at: dict[int, dict] = {}
    for vals, ln in gen_rows:
        if len(vals) < 8:
            raise CaseFormatError("generator row needs at least 8 columns", ln)
        bus_id, pg, qg, qmax, qmin, vg, _mbase, status = (
            int(vals[0]), vals[1], vals[2], vals[3], vals[4], vals[5], vals[6], int(vals[7]),
        )
        if status <= 0:
            continue
        slot = gens_at.setdefault(
            bus_id, {"pg": 0.0, "qg": 0.0, "qmax": 0.0, "qmin": 0.0, "vg": vg, "line": ln}
        )
        slot["pg"] += pg
        slot["qg"] += qg
        slot["qmax"] += qmax
        slot["qmin"] += qmin

    buses: list[Bus] = []
    loads: list[Load] = []
    shunts: list[Shunt] = []
    ders: list[DerInjection] = []
    generators: list[Generator] = []
    bus_kinds: dict[int, BusKind] = {}

    rows, row_lines = sections["bus"][1]
    for r, ln in zip(rows, row_lines):
        vals = _numbers(r, ln)
        if len(vals) < 13:
            raise CaseFormatError("bus row needs 13 columns", ln)
        bus_id, btype = int(vals[0]), int(vals[1])
        pd, qd, gs, bs = vals[2], vals[3], vals[4], vals[5]
        vm, va, base_kv = vals[7], math.radians(vals[8]), vals[9]
        if btype == 3:
            kind = BusKind.SLACK
        elif btype == 2:
            kind = BusKind.PV
        elif btype == 1:
            kind = BusKind.PQ
        else:
            raise CaseFormatError(f"unsupported bus type {btype} at bus {bus_id}", ln)
        if kind is BusKind.PV and bus_id not in gens_at:
            log.warning("%s:%d: PV bus %d has no in-service generator; treated as PQ", path.name, ln, bus_id)
            kind = BusKind.PQ
        vmag = vm if vm > 0 else 1.0
        if kind in (BusKind.SLACK, BusKind.PV) and bus_id in gens_at:
            vmag = gens_at[bus_id]["vg"]
        buses.append(
            Bus(
                id=bus_id,
                kind=kind,
                phases=POSITIVE_SEQUENCE,
                base_kv=base_kv if base_kv > 0 else 1.0,
                v0=(cmath.rect(vmag, va),),
            )
        )
        bus_kinds[bus_id] = kind
        if pd != 0.0 or qd != 0.0:
            loads.append(Load(bus=bus_id, phases=POSITIVE_SEQUENCE, s=(complex(pd, qd) / base,)))
        if gs != 0.0 or bs != 0.0:
            shunts.append(Shunt(bus=bus_id, phases=POSITIVE_SEQUENCE, y=(complex(gs, bs) / base,)))

    known = set(bus_kinds)
    for bus_id, g in gens_at.items():
        if bus_id not in known:
            raise CaseFormatError(f"generator references missing bus {bus_id}", g["line"])
        kind = bus_kinds[bus_id]
        if kind is BusKind.PV:
            generators.append(
                Generator(
                    bus=bus_id,
                    p_set=g["pg"] / base,
                    v_set=g["vg"],
                    q_min=g["qmin"] / base,
                    q_max=g["qmax"] / base,
                )
            )
        elif kind is BusKind.PQ:
            # fixed-output machine on a load bus: net it off as an injection
            log.warning("%s: generator at PQ bus %d folded into a fixed injection", path.name, bus_id)
            ders.append(
                DerInjection(
                    bus=bus_id,
                    phases=POSITIVE_SEQUENCE,
                    s=(complex(g["pg"], g["qg"]) / base,),
                    group="fixed-gen",
                )
            )
        # slack-bus machines only pin the source voltage

    elements: list[SeriesElement] = []
    if "branch" in sections:
        rows, row_lines = sections["branch"][1]
        for eid, (r, ln) in enumerate(zip(rows, row_lines)):
            vals = _numbers(r, ln)
            if len(vals) < 11:
                raise CaseFormatError("branch row needs at least 11 columns", ln)
            fbus, tbus = int(vals[0]), int(vals[1])
            rr, xx, bb, ratio, angle, status = vals[2], vals[3], vals[4], vals[8], vals[9], int(vals[10])
            if status == 0:
                continue
            if fbus not in known or tbus not in known:
                missing = fbus if fbus not in known else tbus
                raise CaseFormatError(f"branch references missing bus {missing}", ln)
            if rr == 0.0 and xx == 0.0:
                raise CaseFormatError(f"zero-impedance branch {fbus}-{tbus}", ln)
            y = 1.0 / complex(rr, xx)
            is_xfmr = ratio != 0.0 or angle != 0.0
            elements.append(
                SeriesElement(
                    id=eid,
                    from_bus=fbus,
                    to_bus=tbus,
                    kind=ElementKind.TRANSFORMER if is_xfmr else ElementKind.LINE,
                    phases=POSITIVE_SEQUENCE,
                    y_series=np.array([[y]]),
                    b_charge=bb,
                    tap=ratio if ratio != 0.0 else 1.0,
                    shift=math.radians(angle),
                )
            )

    return Network(
        base_mva=base,
        buses=tuple(buses),
        elements=tuple(elements),
        loads=tuple(loads),
        shunts=tuple(shunts),
        generators=tuple(generators),
        ders=tuple(ders),
        labels={b.id: str(b.id) for b in buses},
    )


# ----------------------------------------------------------------------
# Feeder documents
# ----------------------------------------------------------------------


def _complex_of(v, where: str) -> complex:
    if isinstance(v, (int, float)):
        return complex(v)
    if isinstance(v, (list, tuple)) and len(v) == 2:
        return complex(v[0], v[1])
    raise CaseFormatError(f"{where}: expected number or [re, im] pair, got {v!r}")


def _matrix_of(m, k: int, where: str) -> np.ndarray:
    arr = np.array([[_complex_of(v, where) for v in row] for row in m], dtype=complex)
    if arr.shape != (k, k):
        raise CaseFormatError(f"{where}: expected {k}x{k} impedance block, got {arr.shape}")
    if not np.allclose(arr, arr.T, rtol=0, atol=1e-12):
        raise CaseFormatError(f"{where}: impedance block is not symmetric")
    return arr


def _phases_of(v, where: str) -> str:
    p = "".join(sorted(set(str(v))))
    if not p or not set(p) <= set("abc"):
        raise CaseFormatError(f"{where}: bad phases {v!r}")
    return p


@dataclass
class FeederNode:
    id: str
    phases: str
    kv: float


@dataclass
class FeederBranch:
    from_node: str
    to_node: str
    phases: str
    z_ohms: np.ndarray  # total series impedance over the element's phases
    kind: ElementKind = ElementKind.LINE


@dataclass
class FeederLoadRec:
    node: str
    connection: Connection
    kw: tuple[float, ...]
    kvar: tuple[float, ...]
    zip_fractions: tuple[float, float, float] = (1.0, 0.0, 0.0)


@dataclass
class FeederCapRec:
    node: str
    kvar: tuple[float, ...]
    phases: str = ""


@dataclass
class FeederDerRec:
    node: str
    kw: tuple[float, ...]
    kvar: tuple[float, ...]
    group: str = ""


@dataclass
class FeederDoc:
    """Physical-unit feeder description; per-unit conversion happens at build time."""

    name: str
    head: str
    nominal_kv: float
    nodes: list[FeederNode] = field(default_factory=list)
    branches: list[FeederBranch] = field(default_factory=list)
    loads: list[FeederLoadRec] = field(default_factory=list)
    capacitors: list[FeederCapRec] = field(default_factory=list)
    ders: list[FeederDerRec] = field(default_factory=list)


def parse_feeder_doc(path) -> FeederDoc:
    """Parse and validate a feeder JSON document (physical units)."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CaseFormatError(f"{path.name}: {exc}", exc.lineno) from exc
    if raw.get("schema") != FEEDER_SCHEMA_VERSION:
        raise CaseFormatError(f"{path.name}: expected \"schema\": {FEEDER_SCHEMA_VERSION}")
    if "head" not in raw or "nodes" not in raw:
        raise CaseFormatError(f"{path.name}: missing head or nodes")

    doc = FeederDoc(
        name=raw.get("name", path.stem),
        head=str(raw["head"]),
        nominal_kv=float(raw["nominal_kv"]),
    )
    seen_nodes: dict[str, FeederNode] = {}
    for nd in raw["nodes"]:
        node = FeederNode(
            id=str(nd["id"]),
            phases=_phases_of(nd["phases"], f"node {nd['id']}"),
            kv=float(nd.get("kv", doc.nominal_kv)),
        )
        if node.id in seen_nodes:
            raise CaseFormatError(f"{path.name}: duplicate node {node.id}")
        seen_nodes[node.id] = node
        doc.nodes.append(node)
    if doc.head not in seen_nodes:
        raise CaseFormatError(f"{path.name}: head node {doc.head} not defined")
    if seen_nodes[doc.head].phases != "abc":
        raise CaseFormatError(f"{path.name}: head node must carry phases abc")

    def endpoints(rec, what):
        f, t = str(rec["from"]), str(rec["to"])
        if f not in seen_nodes or t not in seen_nodes:
            raise CaseFormatError(f"{path.name}: {what} references unknown node {f if f not in seen_nodes else t}")
        return f, t

    for li in raw.get("lines", []):
        f, t = endpoints(li, "line")
        phases = _phases_of(li["phases"], f"line {f}-{t}")
        for node in (f, t):
            if not set(phases) <= set(seen_nodes[node].phases):
                raise CaseFormatError(f"{path.name}: line {f}-{t} phases {phases} not present at {node}")
        z = _matrix_of(li["z_ohms_per_mile"], len(phases), f"{path.name}: line {f}-{t}")
        length = float(li.get("length_miles", 1.0))
        doc.branches.append(FeederBranch(f, t, phases, z * length, ElementKind.LINE))

    for tr in raw.get("transformers", []):
        f, t = endpoints(tr, "transformer")
        phases = _phases_of(tr["phases"], f"transformer {f}-{t}")
        for node in (f, t):
            if not set(phases) <= set(seen_nodes[node].phases):
                raise CaseFormatError(f"{path.name}: transformer {f}-{t} phases {phases} not at {node}")
        conn = str(tr.get("connection", "wye")).lower()
        if conn != "wye":
            raise CaseFormatError(f"{path.name}: transformer {f}-{t}: only wye connections supported")
        z1 = _complex_of([tr.get("r_ohms", 0.0), tr["x_ohms"]], f"transformer {f}-{t}")
        doc.branches.append(
            FeederBranch(f, t, phases, np.eye(len(phases), dtype=complex) * z1, ElementKind.TRANSFORMER)
        )

    def tuple_of(rec, key, k, where):
        v = rec.get(key, [0.0] * k)
        if isinstance(v, (int, float)):
            v = [float(v)] * k
        if len(v) != k:
            raise CaseFormatError(f"{path.name}: {where}: {key} needs {k} entries")
        return tuple(float(t) for t in v)

    for lo in raw.get("loads", []):
        node = str(lo["node"])
        if node not in seen_nodes:
            raise CaseFormatError(f"{path.name}: load references unknown node {node}")
        conn = Connection(str(lo.get("connection", "wye")).lower())
        k = 3 if conn is Connection.DELTA else len(seen_nodes[node].phases)
        if conn is Connection.DELTA and seen_nodes[node].phases != "abc":
            raise CaseFormatError(f"{path.name}: delta load at {node} needs a three-phase node")
        zf = tuple(float(v) for v in lo.get("zip", (1.0, 0.0, 0.0)))
        if len(zf) != 3 or abs(sum(zf) - 1.0) > 1e-12 or any(f < 0 or f > 1 for f in zf):
            raise CaseFormatError(f"{path.name}: load at {node}: bad ZIP fractions {zf}")
        doc.loads.append(
            FeederLoadRec(
                node=node,
                connection=conn,
                kw=tuple_of(lo, "kw", k, f"load at {node}"),
                kvar=tuple_of(lo, "kvar", k, f"load at {node}"),
                zip_fractions=zf,
            )
        )

    for cp in raw.get("capacitors", []):
        node = str(cp["node"])
        if node not in seen_nodes:
            raise CaseFormatError(f"{path.name}: capacitor references unknown node {node}")
        phases = seen_nodes[node].phases
        doc.capacitors.append(
            FeederCapRec(node=node, kvar=tuple_of(cp, "kvar", len(phases), f"capacitor at {node}"), phases=phases)
        )

    for de in raw.get("ders", []):
        node = str(de["node"])
        if node not in seen_nodes:
            raise CaseFormatError(f"{path.name}: DER references unknown node {node}")
        k = len(seen_nodes[node].phases)
        doc.ders.append(
            FeederDerRec(
                node=node,
                kw=tuple_of(de, "kw", k, f"DER at {node}"),
                kvar=tuple_of(de, "kvar", k, f"DER at {node}"),
                group=str(de.get("group", "")),
            )
        )

    return doc


def serialize_feeder(doc: FeederDoc) -> dict:
    """Feeder document back to its JSON form (round-trips through parse_feeder_doc)."""

    def cx(v: complex):
        return [v.real, v.imag]

    out = {
        "schema": FEEDER_SCHEMA_VERSION,
        "name": doc.name,
        "head": doc.head,
        "nominal_kv": doc.nominal_kv,
        "nodes": [{"id": n.id, "phases": n.phases, "kv": n.kv} for n in doc.nodes],
        "lines": [],
        "transformers": [],
        "loads": [
            {
                "node": lo.node,
                "connection": lo.connection.value,
                "kw": list(lo.kw),
                "kvar": list(lo.kvar),
                "zip": list(lo.zip_fractions),
            }
            for lo in doc.loads
        ],
        "capacitors": [{"node": c.node, "kvar": list(c.kvar)} for c in doc.capacitors],
        "ders": [
            {"node": d.node, "kw": list(d.kw), "kvar": list(d.kvar), "group": d.group}
            for d in doc.ders
        ],
    }
    for br in doc.branches:
        if br.kind is ElementKind.TRANSFORMER:
            z1 = complex(br.z_ohms[0, 0])
            out["transformers"].append(
                {"from": br.from_node, "to": br.to_node, "phases": br.phases,
                 "r_ohms": z1.real, "x_ohms": z1.imag, "connection": "wye"}
            )
        else:
            out["lines"].append(
                {"from": br.from_node, "to": br.to_node, "phases": br.phases,
                 "length_miles": 1.0,
                 "z_ohms_per_mile": [[cx(v) for v in row] for row in br.z_ohms]}
            )
    return out


def feeder_network(
    doc: FeederDoc,
    base_mva: float = DEFAULT_BASE_MVA,
    bus_offset: int = 0,
    load_scale: float = 1.0,
    der_scale: float = 1.0,
    element_offset: int = 0,
) -> Network:
    """Instantiate a feeder document as a per-unit three-phase network.

    Per-phase powers land on the per-phase base (base_mva / 3), so a
    balanced feeder totaling S MW draws S / base_mva from the port.
    """
    z_base = doc.nominal_kv**2 / base_mva  # ohm, identical per phase on the LN base
    s_base_phase_kw = base_mva * 1000.0 / 3.0

    node_index = {n.id: bus_offset + i for i, n in enumerate(doc.nodes)}
    load_nodes = {lo.node for lo in doc.loads}

    buses = []
    labels = {}
    for n in doc.nodes:
        if n.id == doc.head:
            kind = BusKind.FEEDER_HEAD
        elif n.id in load_nodes:
            kind = BusKind.LOAD_NODE
        else:
            kind = BusKind.INTERNAL_NODE
        buses.append(
            Bus(
                id=node_index[n.id],
                kind=kind,
                phases=n.phases,
                base_kv=n.kv,
                v0=flat_voltages(n.phases),
            )
        )
        labels[node_index[n.id]] = f"{doc.name}/{n.id}"

    elements = []
    for i, br in enumerate(doc.branches):
        z_pu = br.z_ohms / z_base
        try:
            y_pu = np.linalg.inv(z_pu)
        except np.linalg.LinAlgError:
            raise CaseFormatError(
                f"{doc.name}: singular impedance block on {br.from_node}-{br.to_node}"
            ) from None
        if not np.all(np.isfinite(y_pu)):
            raise CaseFormatError(f"{doc.name}: singular impedance block on {br.from_node}-{br.to_node}")
        elements.append(
            SeriesElement(
                id=element_offset + i,
                from_bus=node_index[br.from_node],
                to_bus=node_index[br.to_node],
                kind=br.kind,
                phases=br.phases,
                y_series=y_pu,
            )
        )

    def s_pu(kw, kvar):
        return tuple(complex(p, q) / s_base_phase_kw for p, q in zip(kw, kvar))

    loads = []
    for lo in doc.loads:
        node = next(n for n in doc.nodes if n.id == lo.node)
        phases = "abc" if lo.connection is Connection.DELTA else node.phases
        s = tuple(load_scale * v for v in s_pu(lo.kw, lo.kvar))
        if any(v != 0 for v in s):
            loads.append(
                Load(bus=node_index[lo.node], phases=phases, s=s,
                     connection=lo.connection, zip_fractions=lo.zip_fractions)
            )

    shunts = []
    for cp in doc.capacitors:
        y = tuple(1j * load_scale * q / s_base_phase_kw for q in cp.kvar)
        shunts.append(Shunt(bus=node_index[cp.node], phases=cp.phases, y=y))

    ders = []
    for de in doc.ders:
        node = next(n for n in doc.nodes if n.id == de.node)
        s = tuple(der_scale * v for v in s_pu(de.kw, de.kvar))
        ders.append(DerInjection(bus=node_index[de.node], phases=node.phases, s=s, group=de.group))

    return Network(
        base_mva=base_mva,
        buses=tuple(buses),
        elements=tuple(elements),
        loads=tuple(loads),
        shunts=tuple(shunts),
        ders=tuple(ders),
        labels=labels,
    )


def parse_feeder(path, base_mva: float = DEFAULT_BASE_MVA) -> Network:
    """Parse a feeder file straight to a standalone per-unit network."""
    return feeder_network(parse_feeder_doc(path), base_mva)


# ----------------------------------------------------------------------
# Coupling maps and combined construction
# ----------------------------------------------------------------------


@dataclass
class CouplingEntry:
    feeder: str
    bus: int
    load_scale: float = 1.0
    der_scale: float = 1.0


@dataclass
class CouplingMap:
    entries: list[CouplingEntry]
    base_dir: Path | None = None

    def feeder_path(self, entry: CouplingEntry) -> Path:
        p = Path(entry.feeder)
        if not p.is_absolute() and self.base_dir is not None:
            p = self.base_dir / p
        return p


def parse_coupling_map(path) -> CouplingMap:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CaseFormatError(f"{path.name}: {exc}", exc.lineno) from exc
    if raw.get("schema") != FEEDER_SCHEMA_VERSION:
        raise CaseFormatError(f"{path.name}: expected \"schema\": {FEEDER_SCHEMA_VERSION}")
    entries = []
    seen_buses = set()
    for e in raw.get("couplings", []):
        entry = CouplingEntry(
            feeder=str(e["feeder"]),
            bus=int(e["bus"]),
            load_scale=float(e.get("load_scale", 1.0)),
            der_scale=float(e.get("der_scale", 1.0)),
        )
        if entry.bus in seen_buses:
            raise CaseFormatError(f"{path.name}: bus {entry.bus} coupled twice")
        seen_buses.add(entry.bus)
        entries.append(entry)
    return CouplingMap(entries=entries, base_dir=path.parent)


def _id_stride(tnet: Network, docs) -> int:
    biggest = max([b.id for b in tnet.buses] + [len(d.nodes) for d in docs])
    stride = 10
    while stride <= biggest:
        stride *= 10
    return stride


def build_combined(
    tnet: Network,
    coupling: CouplingMap,
    feeder_docs: dict[str, FeederDoc],
    keep_bus_load: bool = False,
) -> Network:
    """Attach feeders to the transmission case through coupling ports.

    At each coupled bus the transmission-side static load is removed
    (the feeder replaces the aggregate) unless ``keep_bus_load``;
    coupled buses must be PQ buses and appear at most once.
    """
    kinds = {b.id: b.kind for b in tnet.buses}
    coupled: set[int] = set()
    for entry in coupling.entries:
        if entry.bus not in kinds:
            raise CaseFormatError(f"coupling references missing bus {entry.bus}")
        if kinds[entry.bus] is not BusKind.PQ:
            raise CaseFormatError(f"coupling bus {entry.bus} is not a PQ bus")
        if entry.bus in coupled:
            raise CaseFormatError(f"bus {entry.bus} coupled twice")
        coupled.add(entry.bus)
        if entry.feeder not in feeder_docs:
            raise CaseFormatError(f"feeder document {entry.feeder!r} not provided")

    stride = _id_stride(tnet, feeder_docs.values())
    buses = list(tnet.buses)
    elements = list(tnet.elements)
    loads = [ld for ld in tnet.loads if keep_bus_load or ld.bus not in coupled]
    shunts = list(tnet.shunts)
    generators = list(tnet.generators)
    ders = list(tnet.ders)
    ports = []
    labels = dict(tnet.labels)

    next_element = max((e.id for e in tnet.elements), default=-1) + 1
    for k, entry in enumerate(coupling.entries):
        doc = feeder_docs[entry.feeder]
        offset = stride * (k + 1)
        fnet = feeder_network(
            doc,
            base_mva=tnet.base_mva,
            bus_offset=offset,
            load_scale=entry.load_scale,
            der_scale=entry.der_scale,
            element_offset=next_element,
        )
        next_element += len(fnet.elements)
        buses += list(fnet.buses)
        elements += list(fnet.elements)
        loads += list(fnet.loads)
        shunts += list(fnet.shunts)
        ders += list(fnet.ders)
        labels.update(fnet.labels)
        head_id = next(b.id for b in fnet.buses if b.kind is BusKind.FEEDER_HEAD)
        ports.append(CouplingPort(id=k, transmission_bus=entry.bus, feeder_head=head_id))

    return Network(
        base_mva=tnet.base_mva,
        buses=tuple(buses),
        elements=tuple(elements),
        loads=tuple(loads),
        shunts=tuple(shunts),
        generators=tuple(generators),
        ders=tuple(ders),
        ports=tuple(ports),
        labels=labels,
    )


def load_combined_case(
    case_path,
    coupling_path=None,
    keep_bus_load: bool = False,
) -> Network:
    """Convenience loader: transmission case plus optional coupling map."""
    tnet = parse_transmission(case_path)
    if coupling_path is None:
        return tnet
    cmap = parse_coupling_map(coupling_path)
    docs = {e.feeder: parse_feeder_doc(cmap.feeder_path(e)) for e in cmap.entries}
    return build_combined(tnet, cmap, docs, keep_bus_load=keep_bus_load)
