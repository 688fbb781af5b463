"""Domain types for combined transmission and distribution networks.

A network is a typed graph of buses and series elements plus attached
devices (loads, shunts, generators, DER injections) and the coupling
ports that bind a positive-sequence transmission bus to a three-phase
feeder head.  Everything is per-unit on one common system base.

All types are immutable after construction and safe to share across
threads.  Numerics live elsewhere; this module only knows how to index
unknowns and check structural invariants.
"""

from __future__ import annotations

import cmath
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable

import numpy as np

# Rotation operator for the a/b/c phase set: 1 at +120 degrees.
ALPHA = cmath.exp(2j * cmath.pi / 3)

# Positive-sequence voltage mirrored onto the three phases: a in phase,
# b lagging 120 degrees, c leading 120 degrees.
PHASE_ROTATION = {"a": 1.0 + 0.0j, "b": ALPHA**2, "c": ALPHA}

POSITIVE_SEQUENCE = "p"
THREE_PHASE = "abc"


class NetworkError(ValueError):
    """Structurally unusable network (duplicate ids, dangling refs...)."""


class BusKind(Enum):
    SLACK = "slack"
    PV = "pv"
    PQ = "pq"
    FEEDER_HEAD = "feeder_head"
    LOAD_NODE = "load_node"
    INTERNAL_NODE = "internal_node"

    @property
    def is_transmission(self) -> bool:
        return self in (BusKind.SLACK, BusKind.PV, BusKind.PQ)

    @property
    def is_distribution(self) -> bool:
        return not self.is_transmission


class ElementKind(Enum):
    LINE = "line"
    TRANSFORMER = "transformer"


class Connection(Enum):
    WYE = "wye"
    DELTA = "delta"


def _check_phases(phases: str) -> str:
    if phases == POSITIVE_SEQUENCE:
        return phases
    if phases and all(p in "abc" for p in phases) and list(phases) == sorted(set(phases)):
        return phases
    raise NetworkError(f"bad phase set {phases!r}: expected 'p' or an ordered subset of 'abc'")


@dataclass(frozen=True)
class Bus:
    """One network node; positive-sequence ('p') or a subset of phases a/b/c."""

    id: int
    kind: BusKind
    phases: str
    base_kv: float
    v0: tuple[complex, ...]  # initial per-phase voltage, pu

    def __post_init__(self):
        _check_phases(self.phases)
        if len(self.v0) != len(self.phases):
            raise NetworkError(f"bus {self.id}: {len(self.v0)} initial voltages for phases {self.phases!r}")
        if self.base_kv <= 0:
            raise NetworkError(f"bus {self.id}: base_kv must be positive")


def flat_voltages(phases: str) -> tuple[complex, ...]:
    """Flat-start voltages: 1+0j positive sequence, the 0/-120/+120 set three-phase."""
    if phases == POSITIVE_SEQUENCE:
        return (1.0 + 0.0j,)
    return tuple(PHASE_ROTATION[p] for p in phases)


@dataclass(frozen=True)
class SeriesElement:
    """A line or transformer between two buses.

    ``y_series`` is the per-unit series admittance: a 1x1 block for
    positive-sequence elements, a kxk complex block over ``phases`` for
    three-phase elements.  ``b_charge`` is the total line-charging
    susceptance (split half per terminal, positive-sequence only).
    Transformer taps are on the from side; ``shift`` is in radians.
    """

    id: int
    from_bus: int
    to_bus: int
    kind: ElementKind
    phases: str
    y_series: np.ndarray
    b_charge: float = 0.0
    tap: float = 1.0
    shift: float = 0.0

    def __post_init__(self):
        _check_phases(self.phases)
        y = np.asarray(self.y_series, dtype=complex)
        k = len(self.phases)
        if y.shape != (k, k):
            raise NetworkError(f"element {self.id}: admittance block shape {y.shape} != ({k},{k})")
        y.setflags(write=False)
        object.__setattr__(self, "y_series", y)
        if self.tap <= 0:
            raise NetworkError(f"element {self.id}: tap ratio must be positive")


@dataclass(frozen=True)
class Load:
    """ZIP load: constant-power / constant-current / constant-impedance shares.

    ``s`` is the per-phase complex power demand at nominal voltage.  For
    delta connections the entries are per-leg demands in leg order
    ab, bc, ca and the bus must carry all three phases.
    """

    bus: int
    phases: str
    s: tuple[complex, ...]
    connection: Connection = Connection.WYE
    zip_fractions: tuple[float, float, float] = (1.0, 0.0, 0.0)

    def __post_init__(self):
        _check_phases(self.phases)
        if len(self.s) != len(self.phases):
            raise NetworkError(f"load at bus {self.bus}: {len(self.s)} powers for phases {self.phases!r}")


@dataclass(frozen=True)
class Shunt:
    """Fixed shunt admittance per phase (bus shunts, feeder capacitors)."""

    bus: int
    phases: str
    y: tuple[complex, ...]

    def __post_init__(self):
        _check_phases(self.phases)
        if len(self.y) != len(self.phases):
            raise NetworkError(f"shunt at bus {self.bus}: {len(self.y)} admittances for phases {self.phases!r}")


@dataclass(frozen=True)
class DerInjection:
    """Distributed resource modeled as a negative PQ demand; ``s`` is the injected power."""

    bus: int
    phases: str
    s: tuple[complex, ...]
    group: str = ""

    def __post_init__(self):
        _check_phases(self.phases)
        if len(self.s) != len(self.phases):
            raise NetworkError(f"DER at bus {self.bus}: {len(self.s)} powers for phases {self.phases!r}")


@dataclass(frozen=True)
class Generator:
    """PV-bus machine: fixed real power and voltage magnitude, bounded reactive power."""

    bus: int
    p_set: float
    v_set: float
    q_min: float
    q_max: float
    status: bool = True


@dataclass(frozen=True)
class CouplingPort:
    """Binds one transmission bus (positive-sequence pair) to one feeder head.

    The port holds six controlled voltage sources driving the head
    phase voltages from the transmission pair, and injects the
    positive-sequence component of the measured head currents back into
    the transmission bus.  Six auxiliary current unknowns (one R/I pair
    per phase) belong to the port.
    """

    id: int
    transmission_bus: int
    feeder_head: int


@dataclass(frozen=True)
class Violation:
    code: str
    message: str

    def __str__(self):
        return f"[{self.code}] {self.message}"


@dataclass(frozen=True)
class Network:
    """Immutable combined network on one MVA base."""

    base_mva: float
    buses: tuple[Bus, ...]
    elements: tuple[SeriesElement, ...] = ()
    loads: tuple[Load, ...] = ()
    shunts: tuple[Shunt, ...] = ()
    generators: tuple[Generator, ...] = ()
    ders: tuple[DerInjection, ...] = ()
    ports: tuple[CouplingPort, ...] = ()
    labels: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "elements", tuple(self.elements))
        object.__setattr__(self, "loads", tuple(self.loads))
        object.__setattr__(self, "shunts", tuple(self.shunts))
        object.__setattr__(self, "generators", tuple(self.generators))
        object.__setattr__(self, "ders", tuple(self.ders))
        object.__setattr__(self, "ports", tuple(self.ports))

    def bus(self, bus_id: int) -> Bus:
        try:
            return self._bus_by_id[bus_id]
        except AttributeError:
            object.__setattr__(self, "_bus_by_id", {b.id: b for b in self.buses})
            return self._bus_by_id[bus_id]

    def has_bus(self, bus_id: int) -> bool:
        return any(b.id == bus_id for b in self.buses)

    def label(self, bus_id: int) -> str:
        return self.labels.get(bus_id, str(bus_id))

    def transmission_buses(self) -> list[Bus]:
        return [b for b in self.buses if b.kind.is_transmission]

    def distribution_buses(self) -> list[Bus]:
        return [b for b in self.buses if b.kind.is_distribution]

    def ported_heads(self) -> set[int]:
        return {p.feeder_head for p in self.ports}

    def source_buses(self) -> list[Bus]:
        """Buses driven by an ideal voltage source at their v0.

        Slack buses always; feeder heads only when no port drives them
        (a standalone feeder is solvable with its head held at v0,
        which is exactly how the torn subproblems are built).
        """
        ported = self.ported_heads()
        out = []
        for b in self.buses:
            if b.kind is BusKind.SLACK:
                out.append(b)
            elif b.kind is BusKind.FEEDER_HEAD and b.id not in ported:
                out.append(b)
        return out

    # -- derived immutable copies -------------------------------------

    def with_loading_factor(self, lf: float) -> "Network":
        """Scale every load's P and Q and every generator's P setpoint by ``lf``."""
        loads = tuple(replace(ld, s=tuple(lf * s for s in ld.s)) for ld in self.loads)
        gens = tuple(replace(g, p_set=lf * g.p_set) for g in self.generators)
        return replace(self, loads=loads, generators=gens)

    def with_der_scale(self, scale: float, group: str | None = None) -> "Network":
        """Scale DER injections, optionally only those in ``group``."""
        ders = tuple(
            replace(d, s=tuple(scale * s for s in d.s)) if group is None or d.group == group else d
            for d in self.ders
        )
        return replace(self, ders=ders)

    def without_elements(self, element_ids: Iterable[int]) -> "Network":
        drop = set(element_ids)
        return replace(self, elements=tuple(e for e in self.elements if e.id not in drop))

    def without_generators(self, bus_ids: Iterable[int]) -> "Network":
        drop = set(bus_ids)
        return replace(self, generators=tuple(g for g in self.generators if g.bus not in drop))

    def with_source_voltages(self, voltages: dict[int, tuple[complex, ...]]) -> "Network":
        """Replace v0 on the given buses (drives source buses in torn subproblems)."""
        buses = tuple(replace(b, v0=tuple(voltages[b.id])) if b.id in voltages else b for b in self.buses)
        return replace(self, buses=buses)


# ----------------------------------------------------------------------
# Unknown ordering
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class IndexMap:
    """Bijection from network quantities to positions in the real unknown vector.

    Ordering is deterministic given the network: transmission bus
    voltages (sorted by bus id, R before I per phase), then slack
    source currents, then PV reactive unknowns, then each feeder
    block's voltages (and head-source currents for un-ported heads),
    then the port source currents last.  Transmission variables always
    precede distribution variables so the coupling structure is
    bordered block diagonal with the transmission block first.
    """

    n: int
    vr: dict[tuple[int, str], int]
    vi: dict[tuple[int, str], int]
    source_current: dict[tuple[int, str], tuple[int, int]]  # (bus, phase) -> (iR, iI)
    gen_q: dict[int, int]  # bus -> Q index
    port_current: dict[tuple[int, str], tuple[int, int]]  # (port id, phase) -> (iR, iI)
    blocks: tuple[tuple[str, int, int], ...]  # (name, start, stop) in order
    feeder_of_bus: dict[int, int]  # distribution bus -> feeder block ordinal

    def v_pair(self, bus_id: int, phase: str) -> tuple[int, int]:
        return self.vr[(bus_id, phase)], self.vi[(bus_id, phase)]

    def voltage(self, x: np.ndarray, bus_id: int, phase: str) -> complex:
        return complex(x[self.vr[(bus_id, phase)]], x[self.vi[(bus_id, phase)]])

    def block(self, name: str) -> tuple[int, int]:
        for bname, start, stop in self.blocks:
            if bname == name:
                return start, stop
        raise KeyError(name)

    def block_of_index(self, idx: int) -> str:
        for bname, start, stop in self.blocks:
            if start <= idx < stop:
                return bname
        raise IndexError(idx)


def _feeder_components(network: Network) -> list[list[Bus]]:
    """Connected components of the distribution side, each a feeder block.

    Components are ordered by their smallest bus id; buses inside a
    component are sorted by id.
    """
    dist = {b.id: b for b in network.distribution_buses()}
    adj: dict[int, set[int]] = {bid: set() for bid in dist}
    for el in network.elements:
        if el.from_bus in dist and el.to_bus in dist:
            adj[el.from_bus].add(el.to_bus)
            adj[el.to_bus].add(el.from_bus)
    seen: set[int] = set()
    comps = []
    for start in sorted(dist):
        if start in seen:
            continue
        stack, comp = [start], []
        seen.add(start)
        while stack:
            cur = stack.pop()
            comp.append(cur)
            for nxt in adj[cur]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        comps.append([dist[b] for b in sorted(comp)])
    return comps


def build_index_map(network: Network) -> IndexMap:
    """Assign every nodal voltage and auxiliary variable a unique index.

    Raises NetworkError on duplicate bus ids, dangling element
    endpoints, or an empty phase set.
    """
    ids = [b.id for b in network.buses]
    if len(ids) != len(set(ids)):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise NetworkError(f"duplicate bus ids: {dupes}")
    known = set(ids)
    for el in network.elements:
        if el.from_bus not in known or el.to_bus not in known:
            raise NetworkError(f"element {el.id} references missing bus ({el.from_bus}, {el.to_bus})")
    for b in network.buses:
        if not b.phases:
            raise NetworkError(f"bus {b.id} has an empty phase set")

    vr: dict[tuple[int, str], int] = {}
    vi: dict[tuple[int, str], int] = {}
    source_current: dict[tuple[int, str], tuple[int, int]] = {}
    gen_q: dict[int, int] = {}
    port_current: dict[tuple[int, str], tuple[int, int]] = {}
    blocks: list[tuple[str, int, int]] = []
    feeder_of_bus: dict[int, int] = {}

    pos = 0

    def take(k: int) -> int:
        nonlocal pos
        pos += k
        return pos - k

    # transmission block: nodal voltages, slack currents, PV reactive unknowns
    t_start = pos
    t_buses = sorted(network.transmission_buses(), key=lambda b: b.id)
    for b in t_buses:
        for ph in b.phases:
            vr[(b.id, ph)] = take(1)
            vi[(b.id, ph)] = take(1)
    source_set = {b.id for b in network.source_buses()}
    for b in t_buses:
        if b.id in source_set:
            for ph in b.phases:
                source_current[(b.id, ph)] = (take(1), take(1))
    for g in sorted(network.generators, key=lambda g: g.bus):
        if g.status and network.bus(g.bus).kind is BusKind.PV:
            gen_q[g.bus] = take(1)
    blocks.append(("transmission", t_start, pos))

    # one block per feeder component
    for fi, comp in enumerate(_feeder_components(network)):
        f_start = pos
        for b in comp:
            feeder_of_bus[b.id] = fi
            for ph in b.phases:
                vr[(b.id, ph)] = take(1)
                vi[(b.id, ph)] = take(1)
        for b in comp:
            if b.id in source_set:
                for ph in b.phases:
                    source_current[(b.id, ph)] = (take(1), take(1))
        blocks.append((f"feeder:{fi}", f_start, pos))

    # port source currents form the trailing border block
    p_start = pos
    for port in sorted(network.ports, key=lambda p: p.id):
        for ph in THREE_PHASE:
            port_current[(port.id, ph)] = (take(1), take(1))
    blocks.append(("ports", p_start, pos))

    return IndexMap(
        n=pos,
        vr=vr,
        vi=vi,
        source_current=source_current,
        gen_q=gen_q,
        port_current=port_current,
        blocks=tuple(blocks),
        feeder_of_bus=feeder_of_bus,
    )


def initial_state(network: Network, imap: IndexMap, flat: bool = False) -> np.ndarray:
    """Initial unknown vector: bus v0 (or flat start), zero auxiliary variables."""
    x = np.zeros(imap.n)
    for b in network.buses:
        v = flat_voltages(b.phases) if flat else b.v0
        for ph, vph in zip(b.phases, v):
            x[imap.vr[(b.id, ph)]] = vph.real
            x[imap.vi[(b.id, ph)]] = vph.imag
    return x


# ----------------------------------------------------------------------
# Validation
# ----------------------------------------------------------------------


def validate(network: Network) -> list[Violation]:
    """Collect every invariant violation; an empty list means a well-formed network."""
    out: list[Violation] = []

    ids = [b.id for b in network.buses]
    id_set = set(ids)
    if len(ids) != len(id_set):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        out.append(Violation("dup-bus", f"duplicate bus ids {dupes}"))
        return out
    by_id = {b.id: b for b in network.buses}

    for b in network.buses:
        if not b.phases:
            out.append(Violation("empty-phases", f"bus {b.id} has no phases"))
        elif b.kind.is_transmission and b.phases != POSITIVE_SEQUENCE:
            out.append(Violation("phase-style", f"transmission bus {b.id} must be positive-sequence"))
        elif b.kind.is_distribution and b.phases == POSITIVE_SEQUENCE:
            out.append(Violation("phase-style", f"distribution bus {b.id} must carry phases from abc"))

    if network.transmission_buses() and not any(b.kind is BusKind.SLACK for b in network.buses):
        out.append(Violation("no-slack", "transmission network has no slack bus"))

    for el in network.elements:
        fb, tb = by_id.get(el.from_bus), by_id.get(el.to_bus)
        if fb is None or tb is None:
            out.append(Violation("dangling", f"element {el.id} endpoint missing"))
            continue
        for end in (fb, tb):
            if el.phases == POSITIVE_SEQUENCE:
                if end.phases != POSITIVE_SEQUENCE:
                    out.append(Violation("phase-mismatch", f"element {el.id} vs bus {end.id}"))
            elif not set(el.phases) <= set(end.phases):
                out.append(Violation("phase-mismatch", f"element {el.id} phases {el.phases} not at bus {end.id}"))
        y = np.asarray(el.y_series)
        if el.phases != POSITIVE_SEQUENCE and not np.allclose(y, y.T, rtol=0, atol=1e-12):
            out.append(Violation("asym-block", f"element {el.id} admittance block not symmetric"))
        if np.any(np.abs(np.diag(y)) <= 0):
            out.append(Violation("zero-self", f"element {el.id} has a zero self-admittance phase"))

    for ld in network.loads:
        b = by_id.get(ld.bus)
        if b is None:
            out.append(Violation("dangling", f"load references missing bus {ld.bus}"))
            continue
        fp, fi_, fz = ld.zip_fractions
        if not all(0.0 <= f <= 1.0 for f in (fp, fi_, fz)) or abs(fp + fi_ + fz - 1.0) > 1e-12:
            out.append(Violation("zip", f"load at bus {ld.bus} ZIP fractions {ld.zip_fractions}"))
        if ld.connection is Connection.DELTA and set(b.phases) != set(THREE_PHASE):
            out.append(Violation("delta-phases", f"delta load at bus {ld.bus} needs all three phases"))
        if ld.connection is Connection.WYE and ld.phases != POSITIVE_SEQUENCE:
            if not set(ld.phases) <= set(b.phases):
                out.append(Violation("phase-mismatch", f"load phases {ld.phases} not at bus {ld.bus}"))

    for sh in network.shunts:
        if sh.bus not in by_id:
            out.append(Violation("dangling", f"shunt references missing bus {sh.bus}"))
        elif by_id[sh.bus].phases != POSITIVE_SEQUENCE and not set(sh.phases) <= set(by_id[sh.bus].phases):
            out.append(Violation("phase-mismatch", f"shunt phases {sh.phases} not at bus {sh.bus}"))

    for d in network.ders:
        if d.bus not in by_id:
            out.append(Violation("dangling", f"DER references missing bus {d.bus}"))

    for g in network.generators:
        if g.bus not in by_id:
            out.append(Violation("dangling", f"generator references missing bus {g.bus}"))
            continue
        if g.q_min > g.q_max:
            out.append(Violation("q-limits", f"generator at bus {g.bus} has q_min > q_max"))
        if g.v_set <= 0:
            out.append(Violation("v-set", f"generator at bus {g.bus} has non-positive v_set"))

    seen_port_bus: set[int] = set()
    for p in network.ports:
        tb, hb = by_id.get(p.transmission_bus), by_id.get(p.feeder_head)
        if tb is None or hb is None:
            out.append(Violation("dangling", f"port {p.id} endpoint missing"))
            continue
        if not tb.kind.is_transmission:
            out.append(Violation("port-side", f"port {p.id} transmission end {tb.id} is not a transmission bus"))
        if hb.kind is not BusKind.FEEDER_HEAD:
            out.append(Violation("port-side", f"port {p.id} feeder end {hb.id} is not a feeder head"))
        elif set(hb.phases) != set(THREE_PHASE):
            out.append(Violation("port-phases", f"port {p.id} head {hb.id} must carry phases abc"))
        for end in (p.transmission_bus, p.feeder_head):
            if end in seen_port_bus:
                out.append(Violation("port-reuse", f"bus {end} participates in two ports"))
            seen_port_bus.add(end)

    # every feeder component needs exactly one head
    for comp in _feeder_components(network):
        heads = [b.id for b in comp if b.kind is BusKind.FEEDER_HEAD]
        if len(heads) == 0:
            out.append(Violation("no-head", f"feeder component {{{comp[0].id}...}} has no feeder head"))
        elif len(heads) > 1:
            out.append(Violation("multi-head", f"feeder component has {len(heads)} heads {heads}"))

    # connectivity including ports
    if network.buses:
        adj: dict[int, set[int]] = {b.id: set() for b in network.buses}
        for el in network.elements:
            if el.from_bus in adj and el.to_bus in adj:
                adj[el.from_bus].add(el.to_bus)
                adj[el.to_bus].add(el.from_bus)
        for p in network.ports:
            if p.transmission_bus in adj and p.feeder_head in adj:
                adj[p.transmission_bus].add(p.feeder_head)
                adj[p.feeder_head].add(p.transmission_bus)
        start = network.buses[0].id
        seen = {start}
        stack = [start]
        while stack:
            cur = stack.pop()
            for nxt in adj[cur]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        if seen != id_set:
            missing = sorted(id_set - seen)[:8]
            out.append(Violation("disconnected", f"buses unreachable from bus {start}: {missing}"))

    return out
