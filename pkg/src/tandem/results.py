"""Solution extraction: per-node voltages, POI summaries, port power checks."""

from __future__ import annotations

import cmath
import math

import numpy as np

from .netmodel import (
    ALPHA,
    PHASE_ROTATION,
    POSITIVE_SEQUENCE,
    THREE_PHASE,
    IndexMap,
    Network,
)

_POS_SEQ_WEIGHT = {"a": 1.0 + 0.0j, "b": ALPHA, "c": ALPHA**2}


def solution_dict(network: Network, imap: IndexMap, x: np.ndarray) -> dict:
    """Per-node voltage magnitude and angle per phase, JSON-ready."""
    nodes = []
    for b in sorted(network.buses, key=lambda b: b.id):
        for ph in b.phases:
            v = imap.voltage(x, b.id, ph)
            nodes.append(
                {
                    "bus": b.id,
                    "label": network.label(b.id),
                    "phase": ph,
                    "vm": abs(v),
                    "va_deg": math.degrees(cmath.phase(v)),
                }
            )
    return {"schema": 1, "base_mva": network.base_mva, "nodes": nodes}


def poi_voltages(network: Network, imap: IndexMap, x: np.ndarray) -> list[tuple[int, float]]:
    """(bus id, |V|) at every point of interconnection, sorted by bus id."""
    out = []
    for p in sorted(network.ports, key=lambda p: p.id):
        v = imap.voltage(x, p.transmission_bus, POSITIVE_SEQUENCE)
        out.append((p.transmission_bus, abs(v)))
    return sorted(out)


def poi_extremes(network: Network, imap: IndexMap, x: np.ndarray) -> dict | None:
    """Max and min POI substation voltage with their node ids; None without ports."""
    pv = poi_voltages(network, imap, x)
    if not pv:
        return None
    hi = max(pv, key=lambda t: t[1])
    lo = min(pv, key=lambda t: t[1])
    return {
        "max": {"node": hi[0], "magnitude": hi[1]},
        "min": {"node": lo[0], "magnitude": lo[1]},
    }


def port_power_balance(network: Network, imap: IndexMap, x: np.ndarray, port) -> tuple[complex, complex]:
    """Complex power leaving the transmission bus through the port and total
    power entering the feeder head.

    The head voltages are purely positive-sequence, so the head total
    equals three times the sequence-domain product; both sides express
    the same physical power under the per-phase base convention.
    """
    vp = imap.voltage(x, port.transmission_bus, POSITIVE_SEQUENCE)
    currents = {
        ph: complex(x[imap.port_current[(port.id, ph)][0]], x[imap.port_current[(port.id, ph)][1]])
        for ph in THREE_PHASE
    }
    ip = sum(_POS_SEQ_WEIGHT[ph] * currents[ph] for ph in THREE_PHASE) / 3.0
    s_tx = vp * ip.conjugate()
    s_head = sum(
        imap.voltage(x, port.feeder_head, ph) * currents[ph].conjugate() for ph in THREE_PHASE
    )
    return s_tx, s_head


def voltage_magnitudes(network: Network, imap: IndexMap, x: np.ndarray) -> dict[tuple[int, str], float]:
    """|V| keyed by (bus, phase) for whole-solution comparisons."""
    out = {}
    for b in network.buses:
        for ph in b.phases:
            out[(b.id, ph)] = abs(imap.voltage(x, b.id, ph))
    return out


def head_rotation(vp: complex) -> tuple[complex, complex, complex]:
    """Feeder-head phase voltages mirrored from a transmission pair."""
    return tuple(PHASE_ROTATION[ph] * vp for ph in THREE_PHASE)
