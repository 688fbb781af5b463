"""MNA stamping: linear device stamps plus per-iteration linearized stamps.

Conventions used throughout (and relied on by the solver):

* The system is square: row k is the equation "owned" by unknown k.
  Nodal voltage unknowns own their node's KCL rows (real part on the
  V_R row, imaginary part on the V_I row); source current unknowns own
  the source voltage-constraint rows; PV reactive unknowns own the
  voltage-magnitude rows; port current unknowns own the port voltage
  rows.
* KCL rows sum currents LEAVING the node: series/shunt/load currents
  enter positively, source injections enter as -1 times the source
  current unknown.
* A nonlinear device with consumption current c(x) is stamped as its
  Jacobian block J_c on the left and J_c . x_k - c(x_k) on the right,
  so J(x) . x - b(x) is the exact nonlinear mismatch at x.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from .netmodel import (
    ALPHA,
    PHASE_ROTATION,
    POSITIVE_SEQUENCE,
    Connection,
    IndexMap,
    Network,
)

# Voltage-collapse guard: below this magnitude the PQ model denominator
# is meaningless and the step limiter is expected to intervene.
EPS_V = 1e-6

# Default homotopy scaling factor; "much larger than" any per-unit line
# admittance in practice.
DEFAULT_GAMMA = 1e3

# Phase weights of the inverse symmetrical-component transform row that
# extracts the positive sequence: I_p = (1/3) (I_a + a I_b + a^2 I_c).
_POS_SEQ_WEIGHT = {"a": 1.0 + 0.0j, "b": ALPHA, "c": ALPHA**2}


class VoltageCollapseError(ArithmeticError):
    """|V| fell below the collapse guard at a load terminal."""

    def __init__(self, bus, phase, vmag2):
        super().__init__(f"voltage collapse guard at bus {bus} phase {phase}: |V|^2 = {vmag2:.3e}")
        self.bus = bus
        self.phase = phase


@dataclass
class HomotopyState:
    """Continuation state: lam=1 is the virtually shorted trivial system, lam=0 the original."""

    lam: float = 0.0
    gamma: float = DEFAULT_GAMMA
    shunt_relax: bool = True

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"homotopy factor {self.lam} outside [0, 1]")

    @property
    def series_scale(self) -> float:
        return 1.0 + self.lam * self.gamma

    @property
    def shunt_scale(self) -> float:
        return 1.0 - self.lam if self.shunt_relax else 1.0


class StampSet:
    """Triplet contributions to the system matrix plus right-hand-side entries."""

    __slots__ = ("n", "rows", "cols", "vals", "rhs_rows", "rhs_vals", "tag")

    def __init__(self, n: int, tag: str = ""):
        self.n = n
        self.rows: list[int] = []
        self.cols: list[int] = []
        self.vals: list[float] = []
        self.rhs_rows: list[int] = []
        self.rhs_vals: list[float] = []
        self.tag = tag

    def add(self, row: int, col: int, val: float) -> None:
        if val == 0.0:
            return
        if not (0 <= row < self.n and 0 <= col < self.n):
            raise IndexError(f"stamp ({row},{col}) outside system of size {self.n}")
        if not math.isfinite(val):
            raise ValueError(f"non-finite stamp at ({row},{col})")
        self.rows.append(row)
        self.cols.append(col)
        self.vals.append(val)

    def add_rhs(self, row: int, val: float) -> None:
        if val == 0.0:
            return
        if not 0 <= row < self.n:
            raise IndexError(f"rhs stamp row {row} outside system of size {self.n}")
        if not math.isfinite(val):
            raise ValueError(f"non-finite rhs stamp at row {row}")
        self.rhs_rows.append(row)
        self.rhs_vals.append(val)

    def add_complex(self, row_pair, col_pair, w: complex) -> None:
        """Stamp complex admittance w: I = w V expanded on (R, I) row/column pairs."""
        rr, ri = row_pair
        cr, ci = col_pair
        self.add(rr, cr, w.real)
        self.add(rr, ci, -w.imag)
        self.add(ri, cr, w.imag)
        self.add(ri, ci, w.real)

    def merge(self, other: "StampSet") -> "StampSet":
        self.rows += other.rows
        self.cols += other.cols
        self.vals += other.vals
        self.rhs_rows += other.rhs_rows
        self.rhs_vals += other.rhs_vals
        return self


# ----------------------------------------------------------------------
# PQ model evaluation
# ----------------------------------------------------------------------


def eval_pq(p: float, q: float, vr: float, vi: float, bus=None, phase=""):
    """Current drawn by a constant-PQ demand and its exact partials.

    Returns (ir, ii, dir_dvr, dir_dvi, dii_dvr, dii_dvi) for

        ir = (p vr + q vi) / (vr^2 + vi^2)
        ii = (p vi - q vr) / (vr^2 + vi^2)
    """
    if p == 0.0 and q == 0.0:
        return 0.0, 0.0, 0.0, 0.0, 0.0, 0.0
    m2 = vr * vr + vi * vi
    if m2 <= EPS_V * EPS_V:
        raise VoltageCollapseError(bus, phase, m2)
    ir = (p * vr + q * vi) / m2
    ii = (p * vi - q * vr) / m2
    m4 = m2 * m2
    d = vr * vr - vi * vi
    cross = 2.0 * vr * vi
    dir_dvr = -(p * d + q * cross) / m4
    dir_dvi = (q * d - p * cross) / m4
    dii_dvr = dir_dvi
    dii_dvi = -dir_dvr
    return ir, ii, dir_dvr, dir_dvi, dii_dvr, dii_dvi


def eval_pq_three_phase(load, voltages: dict[str, complex]):
    """Per-terminal currents and Jacobian blocks for a three-phase ZIP load's PQ share.

    ``voltages`` maps the load's phases to complex nodal voltages.
    Returns a list of (phase, sign, current, jac) contributions where
    ``jac`` is the 2x2 partial block with respect to the voltage the
    current was evaluated on; delta legs contribute to both terminals
    with opposite signs.
    """
    out = []
    connection = getattr(load, "connection", Connection.WYE)
    if connection is Connection.WYE or load.phases == POSITIVE_SEQUENCE:
        for ph, s in zip(load.phases, load.s):
            v = voltages[ph]
            ir, ii, a, b, c, d = eval_pq(s.real, s.imag, v.real, v.imag, load.bus, ph)
            out.append(((ph,), (1.0,), complex(ir, ii), np.array([[a, b], [c, d]])))
        return out
    legs = (("a", "b"), ("b", "c"), ("c", "a"))
    for (ph1, ph2), s in zip(legs, load.s):
        vleg = voltages[ph1] - voltages[ph2]
        ir, ii, a, b, c, d = eval_pq(s.real, s.imag, vleg.real, vleg.imag, load.bus, ph1 + ph2)
        out.append(((ph1, ph2), (1.0, -1.0), complex(ir, ii), np.array([[a, b], [c, d]])))
    return out


# ----------------------------------------------------------------------
# Homotopy scaling
# ----------------------------------------------------------------------


def apply_homotopy_positive_sequence(y: complex, hs: HomotopyState | None) -> complex:
    """Series admittance under continuation: (G + jB)(1 + lam gamma)."""
    if hs is None:
        return y
    return y * hs.series_scale


def apply_homotopy_three_phase(y_block: np.ndarray, hs: HomotopyState | None) -> np.ndarray:
    """Phase-block continuation: self terms scaled by (1 + gamma lam), mutuals unchanged."""
    y = np.array(y_block, dtype=complex)
    if hs is None:
        return y
    n = y.shape[0]
    y[np.arange(n), np.arange(n)] *= hs.series_scale
    return y


def element_terminal_blocks(el, hs: HomotopyState | None):
    """Complex admittance blocks (Yff, Yft, Ytf, Ytt) of a series element.

    Positive-sequence elements use the pi model with tap and phase
    shift; three-phase elements couple their full phase blocks.  Line
    charging counts as a shunt and is relaxed toward open circuit by
    the continuation.
    """
    if el.phases == POSITIVE_SEQUENCE:
        y = apply_homotopy_positive_sequence(complex(el.y_series[0, 0]), hs)
        bc = el.b_charge * (hs.shunt_scale if hs is not None else 1.0)
        t = el.tap * cmath.exp(1j * el.shift)
        ysh = 0.5j * bc
        yff = (y + ysh) / (el.tap * el.tap)
        yft = -y / t.conjugate()
        ytf = -y / t
        ytt = y + ysh
        return (
            np.array([[yff]]),
            np.array([[yft]]),
            np.array([[ytf]]),
            np.array([[ytt]]),
        )
    y = apply_homotopy_three_phase(el.y_series, hs)
    return y, -y, -y, y


# ----------------------------------------------------------------------
# Linear stamps
# ----------------------------------------------------------------------


def stamp_linear(network: Network, imap: IndexMap, hs: HomotopyState | None = None) -> StampSet:
    """All state-independent stamps: series elements, shunts, constant-impedance
    load shares, and ideal source rows."""
    st = StampSet(imap.n, tag="linear")

    for el in network.elements:
        yff, yft, ytf, ytt = element_terminal_blocks(el, hs)
        fph = el.phases
        for i, pi_ in enumerate(fph):
            rowf = imap.v_pair(el.from_bus, pi_)
            rowt = imap.v_pair(el.to_bus, pi_)
            for j, pj in enumerate(fph):
                colf = imap.v_pair(el.from_bus, pj)
                colt = imap.v_pair(el.to_bus, pj)
                st.add_complex(rowf, colf, complex(yff[i, j]))
                st.add_complex(rowf, colt, complex(yft[i, j]))
                st.add_complex(rowt, colf, complex(ytf[i, j]))
                st.add_complex(rowt, colt, complex(ytt[i, j]))

    shunt_scale = hs.shunt_scale if hs is not None else 1.0
    for sh in network.shunts:
        for ph, y in zip(sh.phases, sh.y):
            pair = imap.v_pair(sh.bus, ph)
            st.add_complex(pair, pair, y * shunt_scale)

    # constant-impedance ZIP share: admittance fixed by the nominal-voltage demand
    for ld in network.loads:
        fz = ld.zip_fractions[2]
        if fz == 0.0:
            continue
        if ld.connection is Connection.WYE or ld.phases == POSITIVE_SEQUENCE:
            for ph, s in zip(ld.phases, ld.s):
                pair = imap.v_pair(ld.bus, ph)
                st.add_complex(pair, pair, fz * s.conjugate())
        else:
            # delta legs see sqrt(3) pu at nominal, so |Vref|^2 = 3
            pairs = {ph: imap.v_pair(ld.bus, ph) for ph in "abc"}
            for (ph1, ph2), s in zip((("a", "b"), ("b", "c"), ("c", "a")), ld.s):
                y = fz * s.conjugate() / 3.0
                st.add_complex(pairs[ph1], pairs[ph1], y)
                st.add_complex(pairs[ph1], pairs[ph2], -y)
                st.add_complex(pairs[ph2], pairs[ph1], -y)
                st.add_complex(pairs[ph2], pairs[ph2], y)

    # ideal sources: voltage rows owned by the source current unknowns,
    # injection into the node KCL
    for b in network.source_buses():
        for ph, v in zip(b.phases, b.v0):
            ir, ii = imap.source_current[(b.id, ph)]
            vr, vi = imap.v_pair(b.id, ph)
            st.add(ir, vr, 1.0)
            st.add_rhs(ir, v.real)
            st.add(ii, vi, 1.0)
            st.add_rhs(ii, v.imag)
            st.add(vr, ir, -1.0)
            st.add(vi, ii, -1.0)

    return st


def stamp_coupling_port(port, network: Network, imap: IndexMap) -> StampSet:
    """Exact linear stamps of one coupling port.

    Six controlled voltage sources set the feeder-head phase voltages
    from the transmission pair through the 0/-120/+120 rotation; the
    positive-sequence component of the six source currents is injected
    back into the transmission bus (zero and negative sequence
    components stay inside the port's ideal sources).
    """
    st = StampSet(imap.n, tag=f"port:{port.id}")
    poi_r, poi_i = imap.v_pair(port.transmission_bus, POSITIVE_SEQUENCE)
    for ph in "abc":
        rot = PHASE_ROTATION[ph]
        cur_r, cur_i = imap.port_current[(port.id, ph)]
        head_r, head_i = imap.v_pair(port.feeder_head, ph)
        # voltage rows: V_head - rot * V_poi = 0
        st.add(cur_r, head_r, 1.0)
        st.add(cur_r, poi_r, -rot.real)
        st.add(cur_r, poi_i, rot.imag)
        st.add(cur_i, head_i, 1.0)
        st.add(cur_i, poi_r, -rot.imag)
        st.add(cur_i, poi_i, -rot.real)
        # source current injects into the head node
        st.add(head_r, cur_r, -1.0)
        st.add(head_i, cur_i, -1.0)
        # positive-sequence share of the phase current leaves the POI
        w = _POS_SEQ_WEIGHT[ph] / 3.0
        st.add(poi_r, cur_r, w.real)
        st.add(poi_r, cur_i, -w.imag)
        st.add(poi_i, cur_r, w.imag)
        st.add(poi_i, cur_i, w.real)
    return st


# ----------------------------------------------------------------------
# Nonlinear (per-iteration) stamps
# ----------------------------------------------------------------------


def _stamp_linearized_current(st, row_pair, contributions, current_at_xk):
    """Stamp J on the left and J.x_k - c(x_k) on the right for one current.

    ``contributions`` is a list of (column, coeff_row_r, coeff_row_i,
    value_at_xk) items; ``current_at_xk`` is the complex c(x_k).
    """
    rr, ri = row_pair
    acc_r = -current_at_xk.real
    acc_i = -current_at_xk.imag
    for col, coef_r, coef_i, xval in contributions:
        st.add(rr, col, coef_r)
        st.add(ri, col, coef_i)
        acc_r += coef_r * xval
        acc_i += coef_i * xval
    st.add_rhs(rr, acc_r)
    st.add_rhs(ri, acc_i)


def stamp_nonlinear(
    network: Network,
    imap: IndexMap,
    x: np.ndarray,
    gen_modes: dict[int, str] | None = None,
    gen_q_fixed: dict[int, float] | None = None,
) -> StampSet:
    """Linearized stamps at the current state: ZIP loads, DER injections,
    PV generators.

    ``gen_modes`` maps a generator bus to 'pv' (default), 'qmax' or
    'qmin'; at a limit the voltage-magnitude row is replaced by a row
    pinning the reactive unknown at the bound from ``gen_q_fixed``.
    """
    st = StampSet(imap.n, tag="nonlinear")
    gen_modes = gen_modes or {}
    gen_q_fixed = gen_q_fixed or {}

    for ld in network.loads:
        _stamp_zip(st, imap, x, ld, sign=1.0)
    for der in network.ders:
        _stamp_zip(st, imap, x, der, sign=-1.0)

    for g in network.generators:
        if not g.status or g.bus not in imap.gen_q:
            continue
        qi = imap.gen_q[g.bus]
        vr_i, vi_i = imap.v_pair(g.bus, POSITIVE_SEQUENCE)
        vr, vi = x[vr_i], x[vi_i]
        qg = x[qi]
        m2 = vr * vr + vi * vi
        if m2 <= EPS_V * EPS_V:
            raise VoltageCollapseError(g.bus, POSITIVE_SEQUENCE, m2)
        # generator modeled as a PQ demand of -(P + jQ); Q is an unknown
        ir, ii, d_rr, d_ri, d_ir, d_ii = eval_pq(-g.p_set, -qg, vr, vi, g.bus)
        dq_r = -vi / m2
        dq_i = vr / m2
        _stamp_linearized_current(
            st,
            (vr_i, vi_i),
            [
                (vr_i, d_rr, d_ir, vr),
                (vi_i, d_ri, d_ii, vi),
                (qi, dq_r, dq_i, qg),
            ],
            complex(ir, ii),
        )
        mode = gen_modes.get(g.bus, "pv")
        if mode == "pv":
            # |V|^2 = Vset^2 linearized: 2 vr V_R + 2 vi V_I = Vset^2 + vr^2 + vi^2
            st.add(qi, vr_i, 2.0 * vr)
            st.add(qi, vi_i, 2.0 * vi)
            st.add_rhs(qi, g.v_set * g.v_set + m2)
        else:
            st.add(qi, qi, 1.0)
            st.add_rhs(qi, gen_q_fixed.get(g.bus, g.q_max if mode == "qmax" else g.q_min))

    return st


def _stamp_zip(st: StampSet, imap: IndexMap, x: np.ndarray, dev, sign: float) -> None:
    """Constant-power and constant-current shares of a load (sign=1) or DER (sign=-1)."""
    fp, fi_, _ = getattr(dev, "zip_fractions", (1.0, 0.0, 0.0))
    conn = getattr(dev, "connection", Connection.WYE)
    voltages = {ph: imap.voltage(x, dev.bus, ph) for ph in dev.phases}
    if conn is Connection.DELTA and dev.phases != POSITIVE_SEQUENCE:
        voltages = {ph: imap.voltage(x, dev.bus, ph) for ph in "abc"}

    if fp != 0.0:
        probe = dev if fp == 1.0 else _scaled(dev, fp)
        for terms, signs, cur, jac in eval_pq_three_phase(probe, voltages):
            cur *= sign
            jac = jac * sign
            for ph_t, sg_t in zip(terms, signs):
                row_pair = imap.v_pair(dev.bus, ph_t)
                contribs = []
                for ph_c, sg_c in zip(terms, signs):
                    cr, ci = imap.v_pair(dev.bus, ph_c)
                    blk = jac * sg_t * sg_c
                    contribs.append((cr, blk[0, 0], blk[1, 0], x[cr]))
                    contribs.append((ci, blk[0, 1], blk[1, 1], x[ci]))
                _stamp_linearized_current(st, row_pair, contribs, cur * sg_t)

    if fi_ != 0.0:
        # fixed-magnitude current at the demand's power-factor angle off the
        # present voltage angle; no Jacobian contribution (secant update)
        if conn is Connection.WYE or dev.phases == POSITIVE_SEQUENCE:
            for ph, s in zip(dev.phases, dev.s):
                s = s * fi_
                if s == 0:
                    continue
                v = voltages[ph]
                if abs(v) <= EPS_V:
                    raise VoltageCollapseError(dev.bus, ph, abs(v) ** 2)
                cur = sign * abs(s) * cmath.exp(1j * (cmath.phase(v) - cmath.phase(s)))
                rr, ri = imap.v_pair(dev.bus, ph)
                st.add_rhs(rr, -cur.real)
                st.add_rhs(ri, -cur.imag)
        else:
            for (ph1, ph2), s in zip((("a", "b"), ("b", "c"), ("c", "a")), dev.s):
                s = s * fi_
                if s == 0:
                    continue
                vleg = voltages[ph1] - voltages[ph2]
                if abs(vleg) <= EPS_V:
                    raise VoltageCollapseError(dev.bus, ph1 + ph2, abs(vleg) ** 2)
                cur = sign * (abs(s) / math.sqrt(3.0)) * cmath.exp(
                    1j * (cmath.phase(vleg) - cmath.phase(s))
                )
                r1 = imap.v_pair(dev.bus, ph1)
                r2 = imap.v_pair(dev.bus, ph2)
                st.add_rhs(r1[0], -cur.real)
                st.add_rhs(r1[1], -cur.imag)
                st.add_rhs(r2[0], cur.real)
                st.add_rhs(r2[1], cur.imag)


def _scaled(dev, f: float):
    from dataclasses import replace

    return replace(dev, s=tuple(f * s for s in dev.s))


def stamp_injections(
    injections: dict[int, dict[str, complex]], imap: IndexMap
) -> StampSet:
    """Constant per-phase current consumptions (the torn-network boundary drive)."""
    st = StampSet(imap.n, tag="injections")
    for bus_id, per_phase in injections.items():
        for ph, cur in per_phase.items():
            rr, ri = imap.v_pair(bus_id, ph)
            st.add_rhs(rr, -cur.real)
            st.add_rhs(ri, -cur.imag)
    return st


def stamp_system(
    network: Network,
    imap: IndexMap,
    x: np.ndarray,
    hs: HomotopyState | None = None,
    gen_modes: dict[int, str] | None = None,
    gen_q_fixed: dict[int, float] | None = None,
    injections: dict[int, dict[str, complex]] | None = None,
    linear_cache: StampSet | None = None,
) -> tuple[StampSet, StampSet]:
    """Produce (linear, nonlinear) stamps for the full system at state x.

    The linear part depends only on the continuation state and can be
    cached across NR iterations; pass it back via ``linear_cache``.
    """
    if linear_cache is None:
        linear_cache = stamp_linear(network, imap, hs)
        for port in network.ports:
            linear_cache.merge(stamp_coupling_port(port, network, imap))
        if injections:
            linear_cache.merge(stamp_injections(injections, imap))
    nonlin = stamp_nonlinear(network, imap, x, gen_modes, gen_q_fixed)
    return linear_cache, nonlin
