#!/usr/bin/env python3
"""Regenerate the bundled example data under src/tandem/data/.

The feeder documents follow the package's JSON schema (see README);
external feeder models must be converted into that schema by a script
like this one before they can be coupled.  Everything here is
deterministic so the committed data files never drift.
"""

from __future__ import annotations

import json
from pathlib import Path

DATA = Path(__file__).resolve().parent.parent / "src" / "tandem" / "data"


def cx(z: complex):
    return [z.real, z.imag]


def zmatrix(k: int, z_self: complex, z_mut: complex):
    return [[cx(z_self if i == j else z_mut) for j in range(k)] for i in range(k)]


# ----------------------------------------------------------------------
# Feeders
# ----------------------------------------------------------------------


def feeder_small() -> dict:
    """Three-node balanced feeder: wye load, delta load, one capacitor."""
    z_self, z_mut = complex(0.30, 0.70), complex(0.10, 0.30)
    return {
        "schema": 1,
        "name": "feeder_small",
        "head": "n1",
        "nominal_kv": 12.47,
        "nodes": [
            {"id": "n1", "phases": "abc", "kv": 12.47},
            {"id": "n2", "phases": "abc", "kv": 12.47},
            {"id": "n3", "phases": "abc", "kv": 12.47},
        ],
        "lines": [
            {"from": "n1", "to": "n2", "phases": "abc", "length_miles": 1.0,
             "z_ohms_per_mile": zmatrix(3, z_self, z_mut)},
            {"from": "n2", "to": "n3", "phases": "abc", "length_miles": 0.8,
             "z_ohms_per_mile": zmatrix(3, z_self, z_mut)},
        ],
        "transformers": [],
        "loads": [
            {"node": "n2", "connection": "wye", "kw": [300.0, 320.0, 280.0],
             "kvar": [100.0, 110.0, 90.0], "zip": [1.0, 0.0, 0.0]},
            {"node": "n3", "connection": "delta", "kw": [150.0, 150.0, 150.0],
             "kvar": [50.0, 50.0, 50.0], "zip": [0.8, 0.1, 0.1]},
        ],
        "capacitors": [{"node": "n3", "kvar": [100.0, 100.0, 100.0]}],
        "ders": [],
    }


def feeder_medium() -> dict:
    """~24-node feeder: three-phase backbone, single- and two-phase laterals,
    mixed wye/delta ZIP loads, two capacitor banks, DERs on about a fifth of
    the load nodes."""
    z_self, z_mut = complex(0.28, 0.66), complex(0.09, 0.30)
    z1 = complex(0.42, 0.78)
    nodes = [{"id": "n1", "phases": "abc", "kv": 12.47}]
    lines = []
    loads = []
    caps = []
    ders = []

    # backbone n1..n8
    for i in range(2, 9):
        nodes.append({"id": f"n{i}", "phases": "abc", "kv": 12.47})
        lines.append({"from": f"n{i-1}", "to": f"n{i}", "phases": "abc",
                      "length_miles": 0.6, "z_ohms_per_mile": zmatrix(3, z_self, z_mut)})

    # phase-b lateral off n3: n9..n12
    prev = "n3"
    for i in range(9, 13):
        nodes.append({"id": f"n{i}", "phases": "b", "kv": 12.47})
        lines.append({"from": prev, "to": f"n{i}", "phases": "b",
                      "length_miles": 0.5, "z_ohms_per_mile": [[cx(z1)]]})
        prev = f"n{i}"

    # phase-c lateral off n5: n13..n16
    prev = "n5"
    for i in range(13, 17):
        nodes.append({"id": f"n{i}", "phases": "c", "kv": 12.47})
        lines.append({"from": prev, "to": f"n{i}", "phases": "c",
                      "length_miles": 0.5, "z_ohms_per_mile": [[cx(z1)]]})
        prev = f"n{i}"

    # two-phase lateral off n6: n17..n20
    prev = "n6"
    for i in range(17, 21):
        nodes.append({"id": f"n{i}", "phases": "ab", "kv": 12.47})
        lines.append({"from": prev, "to": f"n{i}", "phases": "ab",
                      "length_miles": 0.45, "z_ohms_per_mile": zmatrix(2, z_self * 1.2, z_mut)})
        prev = f"n{i}"

    # three-phase spur off n7 behind a transformer: n21..n24
    nodes.append({"id": "n21", "phases": "abc", "kv": 12.47})
    prev = "n21"
    for i in range(22, 25):
        nodes.append({"id": f"n{i}", "phases": "abc", "kv": 12.47})
        lines.append({"from": prev, "to": f"n{i}", "phases": "abc",
                      "length_miles": 0.5, "z_ohms_per_mile": zmatrix(3, z_self, z_mut)})
        prev = f"n{i}"
    transformers = [
        {"from": "n7", "to": "n21", "phases": "abc", "r_ohms": 0.05, "x_ohms": 0.35,
         "connection": "wye"}
    ]

    loads += [
        {"node": "n2", "connection": "wye", "kw": [260.0, 240.0, 250.0],
         "kvar": [90.0, 80.0, 85.0], "zip": [0.7, 0.1, 0.2]},
        {"node": "n4", "connection": "delta", "kw": [220.0, 180.0, 200.0],
         "kvar": [70.0, 60.0, 65.0], "zip": [0.9, 0.1, 0.0]},
        {"node": "n6", "connection": "wye", "kw": [310.0, 330.0, 300.0],
         "kvar": [110.0, 115.0, 100.0], "zip": [1.0, 0.0, 0.0]},
        {"node": "n8", "connection": "wye", "kw": [180.0, 170.0, 190.0],
         "kvar": [60.0, 55.0, 65.0], "zip": [0.6, 0.2, 0.2]},
        {"node": "n10", "connection": "wye", "kw": [120.0], "kvar": [40.0], "zip": [0.8, 0.2, 0.0]},
        {"node": "n12", "connection": "wye", "kw": [90.0], "kvar": [30.0], "zip": [1.0, 0.0, 0.0]},
        {"node": "n14", "connection": "wye", "kw": [110.0], "kvar": [35.0], "zip": [0.9, 0.0, 0.1]},
        {"node": "n16", "connection": "wye", "kw": [80.0], "kvar": [25.0], "zip": [1.0, 0.0, 0.0]},
        {"node": "n18", "connection": "wye", "kw": [95.0, 105.0], "kvar": [30.0, 35.0],
         "zip": [0.85, 0.15, 0.0]},
        {"node": "n20", "connection": "wye", "kw": [70.0, 75.0], "kvar": [22.0, 25.0],
         "zip": [1.0, 0.0, 0.0]},
        {"node": "n22", "connection": "delta", "kw": [160.0, 150.0, 170.0],
         "kvar": [55.0, 50.0, 60.0], "zip": [0.75, 0.25, 0.0]},
        {"node": "n24", "connection": "wye", "kw": [140.0, 150.0, 145.0],
         "kvar": [45.0, 50.0, 48.0], "zip": [1.0, 0.0, 0.0]},
    ]
    caps += [
        {"node": "n5", "kvar": [250.0, 250.0, 250.0]},
        {"node": "n22", "kvar": [150.0, 150.0, 150.0]},
    ]
    # DERs on 3 of the 12 load nodes (25 percent)
    ders += [
        {"node": "n6", "kw": [110.0, 110.0, 110.0], "kvar": [0.0, 0.0, 0.0], "group": "pv"},
        {"node": "n14", "kw": [60.0], "kvar": [0.0], "group": "pv"},
        {"node": "n24", "kw": [90.0, 90.0, 90.0], "kvar": [0.0, 0.0, 0.0], "group": "pv"},
    ]
    return {
        "schema": 1,
        "name": "feeder_medium",
        "head": "n1",
        "nominal_kv": 12.47,
        "nodes": nodes,
        "lines": lines,
        "transformers": transformers,
        "loads": loads,
        "capacitors": caps,
        "ders": ders,
    }


def feeder_stressed() -> dict:
    """Heavily loaded 34.5 kV feeder whose demand is large relative to the
    transmission bus it couples to; DERs on a quarter of the load nodes sized
    to visibly lift the voltage profile."""
    z_self, z_mut = complex(0.25, 0.62), complex(0.08, 0.31)
    nodes = [{"id": "n1", "phases": "abc", "kv": 34.5}]
    lines = []
    for i in range(2, 13):
        nodes.append({"id": f"n{i}", "phases": "abc", "kv": 34.5})
        lines.append({"from": f"n{i-1}", "to": f"n{i}", "phases": "abc",
                      "length_miles": 0.9, "z_ohms_per_mile": zmatrix(3, z_self, z_mut)})
    loads = [
        {"node": "n3", "connection": "wye", "kw": [2400.0, 2200.0, 2300.0],
         "kvar": [900.0, 800.0, 850.0], "zip": [0.8, 0.1, 0.1]},
        {"node": "n5", "connection": "delta", "kw": [2600.0, 2100.0, 2400.0],
         "kvar": [950.0, 750.0, 900.0], "zip": [0.9, 0.1, 0.0]},
        {"node": "n7", "connection": "wye", "kw": [2800.0, 3000.0, 2700.0],
         "kvar": [1000.0, 1100.0, 950.0], "zip": [1.0, 0.0, 0.0]},
        {"node": "n9", "connection": "wye", "kw": [2300.0, 2400.0, 2500.0],
         "kvar": [850.0, 900.0, 950.0], "zip": [0.7, 0.2, 0.1]},
        {"node": "n11", "connection": "delta", "kw": [2000.0, 2000.0, 2000.0],
         "kvar": [700.0, 700.0, 700.0], "zip": [1.0, 0.0, 0.0]},
        {"node": "n12", "connection": "wye", "kw": [1800.0, 1900.0, 1850.0],
         "kvar": [650.0, 700.0, 680.0], "zip": [0.8, 0.2, 0.0]},
    ]
    caps = [{"node": "n8", "kvar": [1200.0, 1200.0, 1200.0]}]
    # DERs sized around a quarter of local demand, on 2 of 6 load nodes
    ders = [
        {"node": "n7", "kw": [2000.0, 2000.0, 2000.0], "kvar": [0.0, 0.0, 0.0], "group": "pv"},
        {"node": "n11", "kw": [1500.0, 1500.0, 1500.0], "kvar": [0.0, 0.0, 0.0], "group": "pv"},
    ]
    return {
        "schema": 1,
        "name": "feeder_stressed",
        "head": "n1",
        "nominal_kv": 34.5,
        "nodes": nodes,
        "lines": lines,
        "transformers": [],
        "loads": loads,
        "capacitors": caps,
        "ders": ders,
    }


# ----------------------------------------------------------------------
# Coupling maps
# ----------------------------------------------------------------------


def activsg70k_coupling() -> dict:
    """Coupling layout for the public 70k-bus synthetic interconnection with
    100 taxonomy feeders (feeder files must be pre-converted to this
    package's JSON schema and named <feeder>.json)."""
    layout = {
        "R1-12.47-3": [43232, 27133, 43676, 27166, 43191, 24363, 60593,
                        23964, 27842, 24159, 24361, 27769, 27829, 26697],
        "R1-12.47-4": [24260, 21055, 24037, 43355, 19324, 21081, 60262, 23938],
        "R2-12.47-1": [43204, 43198, 24264, 24040, 43170, 32054, 20708, 19360],
        "R3-12.47-1": [60577, 24057, 43186, 27120, 5983, 5940, 43762, 27168],
        "R3-12.47-2": [27157, 17054, 27623, 60410, 24334, 43321, 43222, 27411],
        "R3-12.47-3": [10642, 43415, 24124, 60291, 24002, 27174, 43188, 20325],
        "R4-12.47-1": [27156, 43208, 24023, 43283, 43282, 43362, 24158, 43499],
        "R4-12.47-2": [43193, 24157, 23997, 5929, 6232, 43324, 27666, 27103],
        "R4-25.00-1": [24032, 24280, 24348, 19143, 27154, 26282, 60584, 24341],
        "R5-25.00-1": [24120, 16768, 24267, 27104, 22558, 27822, 26700, 16156],
        "R5-35.00-1": [24136, 24035, 24128, 24131, 43640, 31322, 24161,
                        27432, 43337, 16528, 26274, 43265, 37440, 27773],
    }
    couplings = [
        {"feeder": f"{name}.json", "bus": bus}
        for name, buses in layout.items()
        for bus in buses
    ]
    assert len(couplings) == 100
    return {"schema": 1, "couplings": couplings}


def coupling_maps() -> dict[str, dict]:
    return {
        "case9_feeder1.json": {
            "schema": 1,
            "couplings": [{"feeder": "feeder_medium.json", "bus": 5}],
        },
        "case9_feeder4.json": {
            "schema": 1,
            "couplings": [
                {"feeder": "feeder_medium.json", "bus": 5},
                {"feeder": "feeder_medium.json", "bus": 6},
                {"feeder": "feeder_medium.json", "bus": 7},
                {"feeder": "feeder_medium.json", "bus": 9},
            ],
        },
        "case9_stressed.json": {
            "schema": 1,
            "couplings": [{"feeder": "feeder_stressed.json", "bus": 5, "load_scale": 1.2}],
        },
    }


# ----------------------------------------------------------------------
# Synthetic transmission cases
# ----------------------------------------------------------------------


def case27() -> str:
    """27-bus double-ring: one slack, two PV machines, 24 PQ buses.

    Sized so up to 16 feeders can be attached for scalability sweeps.
    """
    lines = []
    # outer ring 1..18, inner ring 19..27, spokes every third bus
    ring1 = list(range(1, 19))
    ring2 = list(range(19, 28))
    for a, b in zip(ring1, ring1[1:] + ring1[:1]):
        lines.append((a, b, 0.008, 0.065, 0.03, 0, 0))
    for a, b in zip(ring2, ring2[1:] + ring2[:1]):
        lines.append((a, b, 0.010, 0.080, 0.02, 0, 0))
    for k, (a, b) in enumerate(zip(ring1[::2], ring2)):
        lines.append((a, b, 0.006, 0.045, 0.0, 1.0 if k % 3 else 0.98, 0))

    bus_rows = []
    for i in range(1, 28):
        if i == 1:
            btype, pd, qd = 3, 0.0, 0.0
        elif i in (7, 13):
            btype, pd, qd = 2, 0.0, 0.0
        else:
            btype = 1
            pd, qd = (22.0, 7.0) if i % 2 else (16.0, 5.0)
        bus_rows.append(f"\t{i}\t{btype}\t{pd}\t{qd}\t0\t0\t1\t1\t0\t138\t1\t1.1\t0.9;")

    gen_rows = [
        "\t1\t0\t0\t300\t-300\t1.03\t100\t1\t500\t10;",
        "\t7\t180\t0\t150\t-150\t1.02\t100\t1\t300\t10;",
        "\t13\t160\t0\t150\t-150\t1.02\t100\t1\t300\t10;",
    ]
    branch_rows = [
        f"\t{a}\t{b}\t{r}\t{x}\t{c}\t250\t250\t250\t{tap}\t{shift}\t1\t-360\t360;"
        for a, b, r, x, c, tap, shift in lines
    ]
    return (
        "function mpc = case27\n"
        "% Synthetic 27-bus double-ring transmission case for feeder-attachment sweeps.\n"
        "mpc.version = '2';\n"
        "mpc.baseMVA = 100;\n\n"
        "% bus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin\n"
        "mpc.bus = [\n" + "\n".join(bus_rows) + "\n];\n\n"
        "% bus Pg Qg Qmax Qmin Vg mBase status Pmax Pmin\n"
        "mpc.gen = [\n" + "\n".join(gen_rows) + "\n];\n\n"
        "% fbus tbus r x b rateA rateB rateC ratio angle status angmin angmax\n"
        "mpc.branch = [\n" + "\n".join(branch_rows) + "\n];\n"
    )


def case_radial7() -> str:
    """Six-segment radial chain with one heavy reactive load at the end,
    frozen close to its loadability nose (about eight percent of margin)."""
    rows_bus = ["\t1\t3\t0\t0\t0\t0\t1\t1\t0\t138\t1\t1.1\t0.9;"]
    for i in range(2, 8):
        pd, qd = (35.0, 35.0) if i == 7 else (0.0, 0.0)
        rows_bus.append(f"\t{i}\t1\t{pd}\t{qd}\t0\t0\t1\t1\t0\t138\t1\t1.1\t0.9;")
    rows_branch = [
        f"\t{i}\t{i+1}\t0.01\t0.09\t0\t250\t250\t250\t0\t0\t1\t-360\t360;" for i in range(1, 7)
    ]
    return (
        "function mpc = case_radial7\n"
        "% Heavily loaded radial chain; the end-bus demand sits near the\n"
        "% nose of the feeder's PV curve (collapse at roughly 1.09x load).\n"
        "mpc.version = '2';\n"
        "mpc.baseMVA = 100;\n\n"
        "mpc.bus = [\n" + "\n".join(rows_bus) + "\n];\n\n"
        "mpc.gen = [\n\t1\t0\t0\t300\t-300\t1.02\t100\t1\t250\t10;\n];\n\n"
        "mpc.branch = [\n" + "\n".join(rows_branch) + "\n];\n"
    )


def main():
    DATA.mkdir(parents=True, exist_ok=True)
    (DATA / "feeder_small.json").write_text(json.dumps(feeder_small(), indent=1) + "\n")
    (DATA / "feeder_medium.json").write_text(json.dumps(feeder_medium(), indent=1) + "\n")
    (DATA / "feeder_stressed.json").write_text(json.dumps(feeder_stressed(), indent=1) + "\n")
    for name, doc in coupling_maps().items():
        (DATA / name).write_text(json.dumps(doc, indent=1) + "\n")
    (DATA / "activsg70k_coupling.json").write_text(
        json.dumps(activsg70k_coupling(), indent=1) + "\n"
    )
    (DATA / "case27.m").write_text(case27())
    (DATA / "case_radial7.m").write_text(case_radial7())
    print(f"wrote example data to {DATA}")


if __name__ == "__main__":
    main()
