"""Convert MATPOWER cases (via PYPOWER) into the pevgrid JSON case schema.

Series admittance is taken from branch R/X; line charging, shunts and tap
ratios are dropped. Loads and generator limits are converted to per-unit on
the case base MVA. Cost rows must be polynomial (model 2) with <= 3 terms.

    python3 scripts/matpower_to_json.py case9 crates/core/data/cases/case9.json
"""
import json
import sys

import pypower.api as api


def convert(name):
    ppc = getattr(api, name)()
    base = float(ppc["baseMVA"])
    buses = []
    for row in ppc["bus"]:
        buses.append({
            "id": int(row[0]),
            "v_min": float(row[12]),
            "v_max": float(row[11]),
            "base_load_p": float(row[2]) / base,
            "base_load_q": float(row[3]) / base,
        })
    lines = []
    for row in ppc["branch"]:
        if len(row) > 10 and row[10] == 0:
            continue
        z = complex(row[2], row[3])
        y = 1.0 / z
        lines.append({
            "from": int(row[0]),
            "to": int(row[1]),
            "admittance": {"re": y.real, "im": y.imag},
        })
    gens = []
    for row, cost in zip(ppc["gen"], ppc["gencost"]):
        if row[7] <= 0:
            continue
        assert int(cost[0]) == 2, "only polynomial costs are supported"
        n = int(cost[3])
        coeffs = [float(c) for c in cost[4:4 + n]]
        coeffs = [0.0] * (3 - n) + coeffs
        gens.append({
            "bus": int(row[0]),
            "p_min": float(row[9]) / base,
            "p_max": float(row[8]) / base,
            "q_min": float(row[4]) / base,
            "q_max": float(row[3]) / base,
            "cost": {"c2": coeffs[0], "c1": coeffs[1], "c0": coeffs[2]},
        })
    return {"name": name, "base_mva": base, "buses": buses, "lines": lines,
            "generators": gens}


if __name__ == "__main__":
    case = convert(sys.argv[1])
    with open(sys.argv[2], "w") as f:
        json.dump(case, f, indent=1)
        f.write("\n")
