#!/usr/bin/env python3
"""Writes data/ieee37.json: a single-phase, positive-sequence approximation of
the IEEE 37-node feeder (regulator and the 709-775 transformer removed).

Buses are numbered in depth-first order from the substation so that index
ranges correspond to contiguous areas of the feeder.
"""
import json
import pathlib

# Approximate positive-sequence series impedance (ohm/mile) and line charging
# (micro-siemens/mile) per cable configuration.
CONFIGS = {
    721: (complex(0.24, 0.24), 159.7),
    722: (complex(0.37, 0.26), 127.8),
    723: (complex(1.00, 0.40), 74.8),
    724: (complex(1.60, 0.44), 64.6),
}

# (from, to, length ft, config)
SEGMENTS = [
    (799, 701, 1850, 721), (701, 702, 960, 722), (702, 705, 400, 724),
    (702, 713, 360, 723), (702, 703, 1320, 722), (703, 727, 240, 724),
    (703, 730, 600, 723), (704, 714, 80, 724), (704, 720, 800, 723),
    (705, 742, 320, 724), (705, 712, 240, 724), (706, 725, 280, 724),
    (707, 724, 760, 724), (707, 722, 120, 724), (708, 733, 320, 723),
    (708, 732, 320, 724), (709, 731, 600, 723), (709, 708, 320, 723),
    (710, 735, 200, 724), (710, 736, 1280, 724), (711, 741, 400, 723),
    (711, 740, 200, 724), (713, 704, 520, 723), (714, 718, 520, 724),
    (720, 707, 920, 724), (720, 706, 600, 723), (727, 744, 280, 723),
    (730, 709, 200, 723), (733, 734, 560, 723), (734, 737, 640, 723),
    (734, 710, 520, 724), (737, 738, 400, 723), (738, 711, 400, 723),
    (744, 728, 200, 724), (744, 729, 280, 724),
]

BASE_KV = 4.8
BASE_MVA = 2.5


def main():
    adj = {}
    for f, t, _, _ in SEGMENTS:
        adj.setdefault(f, []).append(t)
        adj.setdefault(t, []).append(f)
    order, seen, stack = [], set(), [799]
    while stack:
        node = stack.pop()
        if node in seen:
            continue
        seen.add(node)
        order.append(node)
        for nb in sorted(adj[node], reverse=True):
            if nb not in seen:
                stack.append(nb)
    index = {name: i for i, name in enumerate(order)}
    z_base = BASE_KV ** 2 / BASE_MVA

    branches = []
    for f, t, ft, cfg in SEGMENTS:
        z_mi, b_mi = CONFIGS[cfg]
        miles = ft / 5280.0
        y = 1.0 / (z_mi * miles / z_base)
        shunt_b = b_mi * 1e-6 * miles * z_base
        branches.append({
            "from": index[f], "to": index[t],
            "g": round(y.real, 9), "b": round(y.imag, 9),
            "shunt_b": round(shunt_b, 12),
        })
    case = {
        "name": "ieee37_single_phase_approx",
        "n_buses": len(order),
        "slack_index": 0,
        "base_kv": BASE_KV,
        "base_mva": BASE_MVA,
        "bus_names": [str(n) for n in order],
        "branches": branches,
    }
    out = pathlib.Path(__file__).resolve().parent.parent / "data" / "ieee37.json"
    out.write_text(json.dumps(case, indent=2) + "\n")
    print(f"wrote {out} ({len(order)} buses, {len(branches)} branches)")


if __name__ == "__main__":
    main()
