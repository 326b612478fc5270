"""Regenerate the bundled 15-node feeder fixture.

Writes feeder15.net (smooth solar day) and feeder15_cloudy.net (double-valley
solar day) plus their profile CSVs into src/derguard/data/feeder15/.  The two
variants share topology, fleet, and gross demand; only the solar series and
hence the net-load and curtailment files differ.

Shapes are synthetic but follow the usual residential duck curve: morning
shoulder near 08:00, evening peak near 19:00, solar bell centered early
afternoon sized to roughly 15% of daily demand energy on the sunny day.
Deterministic: everything derives from SEED.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from derguard.network import load_network, write_profile_csv  # noqa: E402

SEED = 20240711
DT_MIN = 10
N_T = 24 * 60 // DT_MIN
BASE_MVA = 100.0

# node id -> gross peak demand, p.u.
PEAKS = {
    "2": 0.06, "3": 0.09, "4": 0.07, "5": 0.08, "6": 0.07, "7": 0.05,
    "8": 0.09, "9": 0.06, "10": 0.08, "11": 0.06, "12": 0.07, "13": 0.05,
    "14": 0.06, "15": 0.05,
}
DR_NODES = ("3", "8", "10", "11", "12", "13", "14")   # curtailable load
SENSOR_NODES = ("3", "4", "5", "7", "8", "9", "10", "12", "14", "15")
TAN_PHI = 0.33          # load power factor ~0.95
CURT_SHARE = 0.5        # curtailable fraction (aggressive DR participation)
PV_ENERGY_FRAC = 0.15   # sunny-day PV energy as fraction of demand energy
NET_FLOOR = 0.002       # net demand floor, keeps nodal net load nonnegative

LINES = [
    # id   from to   r       x       limit
    ("L1", "1", "2", 0.010, 0.025, 1.6),
    ("L2", "2", "3", 0.0125, 0.0275, 1.2),
    ("L3", "3", "4", 0.0125, 0.0275, 1.0),
    ("L4", "4", "5", 0.015, 0.030, 0.8),
    ("L5", "5", "6", 0.015, 0.030, 0.7),
    ("L6", "6", "7", 0.0175, 0.0325, 0.5),
    ("L7", "2", "8", 0.020, 0.025, 0.7),
    ("L8", "8", "9", 0.0225, 0.0275, 0.5),
    ("L9", "9", "10", 0.025, 0.030, 0.4),
    ("L10", "4", "11", 0.0225, 0.0275, 0.4),
    ("L11", "11", "12", 0.025, 0.030, 0.3),
    ("L12", "6", "13", 0.0225, 0.0275, 0.4),
    ("L13", "13", "14", 0.025, 0.030, 0.35),
    ("L14", "14", "15", 0.0275, 0.0325, 0.3),
]

GENERATORS = [
    # id node c_energy c_quad c_reserve p_min p_max  q_min  q_max  ramp_dn ramp_up flexible
    # g1 capacity sits below the evening net peak so local units and DR
    # must carry the ramp; ramps are per 10-minute interval.  The mild
    # quadratic term keeps the overnight price responsive to load, which
    # pins the storage charging schedule to a unique optimum.
    ("g1", "5", 20.0, 2.0, 4.0, 0.0, 0.6, -1.0, 1.0, -0.06, 0.06, 1),
    ("g2", "9", 40.0, 0.0, 8.0, 0.0, 0.35, -0.2, 0.25, -0.02, 0.02, 1),
    ("g3", "14", 60.0, 0.0, 10.0, 0.0, 0.25, -0.15, 0.15, -0.015, 0.015, 1),
]

STORAGE = [
    # id node eff_ch eff_dis e_min e_max p_min p_max e0
    ("s1", "7", 0.95, 0.95, 0.2, 1.44, 0.0, 0.12, 0.72),
    ("s2", "10", 0.92, 0.92, 0.1, 0.72, 0.0, 0.06, 0.36),
]

SHUNT_B = {"6": 0.015, "10": 0.010}
SHUNT_G = {}   # zero: network losses accounted on lines only
# Curtailment offers straddle the g2 energy cost (40): the cheap block is
# scheduled ahead of g2 during the evening deficit, the dear block after.
# Prices inside each block are separated by a whole unit so the dispatch
# split across nodes is unique rather than degenerate.  Nodes 11 and 12
# share a line, giving the geographic regularization an electrically
# adjacent target pair.
C_CURT = {"3": 36.0, "11": 37.0, "12": 38.0,
          "8": 55.0, "10": 56.0, "13": 57.0, "14": 58.0}


def demand_shape(hours, rng):
    """Normalized double-peak residential day with per-node jitter."""
    m_h = 8.2 + rng.uniform(-0.4, 0.4)
    e_h = 19.0 + rng.uniform(-0.4, 0.4)
    m_w = 1.6 + rng.uniform(-0.2, 0.2)
    e_w = 2.2 + rng.uniform(-0.2, 0.2)
    base = 0.45 + rng.uniform(-0.04, 0.04)
    s = (base
         + 0.25 * np.exp(-0.5 * ((hours - m_h) / m_w) ** 2)
         + 0.55 * np.exp(-0.5 * ((hours - e_h) / e_w) ** 2))
    return s / s.max()


def solar_shape(hours, cloudy):
    """Solar bell on [~7:20, ~18:20]; cloudy day carves two valleys."""
    arg = (hours - 12.8) / 5.6 * (np.pi / 2)
    bell = np.where(np.abs(arg) < np.pi / 2, np.cos(np.clip(arg, -1.55, 1.55)), 0.0)
    bell = np.maximum(bell, 0.0) ** 1.5
    if cloudy:
        dip = (0.55 * np.exp(-0.5 * ((hours - 11.5) / 0.7) ** 2)
               + 0.50 * np.exp(-0.5 * ((hours - 14.2) / 0.9) ** 2))
        bell = bell * np.maximum(1.0 - dip, 0.05)
    return bell


def build_series():
    rng = np.random.default_rng(SEED)
    hours = np.arange(N_T) * DT_MIN / 60.0
    nodes = [str(i) for i in range(1, 16)]
    gross = np.zeros((len(nodes), N_T))
    for i, node in enumerate(nodes):
        if node in PEAKS:
            gross[i] = PEAKS[node] * demand_shape(hours, rng)

    # PV capacity spread over the load nodes in proportion to peak demand,
    # sized on the sunny-day shape; keeps nodal net load above the floor.
    sunny = solar_shape(hours, cloudy=False)
    demand_energy = gross.sum()
    cap_total = PV_ENERGY_FRAC * demand_energy / sunny.sum()
    peak_sum = sum(PEAKS.values())
    weights = {node: peak / peak_sum for node, peak in PEAKS.items()}

    out = {}
    for variant, cloudy in (("sunny", False), ("cloudy", True)):
        pv_shape = solar_shape(hours, cloudy)
        net = gross.copy()
        for node, w in weights.items():
            i = nodes.index(node)
            pv = cap_total * w * pv_shape
            # clip so nodal net demand never drops below the floor
            pv = np.minimum(pv, np.maximum(gross[i] - NET_FLOOR, 0.0))
            net[i] = gross[i] - pv
        q = gross * TAN_PHI
        cmax = np.zeros_like(net)
        for node in DR_NODES:
            i = nodes.index(node)
            cmax[i] = CURT_SHARE * np.maximum(net[i], 0.0)
        out[variant] = {"net": net, "q": q, "cmax": cmax}
    return nodes, hours, gross, out


def net_file_text(name, profile_files):
    rows = ["[system]",
            f"name = {name}",
            f"base_mva = {BASE_MVA}",
            f"dt_minutes = {float(DT_MIN)}",
            "root = 1",
            "",
            "[nodes]",
            "id u_min u_max g_sh b_sh gamma sensor c_curt"]
    for i in range(1, 16):
        node = str(i)
        gam = TAN_PHI if node in PEAKS else 0.0
        cc = C_CURT.get(node, 0.0)
        rows.append(" ".join([
            node, "0.9025", "1.1025",
            repr(SHUNT_G.get(node, 0.0)), repr(SHUNT_B.get(node, 0.0)),
            repr(gam), "1" if node in SENSOR_NODES else "0", repr(cc)]))
    rows += ["", "[lines]", "id from to r x limit"]
    for lid, fr, to, r, x, lim in LINES:
        rows.append(f"{lid} {fr} {to} {r!r} {x!r} {lim!r}")
    rows += ["", "[generators]",
             "id node c_energy c_quad c_reserve p_min p_max q_min q_max "
             "ramp_dn ramp_up flexible"]
    for g in GENERATORS:
        rows.append(" ".join(repr(v) if isinstance(v, float) else str(v) for v in g))
    rows += ["", "[storage]", "id node eff_ch eff_dis e_min e_max p_min p_max e0"]
    for s in STORAGE:
        rows.append(" ".join(repr(v) if isinstance(v, float) else str(v) for v in s))
    rows += ["", "[profiles]"]
    for key, fname in profile_files.items():
        rows.append(f"{key} = {fname}")
    return "\n".join(rows) + "\n"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    default_out = Path(__file__).resolve().parents[1] / "src/derguard/data/feeder15"
    ap.add_argument("--out", type=Path, default=default_out)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    nodes, hours, gross, variants = build_series()
    intervals = tuple(range(N_T))

    write_profile_csv(args.out / "feeder15_demand_q.csv", intervals, nodes,
                      variants["sunny"]["q"])
    files = {}
    for variant, name in (("sunny", "feeder15"), ("cloudy", "feeder15_cloudy")):
        data = variants[variant]
        write_profile_csv(args.out / f"{name}_demand_p.csv", intervals, nodes,
                          data["net"])
        write_profile_csv(args.out / f"{name}_curtail_max.csv", intervals, nodes,
                          data["cmax"])
        profile_files = {
            "demand_p": f"{name}_demand_p.csv",
            "demand_q": "feeder15_demand_q.csv",
            "curtail_max": f"{name}_curtail_max.csv",
        }
        path = args.out / f"{name}.net"
        path.write_text(net_file_text(name, profile_files))
        files[variant] = path

    for variant, path in files.items():
        network, fleet, profile = load_network(path)
        peak = profile.p.sum(axis=0).max()
        pv_energy = (gross - profile.p).sum()
        frac = pv_energy / gross.sum()
        print(f"{path.name}: {len(network.nodes)} nodes, "
              f"{len(network.lines)} lines, peak net load {peak:.3f} p.u., "
              f"solar energy fraction {frac:.3f}")


if __name__ == "__main__":
    main()
