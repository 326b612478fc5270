"""Multi-period dispatch scheduling as a second-order-cone program.

Branch-flow (DistFlow) model on a radial feeder in squared-voltage (u) and
squared-current (a) variables, conically relaxed: a*u >= fp^2 + fq^2 per
line and interval.  Decisions: generator active/reactive output and upward
reserve, nodal load curtailment, storage charge/discharge/state of charge,
line flows.  The objective is total energy + curtailment + reserve cost.

The same program doubles as the attacker's dispatch prediction; see
attack.predict_dispatch.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .conic import ConicProgram, solve_conic
from .errors import DispatchInfeasible
from .network import validate_radial

EXACTNESS_TOL = 1e-5     # relaxation gap above which an interval is inexact
SIMULTANEOUS_TOL = 1e-8  # p_ch * p_dis product flagged above this


@dataclass(frozen=True)
class DispatchParams:
    reserve_fraction: float = 0.05   # system reserve as share of total demand
    reserve_floor: float = 0.0       # absolute per-interval reserve minimum, p.u.
    root_voltage_sq: float = 1.0     # squared slack voltage magnitude
    initial_output: dict | None = None  # gen id -> pre-horizon output (ramp anchor)
    terminal_soc: bool = True        # require e_T >= e_0 (no free depletion)
    horizon: tuple | None = None     # (start, stop) interval indices, else full

    def __post_init__(self):
        if self.reserve_fraction < 0:
            raise ValueError("reserve_fraction must be >= 0")
        if self.reserve_floor < 0:
            raise ValueError("reserve_floor must be >= 0")


@dataclass
class DispatchSchedule:
    """Primal solution over the horizon; arrays are (n_entities, n_t)."""

    intervals: tuple
    dt_minutes: float
    gen_ids: tuple
    node_ids: tuple
    line_ids: tuple
    sto_ids: tuple
    g_p: np.ndarray
    g_q: np.ndarray
    r: np.ndarray
    d_curt: np.ndarray       # per node; zero rows for non-curtailable nodes
    p_ch: np.ndarray
    p_dis: np.ndarray
    e: np.ndarray
    f_p: np.ndarray
    f_q: np.ndarray
    a: np.ndarray
    u: np.ndarray
    objective: float
    status: str
    iterations: int
    residuals: dict
    reserve_required: np.ndarray     # per-interval system reserve floor

    @property
    def n_t(self):
        return len(self.intervals)

    def total_reserve(self):
        return self.r.sum(axis=0)

    def simultaneous_storage(self):
        """(storage id, interval) pairs charging and discharging at once."""
        bad = np.argwhere(self.p_ch * self.p_dis > SIMULTANEOUS_TOL)
        return [(self.sto_ids[k], self.intervals[t]) for k, t in bad]


def _slice_profile(profile, horizon):
    if horizon is None:
        return profile
    lo, hi = horizon
    if not (0 <= lo < hi <= profile.n_intervals):
        raise ValueError(f"horizon {horizon} outside profile range")
    from dataclasses import replace
    return replace(
        profile,
        intervals=profile.intervals[lo:hi],
        p=profile.p[:, lo:hi], q=profile.q[:, lo:hi],
        curtail_min=profile.curtail_min[:, lo:hi],
        curtail_max=profile.curtail_max[:, lo:hi],
        cost_curtail=profile.cost_curtail,
    )


def build_dispatch_program(network, fleet, profile, params=None):
    """Assemble the dispatch SOCP.  Pure construction, no solving."""
    params = params or DispatchParams()
    profile = _slice_profile(profile, params.horizon)
    if profile.n_intervals == 0:
        raise ValueError("profile horizon is empty")
    report = validate_radial(network)

    nodes = list(network.nodes)
    lines = list(network.lines)
    n_n, n_l, n_t = len(nodes), len(lines), profile.n_intervals
    nidx = {node: i for i, node in enumerate(nodes)}
    gens = list(fleet.generators)
    stos = list(fleet.storage)

    # curtailment variables only where some interval allows shedding;
    # elsewhere the bounds pin d to 0 and the variable is dropped
    curt_nodes = [i for i in range(n_n)
                  if profile.curtail_max[i].any() or profile.curtail_min[i].any()]
    cidx = {i: j for j, i in enumerate(curt_nodes)}

    prog = ConicProgram()
    u = prog.add_var("u", n_n * n_t).reshape(n_n, n_t)
    a = prog.add_var("a", n_l * n_t, nonneg=True).reshape(n_l, n_t)
    fp = prog.add_var("fp", n_l * n_t).reshape(n_l, n_t)
    fq = prog.add_var("fq", n_l * n_t).reshape(n_l, n_t)
    if gens:
        gp = prog.add_var("gp", len(gens) * n_t, nonneg=True).reshape(-1, n_t)
        gq = prog.add_var("gq", len(gens) * n_t).reshape(-1, n_t)
        rr = prog.add_var("res", len(gens) * n_t, nonneg=True).reshape(-1, n_t)
    if curt_nodes:
        dc = prog.add_var("dcurt", len(curt_nodes) * n_t).reshape(-1, n_t)
    if stos:
        pch = prog.add_var("pch", len(stos) * n_t).reshape(-1, n_t)
        pdis = prog.add_var("pdis", len(stos) * n_t).reshape(-1, n_t)
        soc = prog.add_var("soc", len(stos) * n_t).reshape(-1, n_t)

    out_lines = {i: [] for i in range(n_n)}   # node -> line indices leaving it
    in_line = {}                              # node -> unique inbound line index
    for j, line in enumerate(lines):
        out_lines[nidx[line.from_node]].append(j)
        in_line[nidx[line.to_node]] = j

    gens_at = {i: [] for i in range(n_n)}
    for gi, g in enumerate(gens):
        gens_at[nidx[g.node]].append(gi)
    stos_at = {i: [] for i in range(n_n)}
    for ki, s in enumerate(stos):
        stos_at[nidx[s.node]].append(ki)

    for t in range(n_t):
        for i, node in enumerate(nodes):
            # active balance: outgoing flows minus inbound net of losses,
            # minus local injection, plus demand and conductive shunt draw
            cols, vals = [], []
            for j in out_lines[i]:
                cols.append(fp[j, t]); vals.append(1.0)
            if i in in_line:
                j = in_line[i]
                cols += [fp[j, t], a[j, t]]
                vals += [-1.0, lines[j].r]
            for gi in gens_at[i]:
                cols.append(gp[gi, t]); vals.append(-1.0)
            for ki in stos_at[i]:
                cols += [pdis[ki, t], pch[ki, t]]
                vals += [-1.0, 1.0]
            if i in cidx:
                cols.append(dc[cidx[i], t]); vals.append(-1.0)
            gsh = network.shunt_g[node]
            if gsh != 0.0:
                cols.append(u[i, t]); vals.append(gsh)
            prog.add_eq(cols, vals, -profile.p[i, t])

            # reactive balance; curtailed load sheds reactive via gamma,
            # capacitive shunt injects proportionally to squared voltage
            cols, vals = [], []
            for j in out_lines[i]:
                cols.append(fq[j, t]); vals.append(1.0)
            if i in in_line:
                j = in_line[i]
                cols += [fq[j, t], a[j, t]]
                vals += [-1.0, lines[j].x]
            for gi in gens_at[i]:
                cols.append(gq[gi, t]); vals.append(-1.0)
            if i in cidx:
                cols.append(dc[cidx[i], t])
                vals.append(-network.gamma[node])
            bsh = network.shunt_b[node]
            if bsh != 0.0:
                cols.append(u[i, t]); vals.append(-bsh)
            prog.add_eq(cols, vals, -profile.q[i, t])

        for j, line in enumerate(lines):
            o, rcv = nidx[line.from_node], nidx[line.to_node]
            # voltage drop along the line in squared magnitudes
            prog.add_eq(
                [u[o, t], u[rcv, t], fp[j, t], fq[j, t], a[j, t]],
                [1.0, -1.0, -2.0 * line.r, -2.0 * line.x,
                 line.r ** 2 + line.x ** 2],
                0.0)
            # relaxed flow-current-voltage product: a*u >= fp^2 + fq^2
            prog.add_soc([
                ([a[j, t], u[o, t]], [1.0, 1.0], 0.0),
                ([a[j, t], u[o, t]], [1.0, -1.0], 0.0),
                ([fp[j, t]], [2.0], 0.0),
                ([fq[j, t]], [2.0], 0.0),
            ])
            # apparent-power rating at both ends (receiving end nets losses)
            prog.add_soc([
                ([], [], line.limit),
                ([fp[j, t]], [1.0], 0.0),
                ([fq[j, t]], [1.0], 0.0),
            ])
            prog.add_soc([
                ([], [], line.limit),
                ([fp[j, t], a[j, t]], [1.0, -line.r], 0.0),
                ([fq[j, t], a[j, t]], [1.0, -line.x], 0.0),
            ])

        # system reserve floor proportional to total demand
        if gens:
            need = max(params.reserve_fraction * profile.p[:, t].sum(),
                       params.reserve_floor)
            prog.add_le([rr[gi, t] for gi in range(len(gens))],
                        [-1.0] * len(gens), -need)

    # slack voltage reference
    root_i = nidx[network.root]
    for t in range(n_t):
        prog.add_eq([u[root_i, t]], [1.0], params.root_voltage_sq)
    for i, node in enumerate(nodes):
        prog.add_bounds(u[i], network.u_min[node], network.u_max[node])

    init = dict(params.initial_output or {})
    for gi, g in enumerate(gens):
        # capacity must fit dispatch plus headroom held as reserve
        for t in range(n_t):
            prog.add_le([gp[gi, t], rr[gi, t]], [1.0, 1.0], g.p_max)
            prog.add_le([gp[gi, t], rr[gi, t]], [-1.0, -1.0], -g.p_min)
        prog.add_bounds(gq[gi], g.q_min, g.q_max)
        if g.flexible:
            anchor = init.get(g.id, 0.5 * (g.p_min + g.p_max))
            prog.add_le([gp[gi, 0]], [1.0], g.ramp_up + anchor)
            prog.add_le([gp[gi, 0]], [-1.0], -(g.ramp_dn + anchor))
            for t in range(1, n_t):
                prog.add_le([gp[gi, t], gp[gi, t - 1]], [1.0, -1.0], g.ramp_up)
                prog.add_le([gp[gi, t], gp[gi, t - 1]], [-1.0, 1.0], -g.ramp_dn)
        if g.cost_energy:
            prog.add_cost(gp[gi], np.full(n_t, float(g.cost_energy)))
        if g.cost_reserve:
            prog.add_cost(rr[gi], np.full(n_t, float(g.cost_reserve)))
        if g.cost_quad:
            for t in range(n_t):
                prog.add_quad_cost(g.cost_quad, [gp[gi, t]], [1.0])

    for j, i in enumerate(curt_nodes):
        for t in range(n_t):
            prog.add_bounds([dc[j, t]], profile.curtail_min[i, t],
                            profile.curtail_max[i, t])
        cost = profile.cost_curtail[i]
        if cost:
            prog.add_cost(dc[j], np.full(n_t, float(cost)))

    for ki, s in enumerate(stos):
        for t in range(n_t):
            # state-of-charge recursion with efficiencies as metered at
            # the plant terminals
            cols = [soc[ki, t], pch[ki, t], pdis[ki, t]]
            vals = [1.0, -s.eff_ch, 1.0 / s.eff_dis]
            if t == 0:
                prog.add_eq(cols, vals, s.e0)
            else:
                prog.add_eq(cols + [soc[ki, t - 1]], vals + [-1.0], 0.0)
        prog.add_bounds(soc[ki], s.e_min, s.e_max)
        prog.add_bounds(pch[ki], s.p_min / s.eff_ch, s.p_max / s.eff_ch)
        prog.add_bounds(pdis[ki], s.p_min * s.eff_dis, s.p_max * s.eff_dis)
        if params.terminal_soc:
            prog.add_le([soc[ki, n_t - 1]], [-1.0], -s.e0)

    return prog


def solve_dispatch(network, fleet, profile, params=None, tolerances=None,
                   backend=None):
    """Solve the dispatch program and unpack the schedule.

    Raises DispatchInfeasible (with the dual certificate) when the demand
    cannot be served under the stated limits, RuntimeError on numerical
    failure.
    """
    params = params or DispatchParams()
    prog = build_dispatch_program(network, fleet, profile, params)
    sol = solve_conic(prog, tolerances=tolerances, backend=backend)
    if sol.status == "infeasible":
        raise DispatchInfeasible(
            "dispatch infeasible: demand not deliverable under the stated "
            "limits", certificate=sol.certificate)
    if sol.status != "optimal":
        raise RuntimeError(
            f"dispatch solve failed: status {sol.status}, "
            f"residuals {sol.residuals}")

    profile = _slice_profile(profile, params.horizon)
    nodes = list(network.nodes)
    n_n, n_t = len(nodes), profile.n_intervals
    gens = fleet.generators
    stos = fleet.storage

    def grab(name, rows):
        if rows == 0:
            return np.zeros((0, n_t))
        return sol.value(name).reshape(rows, n_t)

    d_curt = np.zeros((n_n, n_t))
    curt_nodes = [i for i in range(n_n)
                  if profile.curtail_max[i].any() or profile.curtail_min[i].any()]
    if curt_nodes:
        d_curt[curt_nodes] = sol.value("dcurt").reshape(len(curt_nodes), n_t)

    return DispatchSchedule(
        intervals=profile.intervals, dt_minutes=profile.dt_minutes,
        gen_ids=tuple(g.id for g in gens), node_ids=tuple(nodes),
        line_ids=tuple(l.id for l in network.lines),
        sto_ids=tuple(s.id for s in stos),
        g_p=grab("gp", len(gens)), g_q=grab("gq", len(gens)),
        r=grab("res", len(gens)), d_curt=d_curt,
        p_ch=grab("pch", len(stos)), p_dis=grab("pdis", len(stos)),
        e=grab("soc", len(stos)),
        f_p=sol.value("fp").reshape(-1, n_t),
        f_q=sol.value("fq").reshape(-1, n_t),
        a=sol.value("a").reshape(-1, n_t),
        u=sol.value("u").reshape(n_n, n_t),
        objective=sol.objective, status=sol.status, iterations=sol.iterations,
        residuals=sol.residuals,
        reserve_required=np.maximum(
            params.reserve_fraction * profile.p.sum(axis=0),
            params.reserve_floor),
    )


@dataclass(frozen=True)
class ExactnessReport:
    max_gap: float
    mean_gap: float
    inexact: tuple      # (line id, interval) pairs with gap above EXACTNESS_TOL
    gaps: np.ndarray = field(repr=False)


def check_relaxation_exactness(schedule, network):
    """Per-line, per-interval relaxation gap a*u_send - (fp^2 + fq^2).

    Zero gap means the conic relaxation recovered an AC-consistent point.
    """
    nidx = {node: i for i, node in enumerate(schedule.node_ids)}
    send = np.array([nidx[l.from_node] for l in network.lines])
    gaps = (schedule.a * schedule.u[send]
            - schedule.f_p ** 2 - schedule.f_q ** 2)
    bad = np.argwhere(gaps > EXACTNESS_TOL)
    inexact = tuple((schedule.line_ids[j], schedule.intervals[t])
                    for j, t in bad)
    return ExactnessReport(
        max_gap=float(gaps.max(initial=0.0)),
        mean_gap=float(gaps.mean()) if gaps.size else 0.0,
        inexact=inexact, gaps=gaps)


# ---------------------------------------------------------------------------
# export

_KINDS = ("generator", "node", "line", "storage")


def write_schedule_csv(path, schedule):
    """Long-format export: one row per (entity, interval).

    Columns not applicable to an entity kind are left empty.
    """
    def fmt(x):
        return repr(float(x))

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "id", "interval", "g_p", "g_q", "r", "d_curt",
                    "p_ch", "p_dis", "e", "f_p", "f_q", "a", "u"])
        for gi, gid in enumerate(schedule.gen_ids):
            for t, it in enumerate(schedule.intervals):
                w.writerow(["generator", gid, it,
                            fmt(schedule.g_p[gi, t]), fmt(schedule.g_q[gi, t]),
                            fmt(schedule.r[gi, t])] + [""] * 8)
        for ni, node in enumerate(schedule.node_ids):
            for t, it in enumerate(schedule.intervals):
                w.writerow(["node", node, it, "", "", "",
                            fmt(schedule.d_curt[ni, t])] + [""] * 6
                           + [fmt(schedule.u[ni, t])])
        for li, lid in enumerate(schedule.line_ids):
            for t, it in enumerate(schedule.intervals):
                w.writerow(["line", lid, it] + [""] * 7
                           + [fmt(schedule.f_p[li, t]), fmt(schedule.f_q[li, t]),
                              fmt(schedule.a[li, t]), ""])
        for ki, sid in enumerate(schedule.sto_ids):
            for t, it in enumerate(schedule.intervals):
                w.writerow(["storage", sid, it, "", "", "", "",
                            fmt(schedule.p_ch[ki, t]), fmt(schedule.p_dis[ki, t]),
                            fmt(schedule.e[ki, t]), "", "", "", ""])
