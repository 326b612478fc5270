"""Intraday falsification of DER dispatch signals.

The attacker predicts the day's dispatch, then solves a small QP for a
deviation profile on one DER type: large enough to eat the scheduled
system reserve (per-interval depth and an accumulated floor over the
window), small enough to stay within a fraction of the scheduled values
and inside the unit's physical range.  The absolute-value lower bounds
are handled by enumerating the aggregate sign, which is exact here: the
feasible set is the union of two convex pieces.

The falsified command goes out on the downlink while the uplink keeps
reporting the original schedule, so the EMS-side view stays clean.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .conic import ConicProgram, solve_conic
from .dispatch import DispatchParams, solve_dispatch
from .errors import AttackInfeasible, ValidationError

TARGETS = ("generation", "storage", "curtailment")
FEAS_TOL = 1e-6     # acceptance bound when re-checking an emitted plan
BIND_TOL = 1e-6     # slack below which a constraint is reported binding


@dataclass(frozen=True)
class AttackParams:
    target: str              # one of TARGETS
    units: tuple             # generator ids / storage ids / node ids
    window: tuple            # contiguous interval ids inside the horizon
    depth: float = 1.0       # per-interval reserve multiple, scalar or series
    size_cap: float = 0.5    # max |delta| as a fraction of the scheduled value
    rho: float = 0.0         # temporal smoothness penalty
    rho_geo: float = 0.0     # geographic coupling penalty
    adjacency: dict | None = None   # unit -> tuple of coupled units
    direction: object = "auto"      # +1, -1 or "auto"

    def __post_init__(self):
        if self.target not in TARGETS:
            raise ValidationError(f"unknown target type {self.target!r}")
        if not self.units:
            raise ValidationError("empty target unit set")
        if len(self.window) == 0:
            raise ValidationError("empty attack window")
        w = np.asarray(self.window)
        if w.size > 1 and not np.all(np.diff(w) == 1):
            raise ValidationError("attack window must be contiguous")
        if not 0.0 < self.size_cap <= 1.0:
            raise ValidationError("size cap must lie in (0, 1]")
        if np.any(np.asarray(self.depth) < 0):
            raise ValidationError("depth must be >= 0")
        if self.rho < 0 or self.rho_geo < 0:
            raise ValidationError("penalties must be >= 0")
        if self.direction not in (1, -1, "auto"):
            raise ValidationError("direction must be +1, -1 or 'auto'")


@dataclass
class AttackPlan:
    target: str
    unit_ids: tuple
    window: tuple
    delta: np.ndarray        # (n_units, len(window)), zero outside by def.
    direction: int
    objective: float
    threshold: np.ndarray    # per-interval deviation floor K_t * sum r_hat
    binding: dict            # constraint family -> where it is tight


@dataclass
class FalsifiedRun:
    schedule: object         # the EMS schedule x_hat (untouched)
    actual: object           # schedule the grid physically follows
    plan: AttackPlan
    downlink: dict           # unit -> commanded series over the horizon
    uplink: dict             # unit -> reported series (spoofed to x_hat)
    clipped: tuple           # (unit, interval) where saturation bit


def predict_dispatch(network, fleet, profile, params=None, tolerances=None):
    """Attacker-side dispatch prediction.

    Identical machinery to the EMS dispatch; a separate entry point so the
    attacker's inputs (e.g. a degraded demand forecast) can diverge from
    the EMS's without touching the operator path.
    """
    params = params or DispatchParams()
    return solve_dispatch(network, fleet, profile, params,
                          tolerances=tolerances)


def electrical_adjacency(network, fleet=None):
    """Unit adjacency induced by shared lines.

    Curtailment units are nodes; generator and storage units map through
    their connection node.  Two units are adjacent when their nodes are
    endpoints of one line.
    """
    neigh = {n: set() for n in network.nodes}
    for line in network.lines:
        neigh[line.from_node].add(line.to_node)
        neigh[line.to_node].add(line.from_node)
    site = {n: n for n in network.nodes}
    out = {n: tuple(sorted(neigh[n])) for n in network.nodes}
    if fleet is not None:
        units = [(g.id, g.node) for g in fleet.generators]
        units += [(s.id, s.node) for s in fleet.storage]
        by_node = {}
        for uid, node in units:
            by_node.setdefault(node, []).append(uid)
        for uid, node in units:
            coupled = []
            for other in neigh[node] | {node}:
                coupled += [v for v in by_node.get(other, []) if v != uid]
            out[uid] = tuple(sorted(coupled))
    return out


def _target_series(prediction, params, fleet=None, profile=None):
    """Scheduled values x_hat and physical bounds for the targeted units.

    Returns (x_hat, lo, hi) arrays shaped (n_units, len(window)).
    """
    w = [prediction.intervals.index(t) for t in params.window]
    if params.target == "generation":
        ids = prediction.gen_ids
        rows = [ids.index(u) for u in params.units]
        x = prediction.g_p[rows][:, w]
        if fleet is None:
            raise ValidationError("generation target needs the fleet")
        lims = [(fleet.generator(u).p_min, fleet.generator(u).p_max)
                for u in params.units]
        lo = np.array([[l] * len(w) for l, _ in lims])
        hi = np.array([[h] * len(w) for _, h in lims])
    elif params.target == "storage":
        ids = prediction.sto_ids
        rows = [ids.index(u) for u in params.units]
        # the downlink command is the net grid-side output
        x = (prediction.p_dis - prediction.p_ch)[rows][:, w]
        if fleet is None:
            raise ValidationError("storage target needs the fleet")
        lims = [fleet.storage_unit(u) for u in params.units]
        lo = np.array([[-s.p_max / s.eff_ch] * len(w) for s in lims])
        hi = np.array([[s.p_max * s.eff_dis] * len(w) for s in lims])
    else:
        ids = prediction.node_ids
        rows = [ids.index(u) for u in params.units]
        x = prediction.d_curt[rows][:, w]
        if profile is None:
            raise ValidationError("curtailment target needs the profile")
        prow = [profile.nodes.index(u) for u in params.units]
        wcol = [list(profile.intervals).index(t) for t in params.window]
        lo = profile.curtail_min[prow][:, wcol]
        hi = profile.curtail_max[prow][:, wcol]
    return x, lo, hi


def _window_thresholds(prediction, params):
    w = [prediction.intervals.index(t) for t in params.window]
    total_reserve = prediction.r.sum(axis=0)[w]
    depth = np.broadcast_to(np.asarray(params.depth, dtype=float),
                            (len(w),))
    return depth * total_reserve, total_reserve


def _headroom(x, lo, hi, cap, sign):
    """Largest aggregate deviation the caps allow, per interval."""
    if sign > 0:
        room = np.minimum(cap * np.abs(x), hi - x)
    else:
        room = np.minimum(cap * np.abs(x), x - lo)
    return np.clip(room, 0.0, None).sum(axis=0)


def build_falsification(prediction, params, fleet=None, profile=None,
                        sign=1):
    """Assemble the deviation QP for one aggregate sign."""
    for t in params.window:
        if t not in prediction.intervals:
            raise ValidationError(f"window interval {t} outside horizon")
    x, lo, hi = _target_series(prediction, params, fleet, profile)
    thr, total_reserve = _window_thresholds(prediction, params)
    n_k, n_w = x.shape

    room = _headroom(x, lo, hi, params.size_cap, sign)
    short = np.nonzero(room + FEAS_TOL < thr)[0]
    if short.size:
        t = params.window[short[0]]
        raise AttackInfeasible(
            f"depth unreachable at interval {t}: need {thr[short[0]]:.4g}, "
            f"caps allow {room[short[0]]:.4g}")
    if room.sum() + FEAS_TOL < total_reserve.sum():
        raise AttackInfeasible(
            "accumulated deviation floor exceeds what the caps allow over "
            "the window")

    prog = ConicProgram()
    d = prog.add_var("delta", n_k * n_w).reshape(n_k, n_w)

    for k in range(n_k):
        for t in range(n_w):
            prog.add_quad_cost(1.0, [d[k, t]], [1.0])
            if params.rho > 0:
                if t == 0:
                    # the pre-window deviation is pinned at zero
                    prog.add_quad_cost(params.rho, [d[k, 0]], [1.0])
                else:
                    prog.add_quad_cost(params.rho, [d[k, t], d[k, t - 1]],
                                       [1.0, -1.0])
    if params.rho_geo > 0:
        if params.adjacency is None:
            raise ValidationError(
                "rho_geo set but no adjacency given; derive one with "
                "electrical_adjacency()")
        uidx = {u: k for k, u in enumerate(params.units)}
        for u in params.units:
            for v in params.adjacency.get(u, ()):
                if v in uidx and uidx[u] < uidx[v]:
                    for t in range(n_w):
                        prog.add_quad_cost(
                            params.rho_geo,
                            [d[uidx[u], t], d[uidx[v], t]], [1.0, -1.0])

    for t in range(n_w):
        prog.add_le([d[k, t] for k in range(n_k)], [-float(sign)] * n_k,
                    -float(thr[t]))
    prog.add_le(list(d.ravel()), [-float(sign)] * (n_k * n_w),
                -float(total_reserve.sum()))

    cap = params.size_cap * np.abs(x)
    for k in range(n_k):
        for t in range(n_w):
            prog.add_bounds([d[k, t]], -cap[k, t], cap[k, t])
            prog.add_bounds([d[k, t]], lo[k, t] - x[k, t],
                            hi[k, t] - x[k, t])
    return prog


def _objective_value(delta, params):
    val = float((delta ** 2).sum())
    if params.rho > 0:
        padded = np.concatenate(
            [np.zeros((delta.shape[0], 1)), delta], axis=1)
        val += params.rho * float((np.diff(padded, axis=1) ** 2).sum())
    if params.rho_geo > 0:
        uidx = {u: k for k, u in enumerate(params.units)}
        for u in params.units:
            for v in (params.adjacency or {}).get(u, ()):
                if v in uidx and uidx[u] < uidx[v]:
                    val += params.rho_geo * float(
                        ((delta[uidx[u]] - delta[uidx[v]]) ** 2).sum())
    return val


def check_plan(plan, prediction, params, fleet=None, profile=None):
    """Re-evaluate the plan constraints from raw numbers.

    Independent of the solver path; returns the worst violation per
    constraint family (positive means violated by that much).
    """
    x, lo, hi = _target_series(prediction, params, fleet, profile)
    thr, total_reserve = _window_thresholds(prediction, params)
    s = plan.direction
    agg = plan.delta.sum(axis=0)
    return {
        "per_interval": float((thr - s * agg).max()),
        "accumulated": float(total_reserve.sum() - s * plan.delta.sum()),
        "size_cap": float(
            (np.abs(plan.delta) - params.size_cap * np.abs(x)).max()),
        "box": float(max((lo - (x + plan.delta)).max(),
                         ((x + plan.delta) - hi).max())),
    }


def solve_falsification(prediction, params, fleet=None, profile=None,
                        tolerances=None):
    """Solve the deviation QP, enumerating the sign when asked to.

    Returns the lower-objective feasible plan; raises AttackInfeasible
    when no sign admits one.
    """
    signs = (1, -1) if params.direction == "auto" else (params.direction,)
    best = None
    failures = []
    for s in signs:
        try:
            prog = build_falsification(prediction, params, fleet, profile,
                                       sign=s)
            sol = solve_conic(prog, tolerances=tolerances)
        except AttackInfeasible as exc:
            failures.append(f"s={s:+d}: {exc}")
            continue
        if sol.status != "optimal":
            failures.append(f"s={s:+d}: solver status {sol.status}")
            continue
        x, lo, hi = _target_series(prediction, params, fleet, profile)
        delta = sol.value("delta").reshape(x.shape)
        obj = _objective_value(delta, params)
        if best is None or obj < best[0]:
            best = (obj, s, delta)
    if best is None:
        raise AttackInfeasible(
            "attack impossible under caps: " + "; ".join(failures))

    obj, s, delta = best
    thr, total_reserve = _window_thresholds(prediction, params)
    agg = delta.sum(axis=0)
    x, lo, hi = _target_series(prediction, params, fleet, profile)
    cap = params.size_cap * np.abs(x)
    binding = {
        "per_interval": tuple(
            params.window[t] for t in range(len(params.window))
            if s * agg[t] - thr[t] <= BIND_TOL),
        "accumulated": bool(
            s * delta.sum() - total_reserve.sum() <= BIND_TOL),
        "size_cap": tuple(
            (params.units[k], params.window[t])
            for k, t in np.argwhere(cap - np.abs(delta) <= BIND_TOL)),
    }
    plan = AttackPlan(
        target=params.target, unit_ids=tuple(params.units),
        window=tuple(params.window), delta=delta, direction=s,
        objective=obj, threshold=thr, binding=binding)
    worst = check_plan(plan, prediction, params, fleet, profile)
    bad = {k: v for k, v in worst.items() if v > FEAS_TOL}
    if bad:
        raise RuntimeError(f"emitted plan failed the re-check: {bad}")
    return plan


# ---------------------------------------------------------------------------
# application to the EMS schedule


def _storage_follow(sched, fleet, rows, commanded):
    """Recompute charge/discharge splits and SoC under new net commands.

    Commands saturate when the state of charge would leave its range;
    returns (p_ch, p_dis, e, clip events) for the targeted rows.
    """
    p_ch = sched.p_ch.copy()
    p_dis = sched.p_dis.copy()
    e = sched.e.copy()
    clipped = []
    for row, kid in rows:
        s = fleet.storage_unit(kid)
        level = s.e0
        for t in range(sched.n_t):
            net = commanded[row][t]
            ch = max(-net, 0.0)
            dis = max(net, 0.0)
            # saturate against the energy window
            max_dis = max(level - s.e_min, 0.0) * s.eff_dis
            max_ch = max(s.e_max - level, 0.0) / s.eff_ch
            if dis > max_dis + 1e-12 or ch > max_ch + 1e-12:
                clipped.append((kid, sched.intervals[t]))
            dis = min(dis, max_dis)
            ch = min(ch, max_ch)
            level = level + s.eff_ch * ch - dis / s.eff_dis
            p_ch[row, t] = ch
            p_dis[row, t] = dis
            e[row, t] = level
    return p_ch, p_dis, e, clipped


def apply_attack(schedule, plan, fleet=None, profile=None):
    """Produce the falsified run: true downlink, spoofed uplink, physics.

    The uplink for every targeted unit keeps reporting the scheduled
    series, so the EMS view is indistinguishable from normal operation.
    """
    w = [schedule.intervals.index(t) for t in plan.window]
    actual = replace(schedule)
    downlink, uplink = {}, {}
    clipped = ()

    if plan.target == "generation":
        rows = [schedule.gen_ids.index(u) for u in plan.unit_ids]
        g_p = schedule.g_p.copy()
        for i, row in enumerate(rows):
            g_p[row, w] += plan.delta[i]
            downlink[plan.unit_ids[i]] = g_p[row].copy()
            uplink[plan.unit_ids[i]] = schedule.g_p[row].copy()
        actual = replace(schedule, g_p=g_p)
    elif plan.target == "storage":
        if fleet is None:
            raise ValidationError("storage application needs the fleet")
        rows = [schedule.sto_ids.index(u) for u in plan.unit_ids]
        net = schedule.p_dis - schedule.p_ch
        commanded = {}
        for i, row in enumerate(rows):
            series = net[row].copy()
            series[w] += plan.delta[i]
            commanded[row] = series
            downlink[plan.unit_ids[i]] = series.copy()
            uplink[plan.unit_ids[i]] = net[row].copy()
        p_ch, p_dis, e, clips = _storage_follow(
            schedule, fleet, list(zip(rows, plan.unit_ids)), commanded)
        actual = replace(schedule, p_ch=p_ch, p_dis=p_dis, e=e)
        clipped = tuple(clips)
    else:
        if profile is None:
            raise ValidationError("curtailment application needs the profile")
        rows = [schedule.node_ids.index(u) for u in plan.unit_ids]
        d = schedule.d_curt.copy()
        for i, row in enumerate(rows):
            d[row, w] += plan.delta[i]
            prow = profile.nodes.index(plan.unit_ids[i])
            wcol = [list(profile.intervals).index(t) for t in plan.window]
            lo = profile.curtail_min[prow, wcol]
            hi = profile.curtail_max[prow, wcol]
            over = (d[row, w] > hi + 1e-12) | (d[row, w] < lo - 1e-12)
            if over.any():
                clipped += tuple((plan.unit_ids[i], plan.window[j])
                                 for j in np.nonzero(over)[0])
                d[row, w] = np.clip(d[row, w], lo, hi)
            downlink[plan.unit_ids[i]] = d[row].copy()
            uplink[plan.unit_ids[i]] = schedule.d_curt[row].copy()
        actual = replace(schedule, d_curt=d)

    return FalsifiedRun(schedule=schedule, actual=actual, plan=plan,
                        downlink=downlink, uplink=uplink, clipped=clipped)


# ---------------------------------------------------------------------------
# plan files


def write_plan_csv(path, plan):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["unit", "interval", "delta"])
        for k, uid in enumerate(plan.unit_ids):
            for j, t in enumerate(plan.window):
                w.writerow([uid, t, repr(float(plan.delta[k, j]))])


def read_plan_csv(path, target, direction=1):
    """Rebuild the deliverable part of a plan (deltas over the window)."""
    series = {}
    with open(path) as fh:
        for row in csv.DictReader(fh):
            series.setdefault(row["unit"], []).append(
                (int(row["interval"]), float(row["delta"])))
    units = tuple(series)
    window = tuple(t for t, _ in sorted(series[units[0]]))
    delta = np.array([[v for _, v in sorted(series[u])] for u in units])
    return AttackPlan(target=target, unit_ids=units, window=window,
                      delta=delta, direction=direction,
                      objective=float((delta ** 2).sum()),
                      threshold=np.zeros(len(window)), binding={})
