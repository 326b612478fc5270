"""AC power flow at fixed injections on the radial feeder.

Produces the voltage telemetry consumed by the detector.  The primary
method is a backward/forward sweep (power summation form), which on a
radial network converges in a handful of passes; a damped Newton-Raphson
in rectangular coordinates backs it up on stressed cases.  Node shunts
are voltage dependent: a node with conductance G and susceptance B draws
G*u - jB*u at squared voltage magnitude u.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import PowerFlowError, ValidationError
from .network import validate_radial

MISMATCH_LIMIT = 1e-8    # acceptance bound on the bus power residual
COLLAPSE_V = 0.5         # below this magnitude the case is declared collapsed


@dataclass(frozen=True)
class InjectionFrame:
    """Net nodal complex injections for one interval.

    Positive means power flows into the grid.  The slack entry is kept
    for reference only; the solve treats the slack injection as the
    residual that balances the system.
    """

    nodes: tuple
    p: np.ndarray
    q: np.ndarray
    slack: str

    def node_index(self, node):
        return self.nodes.index(node)


@dataclass
class NodeState:
    nodes: tuple
    v: np.ndarray          # voltage magnitudes, p.u.
    theta: np.ndarray      # angles, radians; slack pinned at 0
    mismatch: float        # final infinity-norm bus power residual
    iterations: int
    method: str            # "sweep" or "newton"


def injections_from_schedule(network, fleet, profile, schedule):
    """Per-interval injection frames implied by a dispatch schedule.

    Generation, storage discharge and curtailment inject; demand and
    charging withdraw.  Curtailment sheds reactive load through the nodal
    gamma ratio.  Shunts are left out: the solver applies them as
    voltage-dependent terms.
    """
    nodes = tuple(network.nodes)
    nidx = {n: i for i, n in enumerate(nodes)}
    n_t = schedule.n_t
    p = np.zeros((len(nodes), n_t))
    q = np.zeros((len(nodes), n_t))
    for i, node in enumerate(nodes):
        pi = profile.node_index(node)
        p[i] -= profile.p[pi] - schedule.d_curt[pi]
        q[i] -= profile.q[pi] - network.gamma[node] * schedule.d_curt[pi]
    for gi, g in enumerate(fleet.generators):
        p[nidx[g.node]] += schedule.g_p[gi]
        q[nidx[g.node]] += schedule.g_q[gi]
    for ki, s in enumerate(fleet.storage):
        p[nidx[s.node]] += schedule.p_dis[ki] - schedule.p_ch[ki]
    return [InjectionFrame(nodes=nodes, p=p[:, t].copy(), q=q[:, t].copy(),
                           slack=network.root)
            for t in range(n_t)]


def _admittance(network, nidx):
    n = len(network.nodes)
    Y = np.zeros((n, n), dtype=complex)
    for line in network.lines:
        y = 1.0 / complex(line.r, line.x)
        o, r = nidx[line.from_node], nidx[line.to_node]
        Y[o, o] += y
        Y[r, r] += y
        Y[o, r] -= y
        Y[r, o] -= y
    for node, i in nidx.items():
        Y[i, i] += complex(network.shunt_g[node], network.shunt_b[node])
    return Y


def _mismatch(Y, V, s_spec, slack_i):
    s_calc = V * np.conj(Y @ V)
    res = s_calc - s_spec
    res[slack_i] = 0.0
    return res, float(np.abs(res).max())


def _sweep(network, report, s_spec, slack_i, v0, nidx, Y, max_sweeps):
    n = len(network.nodes)
    V = np.full(n, complex(v0), dtype=complex)
    gsh = np.array([network.shunt_g[m] for m in network.nodes])
    bsh = np.array([network.shunt_b[m] for m in network.nodes])
    z = {}
    for line in network.lines:
        z[line.id] = complex(line.r, line.x)
    down = [m for m in reversed(report.order) if m != network.root]

    for it in range(1, max_sweeps + 1):
        u = np.abs(V) ** 2
        # local draw seen by the feeder: shunt plus negated injection
        s_need = u * (gsh - 1j * bsh) - s_spec
        s_send = {}
        for node in down:
            acc = s_need[nidx[node]]
            for lid, child in report.children.get(node, ()):
                acc += s_send[lid]
            lid = report.parent_line[node]
            i = nidx[node]
            cur2 = abs(acc) ** 2 / max(np.abs(V[i]) ** 2, 1e-12)
            s_send[lid] = acc + cur2 * z[lid]
        for node in report.order:
            if node == network.root:
                continue
            lid = report.parent_line[node]
            par = nidx[report.parent_node[node]]
            I = np.conj(s_send[lid] / V[par])
            V[nidx[node]] = V[par] - z[lid] * I
        _, miss = _mismatch(Y, V, s_spec, slack_i)
        if miss <= MISMATCH_LIMIT * 1e-2:
            return V, miss, it
    return V, miss, max_sweeps


def _newton(Y, s_spec, slack_i, V, max_iter=60):
    """Damped Newton-Raphson on rectangular coordinates."""
    n = V.size
    free = np.array([i for i in range(n) if i != slack_i])

    def residual(V):
        r = V * np.conj(Y @ V) - s_spec
        return np.concatenate([r.real[free], r.imag[free]])

    F = residual(V)
    for it in range(1, max_iter + 1):
        norm = np.abs(F).max()
        if norm <= MISMATCH_LIMIT * 1e-2:
            return V, norm, it
        I = Y @ V
        # dS = dV o conj(I) + V o conj(Y dV), assembled column-wise for
        # real and imaginary perturbations of the free buses
        dSe = np.diag(np.conj(I)) + V[:, None] * np.conj(Y)
        dSf = 1j * np.diag(np.conj(I)) - 1j * V[:, None] * np.conj(Y)
        dSe = dSe[np.ix_(free, free)]
        dSf = dSf[np.ix_(free, free)]
        J = np.block([[dSe.real, dSf.real], [dSe.imag, dSf.imag]])
        try:
            step = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            break
        alpha = 1.0
        for _ in range(30):
            Vt = V.copy()
            Vt[free] += alpha * (step[: free.size]
                                 + 1j * step[free.size:])
            Ft = residual(Vt)
            if np.abs(Ft).max() < norm:
                V, F = Vt, Ft
                break
            alpha *= 0.5
        else:
            break
    return V, float(np.abs(residual(V)).max()), max_iter


def run_powerflow(network, frame, slack_voltage=1.0, max_sweeps=80):
    """Solve the bus power equations for one injection frame.

    Returns a NodeState whose residual satisfies the mismatch bound;
    raises PowerFlowError on non-convergence or voltage collapse.
    """
    if tuple(frame.nodes) != tuple(network.nodes):
        raise ValidationError("frame nodes do not match the network")
    if not (np.all(np.isfinite(frame.p)) and np.all(np.isfinite(frame.q))):
        raise ValidationError("injections must be finite")
    report = validate_radial(network)
    nodes = tuple(network.nodes)
    nidx = {m: i for i, m in enumerate(nodes)}
    slack_i = nidx[frame.slack]
    Y = _admittance(network, nidx)
    s_spec = frame.p + 1j * frame.q

    V, miss, sweeps = _sweep(network, report, s_spec, slack_i,
                             slack_voltage, nidx, Y, max_sweeps)
    method = "sweep"
    its = sweeps
    if miss > MISMATCH_LIMIT:
        V, miss, its = _newton(Y, s_spec, slack_i, V)
        method = "newton"
    if miss > MISMATCH_LIMIT:
        raise PowerFlowError(
            f"power flow did not converge: residual {miss:.3e} "
            f"exceeds {MISMATCH_LIMIT:.0e}")
    v = np.abs(V)
    if v.min() < COLLAPSE_V:
        worst = nodes[int(v.argmin())]
        raise PowerFlowError(
            f"voltage collapse at node {worst}: {v.min():.3f} p.u.")
    theta = np.angle(V) - np.angle(V[slack_i])
    return NodeState(nodes=nodes, v=v, theta=theta, mismatch=miss,
                     iterations=its, method=method)


def run_powerflow_series(network, frames, slack_voltage=1.0, jobs=None):
    """Independent per-interval solves; `jobs` > 1 fans out to processes."""
    if jobs and jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        from functools import partial
        fn = partial(run_powerflow, network, slack_voltage=slack_voltage)
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, frames))
    return [run_powerflow(network, f, slack_voltage=slack_voltage)
            for f in frames]


def emit_telemetry(states, sensor_nodes, path=None):
    """Restrict states to the sensor set, node-major and interval-minor.

    Returns (v, theta) arrays of shape (n_sensors, n_intervals); when
    `path` is given, also writes the telemetry CSV.
    """
    if not states:
        raise ValidationError("no states to emit")
    nodes = states[0].nodes
    for s in sensor_nodes:
        if s not in nodes:
            raise ValidationError(f"sensor node {s} absent from network")
    idx = [nodes.index(s) for s in sensor_nodes]
    v = np.stack([st.v[idx] for st in states], axis=1)
    theta = np.stack([st.theta[idx] for st in states], axis=1)
    if path is not None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["interval", "node", "v", "theta"])
            for si, node in enumerate(sensor_nodes):
                for t in range(v.shape[1]):
                    w.writerow([t, node, repr(float(v[si, t])),
                                repr(float(theta[si, t]))])
    return v, theta
