"""Power-flow tests.

The 2-bus case has an exact closed form (quadratic in the squared
receiving voltage); every returned state is also re-substituted into an
independently built bus admittance residual, so the solver's own
mismatch bookkeeping is never trusted on its own.
"""

import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from derguard.dispatch import solve_dispatch
from derguard.errors import PowerFlowError, ValidationError
from derguard.network import fixture_path, load_network
from derguard.powerflow import (
    InjectionFrame,
    MISMATCH_LIMIT,
    emit_telemetry,
    injections_from_schedule,
    run_powerflow,
    run_powerflow_series,
)
from gridcases import chain_net, two_bus_closed_form, two_node_net


def frame_for(net, p_by_node, q_by_node=None, slack=None):
    q_by_node = q_by_node or {}
    p = np.array([p_by_node.get(n, 0.0) for n in net.nodes])
    q = np.array([q_by_node.get(n, 0.0) for n in net.nodes])
    return InjectionFrame(nodes=tuple(net.nodes), p=p, q=q,
                          slack=slack or net.root)


def ybus_residual(net, state, frame):
    """Independent mismatch: rebuilt admittance matrix, non-slack rows."""
    nidx = {n: i for i, n in enumerate(net.nodes)}
    n = len(net.nodes)
    Y = np.zeros((n, n), complex)
    for line in net.lines:
        y = 1.0 / complex(line.r, line.x)
        o, r = nidx[line.from_node], nidx[line.to_node]
        Y[o, o] += y; Y[r, r] += y; Y[o, r] -= y; Y[r, o] -= y
    for node, i in nidx.items():
        Y[i, i] += complex(net.shunt_g[node], net.shunt_b[node])
    V = state.v * np.exp(1j * state.theta)
    res = V * np.conj(Y @ V) - (frame.p + 1j * frame.q)
    res[nidx[frame.slack]] = 0.0
    return float(np.abs(res).max())


@pytest.fixture(scope="module")
def feeder():
    return load_network(fixture_path())


# ---------------------------------------------------------------------------
# oracle cases


def test_two_bus_matches_closed_form():
    net = two_node_net()
    fr = frame_for(net, {"1": -0.8}, {"1": -0.3})
    st_ = run_powerflow(net, fr)
    v2, th2 = two_bus_closed_form(0.8, 0.3, 0.02, 0.04)
    assert st_.v[1] == pytest.approx(v2, abs=1e-10)
    assert st_.theta[1] == pytest.approx(th2, abs=1e-10)
    assert st_.v[0] == 1.0 and st_.theta[0] == 0.0
    assert st_.mismatch <= MISMATCH_LIMIT
    assert ybus_residual(net, st_, fr) <= MISMATCH_LIMIT


def test_two_bus_heavy_load_still_exact():
    # near the loadability nose the quadratic still has a real root
    net = two_node_net()
    fr = frame_for(net, {"1": -7.0})
    st_ = run_powerflow(net, fr)
    v2, th2 = two_bus_closed_form(7.0, 0.0, 0.02, 0.04)
    assert st_.v[1] == pytest.approx(v2, abs=1e-9)
    assert st_.theta[1] == pytest.approx(th2, abs=1e-9)


def test_zero_injection_flat_profile():
    # shunt-free feeder: nothing draws current, so the profile is flat
    net = chain_net(6)
    fr = frame_for(net, {})
    st_ = run_powerflow(net, fr, slack_voltage=1.02)
    assert np.allclose(st_.v, 1.02, atol=1e-12)
    assert np.allclose(st_.theta, 0.0, atol=1e-12)


def test_zero_injection_fixture_shunts_act(feeder):
    # the bundled feeder carries capacitor banks; with no injections they
    # still lift voltage above the slack along their laterals
    net, _, _ = feeder
    st_ = run_powerflow(net, frame_for(net, {}))
    assert st_.v.max() > 1.0 + 1e-5
    assert ybus_residual(net, st_, frame_for(net, {})) <= MISMATCH_LIMIT


def test_generation_raises_local_voltage():
    net = two_node_net()
    st_ = run_powerflow(net, frame_for(net, {"1": 0.5}))
    assert st_.v[1] > 1.0


def test_shunts_enter_the_balance():
    net = two_node_net(gsh1=0.05, bsh1=0.08)
    fr = frame_for(net, {"1": -0.4}, {"1": -0.1})
    st_ = run_powerflow(net, fr)
    assert ybus_residual(net, st_, fr) <= MISMATCH_LIMIT
    # capacitive shunt props the voltage up relative to the bare case
    bare = run_powerflow(two_node_net(gsh1=0.05),
                         frame_for(net, {"1": -0.4}, {"1": -0.1}))
    assert st_.v[1] > bare.v[1]


# ---------------------------------------------------------------------------
# failure modes and the Newton fallback


def test_newton_fallback_reaches_tolerance():
    net = two_node_net()
    fr = frame_for(net, {"1": -0.8}, {"1": -0.3})
    st_ = run_powerflow(net, fr, max_sweeps=1)
    assert st_.method == "newton"
    assert st_.mismatch <= MISMATCH_LIMIT
    v2, _ = two_bus_closed_form(0.8, 0.3, 0.02, 0.04)
    assert st_.v[1] == pytest.approx(v2, abs=1e-9)


def test_infeasible_load_reports_nonconvergence():
    net = two_node_net()
    with pytest.raises(PowerFlowError, match="did not converge"):
        run_powerflow(net, frame_for(net, {"1": -9.0}))


def test_voltage_collapse_flagged():
    # a converged state anywhere below 0.5 p.u. is refused; the easiest
    # deterministic trigger is a depressed slack reference
    net = chain_net(3)
    with pytest.raises(PowerFlowError, match="collapse"):
        run_powerflow(net, frame_for(net, {"2": -0.01}), slack_voltage=0.48)


def test_frame_validation():
    net = two_node_net()
    with pytest.raises(ValidationError):
        run_powerflow(net, InjectionFrame(("0",), np.zeros(1), np.zeros(1),
                                          "0"))
    bad = frame_for(net, {"1": np.nan})
    with pytest.raises(ValidationError):
        run_powerflow(net, bad)


# ---------------------------------------------------------------------------
# properties


def test_determinism(feeder):
    net, _, _ = feeder
    rng = np.random.default_rng(7)
    load = {n: -0.05 * rng.random() for n in net.nodes if n != net.root}
    fr = frame_for(net, load)
    a = run_powerflow(net, fr)
    b = run_powerflow(net, fr)
    assert np.array_equal(a.v, b.v) and np.array_equal(a.theta, b.theta)


@given(st.lists(st.floats(min_value=0.0, max_value=0.25),
                min_size=4, max_size=4),
       st.floats(min_value=0.0, max_value=0.4))
@settings(max_examples=25, deadline=None)
def test_pure_load_sags_below_slack(loads, qf):
    net = chain_net(5, r=0.02, x=0.03)
    fr = frame_for(net, {str(i + 1): -loads[i] for i in range(4)},
                   {str(i + 1): -qf * loads[i] for i in range(4)})
    st_ = run_powerflow(net, fr)
    assert np.all(st_.v <= 1.0 + 1e-12)
    assert ybus_residual(net, st_, fr) <= MISMATCH_LIMIT


# ---------------------------------------------------------------------------
# dispatch cross-check and telemetry


@pytest.fixture(scope="module")
def day(feeder):
    net, fleet, prof = feeder
    sched = solve_dispatch(net, fleet, prof)
    frames = injections_from_schedule(net, fleet, prof, sched)
    states = run_powerflow_series(net, frames)
    return sched, frames, states


def test_schedule_injections_balance(feeder, day):
    net, fleet, prof = feeder
    sched, frames, _ = day
    rr = np.array([l.r for l in net.lines])
    for t in (0, 60, 114):
        losses = float(sched.a[:, t] @ rr)
        shunt = sum(net.shunt_g[n] * sched.u[i, t]
                    for i, n in enumerate(net.nodes))
        assert frames[t].p.sum() == pytest.approx(losses + shunt, abs=1e-6)


def test_voltages_match_dispatch_relaxation(feeder, day):
    _, _, _ = feeder
    sched, _, states = day
    v2 = np.stack([s.v ** 2 for s in states], axis=1)
    assert np.abs(v2 - sched.u).max() <= 2e-4


def test_series_parallel_agrees(feeder, day):
    net, fleet, prof = feeder
    _, frames, states = day
    par = run_powerflow_series(net, frames[:6], jobs=2)
    for a, b in zip(par, states[:6]):
        assert np.array_equal(a.v, b.v)
        assert np.array_equal(a.theta, b.theta)


def test_telemetry_dimensions_and_order(feeder, day):
    net, _, _ = feeder
    _, _, states = day
    v, th = emit_telemetry(states, net.sensor_nodes)
    assert v.shape == th.shape == (len(net.sensor_nodes), len(states))
    # full passthrough when every node carries a sensor
    v_all, _ = emit_telemetry(states[:4], tuple(net.nodes))
    assert v_all.shape == (15, 4)
    v_root, th_root = emit_telemetry(states[:4], (net.root,))
    assert v_root.size + th_root.size == 2 * 4
    with pytest.raises(ValidationError):
        emit_telemetry(states[:2], ("99",))


def test_telemetry_csv(tmp_path, feeder, day):
    net, _, _ = feeder
    _, _, states = day
    out = tmp_path / "telemetry.csv"
    v, th = emit_telemetry(states[:12], net.sensor_nodes, path=out)
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == v.size
    # node-major interval-minor ordering
    assert [r["node"] for r in rows[:13]] == [net.sensor_nodes[0]] * 12 \
        + [net.sensor_nodes[1]]
    assert float(rows[3]["v"]) == v[0, 3]
    assert float(rows[3]["theta"]) == th[0, 3]
