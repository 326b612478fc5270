"""Network model: parsing, radiality validation, uncertainty sampling."""

from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from derguard.errors import FormatError, RadialityError, ValidationError
from derguard.network import (
    DemandProfile,
    fixture_path,
    load_network,
    sample_uncertainty,
    save_network,
    validate_radial,
)

# ---------------------------------------------------------------------------
# helpers


def write_case(tmp_path, node_rows, line_rows, root="1", profile_p=None):
    """Minimal network file: nodes/lines given as raw table rows."""
    nodes = [r.split()[0] for r in node_rows]
    text = [
        "[system]", "name = case", "base_mva = 10.0", "dt_minutes = 10.0",
        f"root = {root}", "",
        "[nodes]", "id u_min u_max g_sh b_sh gamma sensor c_curt",
        *node_rows, "",
        "[lines]", "id from to r x limit", *line_rows, "",
        "[profiles]", "demand_p = p.csv", "demand_q = q.csv",
    ]
    (tmp_path / "case.net").write_text("\n".join(text) + "\n")
    header = "interval," + ",".join(nodes)
    if profile_p is None:
        profile_p = [header, "0," + ",".join("0.0" for _ in nodes)]
    (tmp_path / "p.csv").write_text("\n".join(profile_p) + "\n")
    (tmp_path / "q.csv").write_text(header + "\n0," +
                                    ",".join("0.0" for _ in nodes) + "\n")
    return tmp_path / "case.net"


def node_row(nid, u_min=0.9, u_max=1.1, gamma=0.3, c_curt=0.0):
    return f"{nid} {u_min} {u_max} 0.0 0.0 {gamma} 0 {c_curt}"


def bfs_oracle(network):
    """Independent breadth-first traversal over an undirected line list."""
    adj = {n: [] for n in network.nodes}
    for line in network.lines:
        adj[line.from_node].append(line.to_node)
        adj[line.to_node].append(line.from_node)
    seen = {network.root: 0}
    order = [network.root]
    queue = deque([network.root])
    while queue:
        node = queue.popleft()
        for other in adj[node]:
            if other not in seen:
                seen[other] = seen[node] + 1
                order.append(other)
                queue.append(other)
    return order, seen


def tiny_profile(p, q=None, cmax=None):
    p = np.atleast_2d(np.asarray(p, dtype=float))
    q = p * 0.3 if q is None else np.atleast_2d(np.asarray(q, dtype=float))
    cmax = np.zeros_like(p) if cmax is None else np.atleast_2d(cmax)
    return DemandProfile(
        intervals=tuple(range(p.shape[1])), dt_minutes=10.0,
        nodes=tuple(str(i + 1) for i in range(p.shape[0])),
        p=p, q=q, curtail_min=np.zeros_like(p), curtail_max=cmax,
        cost_curtail=np.zeros(p.shape[0]),
    )


# ---------------------------------------------------------------------------
# fixture ingestion


def test_fixture_loads_and_counts():
    network, fleet, profile = load_network(fixture_path())
    assert len(network.nodes) == 15
    assert len(network.lines) == 14 == len(network.nodes) - 1
    assert network.root == "1"
    assert set(network.sensor_nodes) <= set(network.nodes)
    assert len(fleet.generators) == 3
    assert len(fleet.storage) == 2
    assert profile.n_intervals == 144
    assert profile.p.shape == (15, 144)
    # curtailment invariant holds everywhere
    assert (profile.curtail_min >= 0).all()
    assert (profile.curtail_max >= profile.curtail_min).all()
    assert (profile.curtail_max <= np.maximum(profile.p, 0) + 1e-9).all()


def test_fixture_depth_order_matches_bfs_oracle():
    network, _, _ = load_network(fixture_path())
    report = validate_radial(network)
    order, depth = bfs_oracle(network)
    assert list(report.order) == order
    assert report.depth == depth
    for node in network.nodes:
        if node == network.root:
            assert node not in report.parent_node
        else:
            # parent is the BFS predecessor: one hop shallower and adjacent
            parent = report.parent_node[node]
            assert depth[parent] == depth[node] - 1
            line = next(l for l in network.lines if l.id == report.parent_line[node])
            assert (line.from_node, line.to_node) == (parent, node)


def test_cloudy_variant_differs_only_in_solar():
    _, _, sunny = load_network(fixture_path())
    _, _, cloudy = load_network(fixture_path("feeder15_cloudy.net"))
    assert np.array_equal(sunny.q, cloudy.q)
    assert not np.array_equal(sunny.p, cloudy.p)
    # cloud transients raise net load only around midday
    night = slice(0, 6 * 6)
    assert np.allclose(sunny.p[:, night], cloudy.p[:, night])
    assert cloudy.p.sum() > sunny.p.sum()


# ---------------------------------------------------------------------------
# validation errors


def test_cycle_rejected(tmp_path):
    path = write_case(
        tmp_path,
        [node_row(i) for i in ("1", "2", "3")],
        ["L1 1 2 0.01 0.01 1.0", "L2 2 3 0.01 0.01 1.0",
         "L3 3 1 0.01 0.01 1.0"],  # closes the loop
    )
    with pytest.raises(RadialityError, match="not radial"):
        load_network(path)


def test_disconnected_rejected(tmp_path):
    path = write_case(
        tmp_path,
        [node_row(i) for i in ("1", "2", "3", "4")],
        ["L1 1 2 0.01 0.01 1.0", "L2 3 4 0.01 0.01 1.0",
         "L3 4 3 0.01 0.01 1.0"],
    )
    with pytest.raises(RadialityError, match="disconnected|not radial"):
        load_network(path)


def test_line_oriented_against_tree_rejected(tmp_path):
    path = write_case(
        tmp_path,
        [node_row(i) for i in ("1", "2", "3")],
        ["L1 1 2 0.01 0.01 1.0", "L2 3 2 0.01 0.01 1.0"],  # upstream end is 2
    )
    with pytest.raises(RadialityError, match="oriented"):
        load_network(path)


def test_zero_voltage_lower_bound_rejected(tmp_path):
    path = write_case(
        tmp_path,
        [node_row("1", u_min=0.0), node_row("2")],
        ["L1 1 2 0.01 0.01 1.0"],
    )
    with pytest.raises(ValidationError, match="u_min"):
        load_network(path)


def test_curtailment_above_demand_rejected(tmp_path):
    rows = ["interval,1,2", "0,0.0,0.5"]
    path = write_case(
        tmp_path,
        [node_row("1"), node_row("2")],
        ["L1 1 2 0.01 0.01 1.0"],
        profile_p=rows,
    )
    (tmp_path / "cmax.csv").write_text("interval,2\n0,0.6\n")
    text = path.read_text() + "curtail_max = cmax.csv\n"
    path.write_text(text)
    with pytest.raises(ValidationError, match="curtail_max"):
        load_network(path)


def test_malformed_table_rejected(tmp_path):
    path = write_case(
        tmp_path,
        [node_row("1"), "2 0.9"],   # short row
        ["L1 1 2 0.01 0.01 1.0"],
    )
    with pytest.raises(FormatError, match="row has"):
        load_network(path)


def test_bad_profile_column_rejected(tmp_path):
    rows = ["interval,1,99", "0,0.0,0.0"]
    path = write_case(
        tmp_path,
        [node_row("1"), node_row("2")],
        ["L1 1 2 0.01 0.01 1.0"],
        profile_p=rows,
    )
    with pytest.raises(FormatError, match="unknown node id"):
        load_network(path)


# ---------------------------------------------------------------------------
# topology report on hand-built cases


def test_two_node_report():
    network, _, _ = load_network_from_rows(
        [node_row("1"), node_row("2")], ["L1 1 2 0.01 0.01 1.0"])
    report = validate_radial(network)
    assert report.order == ("1", "2")
    assert report.parent_line == {"2": "L1"}
    assert report.children["1"] == (("L1", "2"),)


def test_star_report():
    network, _, _ = load_network_from_rows(
        [node_row(i) for i in ("1", "2", "3", "4")],
        ["L1 1 2 0.01 0.01 1.0", "L2 1 3 0.01 0.01 1.0",
         "L3 1 4 0.01 0.01 1.0"],
    )
    report = validate_radial(network)
    assert report.order == ("1", "2", "3", "4")
    assert report.parent_line == {"2": "L1", "3": "L2", "4": "L3"}
    assert all(report.depth[n] == 1 for n in ("2", "3", "4"))


def load_network_from_rows(node_rows, line_rows, tmp_path=None):
    import tempfile
    from pathlib import Path
    with tempfile.TemporaryDirectory() as td:
        path = write_case(Path(td), node_rows, line_rows)
        return load_network(path)


# ---------------------------------------------------------------------------
# uncertainty sampling


def test_zero_std_is_identity():
    _, _, profile = load_network(fixture_path())
    out = sample_uncertainty(profile, 0.0, seed=1)
    assert out == profile
    assert out is not profile


def test_same_seed_same_sample():
    _, _, profile = load_network(fixture_path())
    a = sample_uncertainty(profile, 0.02, seed=42)
    b = sample_uncertainty(profile, 0.02, seed=42)
    c = sample_uncertainty(profile, 0.02, seed=43)
    assert a == b
    assert a != c


def test_empirical_std_matches_request():
    profile = tiny_profile([[3.0]])
    draws = np.array([
        sample_uncertainty(profile, 0.02, seed=s).p[0, 0] for s in range(10_000)
    ])
    rel_std = draws.std() / 3.0
    assert abs(rel_std - 0.02) < 0.05 * 0.02
    assert abs(draws.mean() / 3.0 - 1.0) < 1e-3


def test_sampling_preserves_invariants():
    _, _, profile = load_network(fixture_path())
    out = sample_uncertainty(profile, 0.3, seed=7)  # large std exercises floor
    assert out.p.shape == profile.p.shape
    assert (out.p >= 0).all()
    assert (out.curtail_min >= 0).all()
    assert (out.curtail_max >= out.curtail_min - 1e-12).all()
    assert (out.curtail_max <= np.maximum(out.p, 0) + 1e-9).all()
    # constant power factor: q scales by the same factor as p
    mask = profile.p > 0
    np.testing.assert_allclose(
        out.q[mask] / profile.q[mask], out.p[mask] / profile.p[mask], rtol=1e-12)


# ---------------------------------------------------------------------------
# round trip


def test_save_load_roundtrip(tmp_path):
    network, fleet, profile = load_network(fixture_path())
    out = tmp_path / "copy.net"
    save_network(out, network, fleet, profile)
    network2, fleet2, profile2 = load_network(out)
    assert network2 == network
    assert fleet2 == fleet
    assert profile2 == profile


def test_roundtrip_after_sampling(tmp_path):
    network, fleet, profile = load_network(fixture_path())
    sampled = sample_uncertainty(profile, 0.02, seed=3)
    out = tmp_path / "sampled.net"
    save_network(out, network, fleet, sampled)
    _, _, back = load_network(out)
    assert back == sampled


# ---------------------------------------------------------------------------
# properties


@st.composite
def random_tree(draw):
    n = draw(st.integers(min_value=2, max_value=30))
    parents = [draw(st.integers(min_value=0, max_value=i - 1))
               for i in range(1, n)]
    return n, parents


@given(random_tree())
@settings(max_examples=40, deadline=None)
def test_random_trees_accepted_and_extra_edge_rejected(tree):
    n, parents = tree
    node_rows = [node_row(str(i + 1)) for i in range(n)]
    line_rows = [
        f"L{i} {p + 1} {i + 1} 0.01 0.01 1.0"
        for i, p in enumerate(parents, start=1)
    ]
    network, _, _ = load_network_from_rows(node_rows, line_rows)
    report = validate_radial(network)
    assert len(report.order) == n
    assert set(report.parent_line) == {str(i + 2) for i in range(n - 1)}
    # each node appears after its parent in the order
    position = {node: k for k, node in enumerate(report.order)}
    for child, parent in report.parent_node.items():
        assert position[parent] < position[child]

    # adding any chord breaks radiality
    extra = f"LX {1} {n} 0.01 0.01 1.0"
    if n >= 3:
        with pytest.raises(RadialityError, match="not radial"):
            load_network_from_rows(node_rows, line_rows + [extra])


@given(st.integers(min_value=0, max_value=2 ** 31 - 1),
       st.floats(min_value=0.0, max_value=0.5))
@settings(max_examples=30, deadline=None)
def test_sampling_nonnegative_and_shape_stable(seed, std):
    profile = tiny_profile(np.array([[1.0, 0.5, 0.0], [2.0, 0.0, 0.1]]))
    out = sample_uncertainty(profile, std, seed)
    assert out.p.shape == profile.p.shape
    assert (out.p >= 0).all()
    assert out.intervals == profile.intervals
