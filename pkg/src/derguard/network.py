"""Grid data model: radial network, resource fleet, demand profiles.

File ingestion, topology validation, and forecast-uncertainty sampling.
Everything downstream (dispatch, power flow, attack synthesis, detection)
consumes the objects defined here.  All electrical quantities are per-unit
on the system MVA base declared in the network file; storage state of
charge is p.u. * interval (multiply by dt to get p.u. * minutes).
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import FormatError, RadialityError, ValidationError

_CURT_TOL = 1e-9  # slack for curtailment-bound checks against net demand


@dataclass(frozen=True)
class Line:
    """Directed branch; from_node is the end closer to the root."""

    id: str
    from_node: str
    to_node: str
    r: float          # series resistance, p.u.
    x: float          # series reactance, p.u.
    limit: float      # apparent-power rating, p.u.


@dataclass(frozen=True)
class Generator:
    id: str
    node: str
    cost_energy: float       # linear energy cost, money / (p.u. * interval)
    cost_quad: float         # optional quadratic coefficient, >= 0
    cost_reserve: float      # reserve provision cost
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    ramp_dn: float           # per-interval ramp limits, ramp_dn <= 0 <= ramp_up
    ramp_up: float
    flexible: bool           # True: unit is ramp-constrained and re-dispatchable


@dataclass(frozen=True)
class StorageUnit:
    id: str
    node: str
    eff_ch: float            # charge efficiency, in (0, 1]
    eff_dis: float           # discharge efficiency, in (0, 1]
    e_min: float             # energy bounds, p.u. * interval
    e_max: float
    p_min: float             # charge/discharge power bounds, 0 <= p_min <= p_max
    p_max: float
    e0: float                # initial state of charge


@dataclass(frozen=True)
class Network:
    """Radial grid: topology, electrical node data, sensor placement."""

    name: str
    base_mva: float
    nodes: tuple            # node ids in file order; unique
    root: str               # slack node
    lines: tuple            # of Line
    sensor_nodes: tuple     # subset of nodes carrying voltage telemetry
    shunt_g: dict           # node -> shunt conductance, p.u.
    shunt_b: dict           # node -> shunt susceptance, p.u.
    u_min: dict             # node -> lower bound on squared voltage magnitude
    u_max: dict
    gamma: dict             # node -> reactive-to-active ratio of curtailed load


@dataclass(frozen=True)
class Fleet:
    generators: tuple
    storage: tuple

    def generator(self, gid):
        for g in self.generators:
            if g.id == gid:
                return g
        raise KeyError(gid)

    def storage_unit(self, sid):
        for s in self.storage:
            if s.id == sid:
                return s
        raise KeyError(sid)

    @property
    def flexible_generators(self):
        return tuple(g for g in self.generators if g.flexible)


@dataclass(eq=False)
class DemandProfile:
    """Net nodal demand series (renewables folded in as negative component).

    Arrays are shaped (n_nodes, n_intervals) and row-aligned with `nodes`.
    """

    intervals: tuple        # ordered interval ids (ints)
    dt_minutes: float
    nodes: tuple            # node order for the array rows
    p: np.ndarray           # net active demand, p.u.
    q: np.ndarray           # reactive demand, p.u.
    curtail_min: np.ndarray
    curtail_max: np.ndarray
    cost_curtail: np.ndarray  # per-node curtailment cost, aligned with nodes

    @property
    def n_intervals(self):
        return len(self.intervals)

    def node_index(self, node):
        return self.nodes.index(node)

    def __eq__(self, other):
        if not isinstance(other, DemandProfile):
            return NotImplemented
        return (
            self.intervals == other.intervals
            and self.dt_minutes == other.dt_minutes
            and self.nodes == other.nodes
            and np.array_equal(self.p, other.p)
            and np.array_equal(self.q, other.q)
            and np.array_equal(self.curtail_min, other.curtail_min)
            and np.array_equal(self.curtail_max, other.curtail_max)
            and np.array_equal(self.cost_curtail, other.cost_curtail)
        )


@dataclass(frozen=True)
class TopologyReport:
    """Tree structure of a validated radial network."""

    order: tuple        # node ids, root first, each node after its parent
    depth: dict         # node -> hop count from root
    parent_node: dict   # non-root node -> upstream node
    parent_line: dict   # non-root node -> id of the unique inbound line
    children: dict      # node -> tuple of (line id, downstream node)


def fixture_path(name="feeder15.net"):
    """Path of a bundled feeder15 fixture file."""
    return Path(__file__).parent / "data" / "feeder15" / name


# ---------------------------------------------------------------------------
# file parsing

_SECTIONS = ("system", "nodes", "lines", "generators", "storage", "profiles")

_NODE_COLS = ("id", "u_min", "u_max", "g_sh", "b_sh", "gamma", "sensor", "c_curt")
_LINE_COLS = ("id", "from", "to", "r", "x", "limit")
_GEN_COLS = ("id", "node", "c_energy", "c_quad", "c_reserve", "p_min", "p_max",
             "q_min", "q_max", "ramp_dn", "ramp_up", "flexible")
_STO_COLS = ("id", "node", "eff_ch", "eff_dis", "e_min", "e_max",
             "p_min", "p_max", "e0")


def _split_sections(path):
    """Return {section: list of payload lines}; comments and blanks dropped."""
    sections = {}
    current = None
    for ln, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip().lower()
            if name not in _SECTIONS:
                raise FormatError(f"{path.name}:{ln}: unknown section [{name}]")
            if name in sections:
                raise FormatError(f"{path.name}:{ln}: duplicate section [{name}]")
            current = sections.setdefault(name, [])
            continue
        if current is None:
            raise FormatError(f"{path.name}:{ln}: content before first section")
        current.append((ln, line))
    return sections


def _parse_kv(lines, path, section):
    out = {}
    for ln, line in lines:
        if "=" not in line:
            raise FormatError(f"{path.name}:{ln}: expected key = value in [{section}]")
        key, _, val = line.partition("=")
        out[key.strip()] = val.strip()
    return out


def _parse_table(lines, path, section, columns):
    if not lines:
        return []
    ln0, header = lines[0]
    names = header.split()
    if tuple(names) != tuple(columns):
        raise FormatError(
            f"{path.name}:{ln0}: [{section}] header must be "
            f"'{' '.join(columns)}', got '{header}'")
    rows = []
    for ln, line in lines[1:]:
        toks = line.split()
        if len(toks) != len(columns):
            raise FormatError(
                f"{path.name}:{ln}: [{section}] row has {len(toks)} fields, "
                f"expected {len(columns)}")
        rows.append(dict(zip(columns, toks)))
    return rows


def _as_float(row, key, path, section):
    try:
        return float(row[key])
    except ValueError:
        raise FormatError(
            f"{path.name}: [{section}] {row.get('id', '?')}: "
            f"bad numeric value '{row[key]}' for {key}") from None


def _as_bool(tok):
    return tok.strip() not in ("0", "false", "False", "no")


def _read_profile_csv(path, nodes, expected_intervals=None):
    """Read one `interval,<node>,...` CSV into a dict node -> float array."""
    if not path.exists():
        raise FormatError(f"profile file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path.name}: empty profile file") from None
        if not header or header[0].strip() != "interval":
            raise FormatError(f"{path.name}: first column must be 'interval'")
        col_ids = [c.strip() for c in header[1:]]
        for cid in col_ids:
            if cid not in nodes:
                raise FormatError(f"{path.name}: unknown node id '{cid}' in header")
        intervals = []
        data = [[] for _ in col_ids]
        for ln, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(col_ids) + 1:
                raise FormatError(f"{path.name}:{ln}: row width mismatch")
            try:
                intervals.append(int(row[0]))
                for j, tok in enumerate(row[1:]):
                    data[j].append(float(tok))
            except ValueError:
                raise FormatError(f"{path.name}:{ln}: bad numeric value") from None
    if any(b <= a for a, b in zip(intervals, intervals[1:])):
        raise FormatError(f"{path.name}: interval ids must be strictly increasing")
    intervals = tuple(intervals)
    if expected_intervals is not None and intervals != expected_intervals:
        raise FormatError(f"{path.name}: interval ids do not match demand_p")
    series = {cid: np.asarray(col, dtype=float) for cid, col in zip(col_ids, data)}
    return intervals, series


def _stack(series, nodes, n_t):
    """Node-ordered (n_nodes, n_t) matrix; nodes absent from the CSV get 0."""
    out = np.zeros((len(nodes), n_t))
    for i, node in enumerate(nodes):
        if node in series:
            out[i] = series[node]
    return out


def load_network(path):
    """Parse and validate a network file.

    Returns (Network, Fleet, DemandProfile).  Raises FormatError on
    malformed input and ValidationError (or RadialityError) naming the
    offending entity when an invariant fails.
    """
    path = Path(path)
    if not path.exists():
        raise FormatError(f"network file not found: {path}")
    sections = _split_sections(path)
    for required in ("system", "nodes", "lines", "profiles"):
        if required not in sections:
            raise FormatError(f"{path.name}: missing [{required}] section")

    system = _parse_kv(sections["system"], path, "system")
    for key in ("name", "base_mva", "dt_minutes", "root"):
        if key not in system:
            raise FormatError(f"{path.name}: [system] missing key '{key}'")
    base_mva = float(system["base_mva"])
    dt_minutes = float(system["dt_minutes"])
    if base_mva <= 0 or dt_minutes <= 0:
        raise ValidationError("system: base_mva and dt_minutes must be positive")

    node_rows = _parse_table(sections["nodes"], path, "nodes", _NODE_COLS)
    if not node_rows:
        raise FormatError(f"{path.name}: [nodes] table is empty")
    nodes = tuple(r["id"] for r in node_rows)
    if len(set(nodes)) != len(nodes):
        raise ValidationError("nodes: duplicate node id")
    node_set = set(nodes)

    shunt_g, shunt_b, u_min, u_max, gamma = {}, {}, {}, {}, {}
    sensors = []
    c_curt = {}
    for row in node_rows:
        nid = row["id"]
        u_lo = _as_float(row, "u_min", path, "nodes")
        u_hi = _as_float(row, "u_max", path, "nodes")
        if u_lo <= 0:
            raise ValidationError(f"node {nid}: voltage bound u_min must be > 0")
        if u_lo > u_hi:
            raise ValidationError(f"node {nid}: u_min exceeds u_max")
        gam = _as_float(row, "gamma", path, "nodes")
        if gam < 0:
            raise ValidationError(f"node {nid}: gamma must be >= 0")
        u_min[nid], u_max[nid] = u_lo, u_hi
        shunt_g[nid] = _as_float(row, "g_sh", path, "nodes")
        shunt_b[nid] = _as_float(row, "b_sh", path, "nodes")
        gamma[nid] = gam
        c_curt[nid] = _as_float(row, "c_curt", path, "nodes")
        if _as_bool(row["sensor"]):
            sensors.append(nid)

    root = system["root"]
    if root not in node_set:
        raise ValidationError(f"system: root node '{root}' not in [nodes]")

    lines = []
    seen_lines = set()
    for row in _parse_table(sections.get("lines", []), path, "lines", _LINE_COLS):
        lid = row["id"]
        if lid in seen_lines:
            raise ValidationError(f"line {lid}: duplicate line id")
        seen_lines.add(lid)
        fr, to = row["from"], row["to"]
        for end in (fr, to):
            if end not in node_set:
                raise ValidationError(f"line {lid}: endpoint '{end}' not a node")
        if fr == to:
            raise ValidationError(f"line {lid}: from and to nodes coincide")
        r = _as_float(row, "r", path, "lines")
        x = _as_float(row, "x", path, "lines")
        lim = _as_float(row, "limit", path, "lines")
        if r < 0 or x < 0:
            raise ValidationError(f"line {lid}: negative impedance")
        if r == 0 and x == 0:
            raise ValidationError(f"line {lid}: r and x cannot both be zero")
        if lim <= 0:
            raise ValidationError(f"line {lid}: thermal limit must be positive")
        lines.append(Line(lid, fr, to, r, x, lim))

    generators = []
    seen = set()
    for row in _parse_table(sections.get("generators", []), path,
                            "generators", _GEN_COLS):
        gid = row["id"]
        if gid in seen:
            raise ValidationError(f"generator {gid}: duplicate id")
        seen.add(gid)
        if row["node"] not in node_set:
            raise ValidationError(f"generator {gid}: node '{row['node']}' unknown")
        g = Generator(
            id=gid, node=row["node"],
            cost_energy=_as_float(row, "c_energy", path, "generators"),
            cost_quad=_as_float(row, "c_quad", path, "generators"),
            cost_reserve=_as_float(row, "c_reserve", path, "generators"),
            p_min=_as_float(row, "p_min", path, "generators"),
            p_max=_as_float(row, "p_max", path, "generators"),
            q_min=_as_float(row, "q_min", path, "generators"),
            q_max=_as_float(row, "q_max", path, "generators"),
            ramp_dn=_as_float(row, "ramp_dn", path, "generators"),
            ramp_up=_as_float(row, "ramp_up", path, "generators"),
            flexible=_as_bool(row["flexible"]),
        )
        if g.p_min > g.p_max:
            raise ValidationError(f"generator {gid}: p_min exceeds p_max")
        if g.q_min > g.q_max:
            raise ValidationError(f"generator {gid}: q_min exceeds q_max")
        if g.cost_quad < 0:
            raise ValidationError(f"generator {gid}: quadratic cost must be >= 0")
        if g.flexible and not (g.ramp_dn <= 0 <= g.ramp_up):
            raise ValidationError(
                f"generator {gid}: flexible unit needs ramp_dn <= 0 <= ramp_up")
        generators.append(g)

    storage = []
    seen = set()
    for row in _parse_table(sections.get("storage", []), path, "storage", _STO_COLS):
        sid = row["id"]
        if sid in seen:
            raise ValidationError(f"storage {sid}: duplicate id")
        seen.add(sid)
        if row["node"] not in node_set:
            raise ValidationError(f"storage {sid}: node '{row['node']}' unknown")
        s = StorageUnit(
            id=sid, node=row["node"],
            eff_ch=_as_float(row, "eff_ch", path, "storage"),
            eff_dis=_as_float(row, "eff_dis", path, "storage"),
            e_min=_as_float(row, "e_min", path, "storage"),
            e_max=_as_float(row, "e_max", path, "storage"),
            p_min=_as_float(row, "p_min", path, "storage"),
            p_max=_as_float(row, "p_max", path, "storage"),
            e0=_as_float(row, "e0", path, "storage"),
        )
        if not (0 < s.eff_ch <= 1 and 0 < s.eff_dis <= 1):
            raise ValidationError(f"storage {sid}: efficiencies must lie in (0, 1]")
        if not (0 <= s.e_min <= s.e_max):
            raise ValidationError(f"storage {sid}: need 0 <= e_min <= e_max")
        if not (0 <= s.p_min <= s.p_max):
            raise ValidationError(f"storage {sid}: need 0 <= p_min <= p_max")
        if not (s.e_min <= s.e0 <= s.e_max):
            raise ValidationError(f"storage {sid}: initial soc outside energy bounds")
        storage.append(s)

    profiles = _parse_kv(sections["profiles"], path, "profiles")
    for key in ("demand_p", "demand_q"):
        if key not in profiles:
            raise FormatError(f"{path.name}: [profiles] missing '{key}'")

    def resolve(key):
        return path.parent / profiles[key]

    intervals, p_series = _read_profile_csv(resolve("demand_p"), node_set)
    if not intervals:
        raise FormatError(f"{path.name}: demand_p has no intervals")
    _, q_series = _read_profile_csv(resolve("demand_q"), node_set, intervals)
    n_t = len(intervals)
    p = _stack(p_series, nodes, n_t)
    q = _stack(q_series, nodes, n_t)
    if "curtail_max" in profiles:
        _, cmax_series = _read_profile_csv(resolve("curtail_max"), node_set, intervals)
        cmax = _stack(cmax_series, nodes, n_t)
    else:
        cmax = np.zeros_like(p)
    if "curtail_min" in profiles:
        _, cmin_series = _read_profile_csv(resolve("curtail_min"), node_set, intervals)
        cmin = _stack(cmin_series, nodes, n_t)
    else:
        cmin = np.zeros_like(p)

    # Curtailment can only shed nonnegative net demand: 0 <= cmin <= cmax
    # and cmax <= max(p, 0); where renewables drive net demand negative the
    # curtailable share must be zero.
    if (cmin < -_CURT_TOL).any():
        i, t = _first_bad(cmin < -_CURT_TOL)
        raise ValidationError(
            f"node {nodes[i]} interval {intervals[t]}: curtail_min negative")
    if (cmax < cmin - _CURT_TOL).any():
        i, t = _first_bad(cmax < cmin - _CURT_TOL)
        raise ValidationError(
            f"node {nodes[i]} interval {intervals[t]}: curtail_max below curtail_min")
    headroom = np.maximum(p, 0.0)
    if (cmax > headroom + _CURT_TOL).any():
        i, t = _first_bad(cmax > headroom + _CURT_TOL)
        raise ValidationError(
            f"node {nodes[i]} interval {intervals[t]}: "
            f"curtail_max exceeds net active demand")

    network = Network(
        name=system["name"], base_mva=base_mva, nodes=nodes, root=root,
        lines=tuple(lines), sensor_nodes=tuple(sensors),
        shunt_g=shunt_g, shunt_b=shunt_b, u_min=u_min, u_max=u_max, gamma=gamma,
    )
    validate_radial(network)

    cost_curtail = np.array([c_curt[n] for n in nodes])
    profile = DemandProfile(
        intervals=intervals, dt_minutes=dt_minutes, nodes=nodes,
        p=p, q=q, curtail_min=cmin, curtail_max=cmax, cost_curtail=cost_curtail,
    )
    return network, Fleet(tuple(generators), tuple(storage)), profile


def _first_bad(mask):
    i, t = np.argwhere(mask)[0]
    return int(i), int(t)


# ---------------------------------------------------------------------------
# topology

def validate_radial(network):
    """Check the line set is a tree rooted at network.root.

    Returns a TopologyReport with the breadth-first node order, depths,
    and parent/children maps.  Line orientation must follow the tree:
    from_node is the upstream end.  Raises RadialityError otherwise.
    """
    n, m = len(network.nodes), len(network.lines)
    if m != n - 1:
        raise RadialityError(
            f"not radial: {n} nodes need {n - 1} lines, file has {m}")

    adj = {node: [] for node in network.nodes}
    for line in network.lines:
        adj[line.from_node].append((line, line.to_node))
        adj[line.to_node].append((line, line.from_node))

    depth = {network.root: 0}
    parent_node, parent_line = {}, {}
    children = {node: [] for node in network.nodes}
    order = [network.root]
    queue = deque([network.root])
    while queue:
        node = queue.popleft()
        for line, other in adj[node]:
            if other == parent_node.get(node):
                continue
            if other in depth:
                raise RadialityError(f"not radial: cycle through node {other}")
            if line.from_node != node:
                raise RadialityError(
                    f"line {line.id} oriented against the tree "
                    f"(upstream end is {node})")
            depth[other] = depth[node] + 1
            parent_node[other] = node
            parent_line[other] = line.id
            children[node].append((line.id, other))
            order.append(other)
            queue.append(other)

    if len(order) != n:
        missing = [node for node in network.nodes if node not in depth]
        raise RadialityError(
            f"disconnected: nodes {missing} unreachable from root {network.root}")

    return TopologyReport(
        order=tuple(order), depth=depth, parent_node=parent_node,
        parent_line=parent_line,
        children={k: tuple(v) for k, v in children.items()},
    )


# ---------------------------------------------------------------------------
# uncertainty sampling

def sample_uncertainty(profile, relative_std, seed, time_corr=0.0):
    """Perturb the demand series with Gaussian forecast error.

    Each nodal active demand is scaled by (1 + eps), eps ~ N(0, relative_std),
    drawn independently per node and interval.  With `time_corr` in (0, 1)
    each node's error instead follows a stationary AR(1) in time with that
    lag-one correlation, modelling the persistence of real forecast misses;
    the marginal std stays `relative_std`.  Reactive demand and the
    curtailment bounds follow the same factor (constant power factor; the
    curtailable share stays a fixed fraction of realized demand).  Factors
    are floored at 0 so demand never changes sign.  Deterministic per seed.
    """
    if relative_std < 0:
        raise ValidationError("relative_std must be >= 0")
    if not 0.0 <= time_corr < 1.0:
        raise ValidationError("time_corr must lie in [0, 1)")
    if relative_std == 0:
        return replace(
            profile, p=profile.p.copy(), q=profile.q.copy(),
            curtail_min=profile.curtail_min.copy(),
            curtail_max=profile.curtail_max.copy(),
            cost_curtail=profile.cost_curtail.copy(),
        )
    rng = np.random.default_rng(seed)
    eps = rng.normal(0.0, relative_std, size=profile.p.shape)
    if time_corr > 0.0:
        # innovations scaled so the process variance matches relative_std^2
        scale = np.sqrt(1.0 - time_corr ** 2)
        ar = np.empty_like(eps)
        ar[:, 0] = eps[:, 0]
        for t in range(1, eps.shape[1]):
            ar[:, t] = time_corr * ar[:, t - 1] + scale * eps[:, t]
        eps = ar
    factor = np.maximum(1.0 + eps, 0.0)
    return replace(
        profile,
        p=profile.p * factor,
        q=profile.q * factor,
        curtail_min=profile.curtail_min * factor,
        curtail_max=profile.curtail_max * factor,
        cost_curtail=profile.cost_curtail.copy(),
    )


# ---------------------------------------------------------------------------
# serialization

def _fmt(value):
    """Shortest exact decimal form (repr round-trips floats bit-exactly)."""
    return repr(float(value))


def save_network(path, network, fleet, profile):
    """Write the model back to disk; inverse of load_network.

    Profile series go to sibling CSVs named <stem>_demand_p.csv etc.
    """
    path = Path(path)
    stem = path.stem
    sensors = set(network.sensor_nodes)
    cost = {n: profile.cost_curtail[i] for i, n in enumerate(profile.nodes)}

    out = []
    out.append("[system]")
    out.append(f"name = {network.name}")
    out.append(f"base_mva = {_fmt(network.base_mva)}")
    out.append(f"dt_minutes = {_fmt(profile.dt_minutes)}")
    out.append(f"root = {network.root}")
    out.append("")
    out.append("[nodes]")
    out.append(" ".join(_NODE_COLS))
    for n in network.nodes:
        out.append(" ".join([
            n, _fmt(network.u_min[n]), _fmt(network.u_max[n]),
            _fmt(network.shunt_g[n]), _fmt(network.shunt_b[n]),
            _fmt(network.gamma[n]), "1" if n in sensors else "0",
            _fmt(cost[n]),
        ]))
    out.append("")
    out.append("[lines]")
    out.append(" ".join(_LINE_COLS))
    for l in network.lines:
        out.append(" ".join([
            l.id, l.from_node, l.to_node, _fmt(l.r), _fmt(l.x), _fmt(l.limit)]))
    out.append("")
    out.append("[generators]")
    out.append(" ".join(_GEN_COLS))
    for g in fleet.generators:
        out.append(" ".join([
            g.id, g.node, _fmt(g.cost_energy), _fmt(g.cost_quad),
            _fmt(g.cost_reserve), _fmt(g.p_min), _fmt(g.p_max),
            _fmt(g.q_min), _fmt(g.q_max), _fmt(g.ramp_dn), _fmt(g.ramp_up),
            "1" if g.flexible else "0",
        ]))
    out.append("")
    out.append("[storage]")
    out.append(" ".join(_STO_COLS))
    for s in fleet.storage:
        out.append(" ".join([
            s.id, s.node, _fmt(s.eff_ch), _fmt(s.eff_dis), _fmt(s.e_min),
            _fmt(s.e_max), _fmt(s.p_min), _fmt(s.p_max), _fmt(s.e0)]))
    out.append("")
    out.append("[profiles]")
    names = {key: f"{stem}_{key}.csv"
             for key in ("demand_p", "demand_q", "curtail_min", "curtail_max")}
    for key, fname in names.items():
        out.append(f"{key} = {fname}")
    path.write_text("\n".join(out) + "\n")

    series = {"demand_p": profile.p, "demand_q": profile.q,
              "curtail_min": profile.curtail_min,
              "curtail_max": profile.curtail_max}
    for key, mat in series.items():
        write_profile_csv(path.parent / names[key], profile.intervals,
                          profile.nodes, mat)


def write_profile_csv(path, intervals, ids, matrix):
    """Emit one `interval,<id>,...` series file (rows = intervals)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["interval", *ids])
        for t, interval in enumerate(intervals):
            writer.writerow([interval, *(_fmt(v) for v in matrix[:, t])])
