"""End-to-end study pipeline: day simulation, datasets, detection scenarios.

A simulated day follows the experiment loop: sample demand forecast error,
re-solve the intraday dispatch, optionally push a falsification through the
DER downlink, run the interval physics, and keep two views of the result.
The uplink view (schedules plus sensor telemetry) is everything the margin
predictor may read; the ground-truth view (realized trajectories, margins)
exists only to label windows and score detections.  Attack internals such
as the delta series never cross into the detector path.

A scenario run stitches the days into the full loop: generate a mixed
train set, fit the margin predictor, replay held-out attacked days next to
their untouched twins, and report margins, alarms and lead times.
"""

import configparser
import csv
import hashlib
import json
import os
from dataclasses import dataclass, field, asdict, replace

import numpy as np

from .attack import (AttackParams, apply_attack, electrical_adjacency,
                     solve_falsification)
from .detection import (DEFAULT_LEAD, DEFAULT_THRESHOLD, DEFAULT_WINDOW,
                        MARGIN_MODES, day_windows, ems_margin_series,
                        margin_series, run_detection)
from .dispatch import DispatchParams, solve_dispatch
from .errors import (AttackInfeasible, DispatchInfeasible, FormatError,
                     PowerFlowError, ValidationError)
from .network import fixture_path, load_network, sample_uncertainty
from .powerflow import (emit_telemetry, injections_from_schedule,
                        run_powerflow_series)
from .svr import KernelSpec, save_model, train_svr

SCENARIOS = ("gen-dispatch", "load-curtailment")

# Codes folded into per-day seeds so a day's draw depends only on the
# config seed, its role and its index, never on generation order.
_KIND_CODES = {"train-normal": 0, "train-attacked": 1, "test-attacked": 2}

# Per-scenario attack presets; config values override.
_PRESETS = {
    "gen-dispatch": {"target": "generation", "units": ("g1", "g2"),
                     "rho_geo": 0.0},
    "load-curtailment": {"target": "curtailment", "units": ("3", "11", "12"),
                         "rho_geo": 3.0},
}


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything a pipeline run needs; mirrors the INI sections."""

    # [grid]
    network: str = ""                 # empty -> bundled fixture
    reserve_fraction: float = 0.05
    reserve_floor: float = 0.015
    # [uncertainty]
    demand_std: float = 0.02
    time_corr: float = 0.97           # AR(1) persistence of the forecast miss
    normal_days: int = 40
    attacked_days: int = 20
    test_days: int = 20               # attacked test days; twins give normals
    seed: int = 20250814
    # [attack]
    scenario: str = "gen-dispatch"
    units: tuple = ()                 # empty -> scenario preset
    window_clock: str = "17:00-22:00"
    rise: int = 6                     # intervals to ramp up to the hold level
    hold: float = 0.7                 # hold deviation, as a reserve multiple
    tail_start: int = 19              # window index where the hold ends
    budget: float = 1.02              # accumulated deviation / sum of reserve
    rho: float = 0.5
    rho_geo: float = -1.0             # negative -> scenario preset
    size_cap: float = 0.9
    direction: int = -1
    # [svr]
    kernel: str = "rbf"
    sigma: float = 0.0                # 0 -> sqrt(n_features) heuristic
    degree: int = 3
    c: float = 10.0
    epsilon: float = 0.002            # margin labels span roughly 0.08 p.u.
    tol: float = 1e-3
    # [detection]
    window: int = DEFAULT_WINDOW
    horizon: int = DEFAULT_LEAD
    threshold: float = DEFAULT_THRESHOLD
    margin_mode: str = "symmetric"
    stride: int = 1

    def __post_init__(self):
        if self.normal_days < 1 or self.attacked_days < 0 or self.test_days < 0:
            raise ValidationError("day counts must be >= 1 normal, >= 0 rest")
        if self.demand_std < 0:
            raise ValidationError("demand_std must be >= 0")
        if not 0.0 <= self.time_corr < 1.0:
            raise ValidationError("time_corr must lie in [0, 1)")
        if self.scenario not in SCENARIOS:
            raise ValidationError(f"unknown scenario {self.scenario!r}")
        if self.window < 1 or self.horizon < 0:
            raise ValidationError("window must be >= 1 and horizon >= 0")
        if self.threshold <= 0:
            raise ValidationError("alarm threshold must be > 0")
        if self.margin_mode not in MARGIN_MODES:
            raise ValidationError(f"unknown margin mode {self.margin_mode!r}")
        if self.stride < 1:
            raise ValidationError("stride must be >= 1")
        if self.rise < 1 or not 0 < self.hold:
            raise ValidationError("rise must be >= 1 and hold > 0")
        if self.tail_start < self.rise:
            raise ValidationError("tail must start at or after the ramp")
        if self.budget < 1.0:
            raise ValidationError("budget below 1 cannot exhaust the reserve")
        if self.direction not in (1, -1):
            raise ValidationError("direction must be +1 or -1")
        if self.kernel not in ("rbf", "polynomial"):
            raise ValidationError(f"unknown kernel {self.kernel!r}")
        if self.c <= 0 or self.epsilon < 0 or self.tol <= 0:
            raise ValidationError("need c > 0, epsilon >= 0, tol > 0")


_SECTION_FIELDS = {
    "grid": ("network", "reserve_fraction", "reserve_floor"),
    "uncertainty": ("demand_std", "time_corr", "normal_days",
                    "attacked_days", "test_days", "seed"),
    "attack": ("scenario", "units", "window_clock", "rise", "hold",
               "tail_start", "budget", "rho", "rho_geo", "size_cap",
               "direction"),
    "svr": ("kernel", "sigma", "degree", "c", "epsilon", "tol"),
    "detection": ("window", "horizon", "threshold", "margin_mode", "stride"),
}


def load_config(path=None, overrides=None):
    """Parse an INI config; missing keys fall back to the defaults above."""
    values = {}
    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise FormatError(f"cannot read config {path}")
        for section in parser.sections():
            if section not in _SECTION_FIELDS:
                raise FormatError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                if key not in _SECTION_FIELDS[section]:
                    raise FormatError(f"unknown key {key!r} in [{section}]")
                values[key] = _coerce(key, raw)
    if overrides:
        values.update(overrides)
    return ScenarioConfig(**values)


def _coerce(key, raw):
    raw = raw.strip()
    kind = ScenarioConfig.__dataclass_fields__[key].type
    try:
        if key == "units":
            return tuple(u.strip() for u in raw.split(",") if u.strip())
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise FormatError(f"bad value for {key!r}: {raw!r}") from exc


def save_config(config, path):
    parser = configparser.ConfigParser()
    for section, keys in _SECTION_FIELDS.items():
        parser[section] = {}
        for key in keys:
            value = getattr(config, key)
            if key == "units":
                value = ",".join(value)
            parser[section][key] = str(value)
    with open(path, "w") as fh:
        parser.write(fh)


def clock_window(spec, dt_minutes, n_t):
    """'HH:MM-HH:MM' -> contiguous interval ids, end exclusive."""
    try:
        lo, hi = spec.split("-")
        mins = []
        for part in (lo, hi):
            hh, mm = part.strip().split(":")
            mins.append(int(hh) * 60 + int(mm))
    except ValueError as exc:
        raise ValidationError(f"bad window spec {spec!r}") from exc
    start, stop = (m / dt_minutes for m in mins)
    if start != int(start) or stop != int(stop):
        raise ValidationError(f"window {spec!r} not aligned to {dt_minutes}min")
    start, stop = int(start), int(stop)
    if not 0 <= start < stop <= n_t:
        raise ValidationError(f"window {spec!r} outside the horizon")
    return tuple(range(start, stop))


def deviation_schedule(reserve, window, rise, hold, tail_start, budget):
    """Per-interval deviation floors, as multiples of the predicted reserve.

    Ramp up over `rise` intervals, sit at `hold` (margin stays alive but the
    footprint is visible in telemetry), then jump to a flat tail sized so
    the accumulated deviation clears `budget` times the windowed reserve.
    """
    length = len(window)
    if tail_start >= length:
        raise ValidationError("tail must start inside the attack window")
    rw = np.asarray(reserve, dtype=float)[list(window)]
    c = np.empty(length)
    c[:rise] = hold * (np.arange(1, rise + 1) / rise)
    c[rise:tail_start] = hold
    spent = float((c[:tail_start] * rw[:tail_start]).sum())
    rest = float(rw[tail_start:].sum())
    need = budget * float(rw.sum()) - spent
    if need <= 0:
        raise ValidationError("hold phase alone exceeds the budget")
    c[tail_start:] = need / rest
    return c


def build_attack(config, network, prediction):
    """Attacker-side plan from the day-ahead prediction."""
    preset = _PRESETS[config.scenario]
    units = config.units or preset["units"]
    rho_geo = config.rho_geo if config.rho_geo >= 0 else preset["rho_geo"]
    window = clock_window(config.window_clock, prediction.dt_minutes,
                          prediction.n_t)
    depth = deviation_schedule(prediction.r.sum(axis=0), window, config.rise,
                               config.hold, config.tail_start, config.budget)
    adjacency = electrical_adjacency(network) if rho_geo > 0 else None
    return AttackParams(target=preset["target"], units=tuple(units),
                        window=window, depth=depth, size_cap=config.size_cap,
                        rho=config.rho, rho_geo=rho_geo, adjacency=adjacency,
                        direction=config.direction)


@dataclass
class DayView:
    """One day as the detector is allowed to see it, plus its labels."""

    kind: str                 # train-normal / train-attacked / test-attacked
    index: int
    attacked: bool
    schedule: object          # uplink dispatch view (spoofed when attacked)
    v: np.ndarray             # sensor voltage magnitudes, (n_sensors, n_t)
    theta: np.ndarray
    margin_actual: np.ndarray
    margin_ems: np.ndarray
    clipped: int = 0          # downlink saturation events (manifest only)


def day_seed(config_seed, kind, index):
    return np.random.SeedSequence([int(config_seed), _KIND_CODES[kind],
                                   int(index)])


def simulate_day(network, fleet, profile, dparams, config, kind, index,
                 plan=None):
    """Run one day; attacked days also return their untouched twin.

    The twin shares the realized demand and intraday schedule, so the pair
    isolates the attack: identical uplink dispatch, different physics.
    """
    realized = sample_uncertainty(profile, config.demand_std,
                                  seed=day_seed(config.seed, kind, index),
                                  time_corr=config.time_corr)
    sched = solve_dispatch(network, fleet, realized, dparams)
    views = []

    frames = injections_from_schedule(network, fleet, realized, sched)
    states = run_powerflow_series(network, frames)
    v, theta = emit_telemetry(states, network.sensor_nodes)
    ems = ems_margin_series(sched, fleet, realized, mode=config.margin_mode)
    normal_kind = "train-normal" if kind == "train-normal" else kind + "-twin"
    views.append(DayView(kind=normal_kind, index=index, attacked=False,
                         schedule=sched, v=v, theta=theta,
                         margin_actual=ems.copy(), margin_ems=ems))

    if plan is not None:
        run = apply_attack(sched, plan, fleet=fleet, profile=realized)
        frames_a = injections_from_schedule(network, fleet, realized,
                                            run.actual)
        states_a = run_powerflow_series(network, frames_a)
        v_a, theta_a = emit_telemetry(states_a, network.sensor_nodes)
        actual = margin_series(sched, run.actual, fleet, realized,
                               mode=config.margin_mode)
        views.append(DayView(kind=kind, index=index, attacked=True,
                             schedule=sched, v=v_a, theta=theta_a,
                             margin_actual=actual, margin_ems=ems,
                             clipped=len(run.clipped)))
    return views


def _simulate_one(args):
    network, fleet, profile, dparams, config, kind, index, plan = args
    try:
        return kind, index, simulate_day(network, fleet, profile, dparams,
                                         config, kind, index, plan), None
    except (DispatchInfeasible, AttackInfeasible, PowerFlowError,
            ValidationError) as exc:
        return kind, index, [], f"{type(exc).__name__}: {exc}"


@dataclass
class Dataset:
    """Simulated days plus the window slices the trainer consumes."""

    predicted: object             # shared day-ahead schedule
    train_views: list
    test_views: list
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    manifest: dict = field(default_factory=dict)
    plan: object = None           # attacker-side; not for the detector path


def generate_dataset(config, out_dir=None, jobs=1):
    """Simulate the configured days and slice training windows.

    Every day is seeded independently from (config seed, role, index); a
    day that fails is logged and skipped, and the dataset is rejected when
    fewer than 90% of the requested days survive.
    """
    network, fleet, profile = load_network(config.network or fixture_path())
    n_t = profile.p.shape[1]
    if config.window + config.horizon >= n_t:
        raise ValidationError("monitoring window plus horizon must fit "
                              "inside the daily horizon")
    dparams = DispatchParams(reserve_fraction=config.reserve_fraction,
                             reserve_floor=config.reserve_floor)
    predicted = solve_dispatch(network, fleet, profile, dparams)
    plan = None
    if config.attacked_days or config.test_days:
        plan = build_attack(config, network, predicted)
        plan = solve_falsification(predicted, plan, fleet=fleet,
                                   profile=profile)

    work = [("train-normal", i, None) for i in range(config.normal_days)]
    work += [("train-attacked", i, plan) for i in range(config.attacked_days)]
    work += [("test-attacked", i, plan) for i in range(config.test_days)]
    args = [(network, fleet, profile, dparams, config, kind, index, pl)
            for kind, index, pl in work]
    if jobs and jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_simulate_one, args))
    else:
        outcomes = [_simulate_one(a) for a in args]

    train_views, test_views, day_log = [], [], []
    failures = 0
    for kind, index, views, error in outcomes:
        entry = {"kind": kind, "index": index,
                 "status": "ok" if error is None else "failed"}
        if error is not None:
            failures += 1
            entry["reason"] = error
        else:
            entry["clipped"] = sum(vw.clipped for vw in views)
            bucket = test_views if kind == "test-attacked" else train_views
            bucket.extend(views)
        day_log.append(entry)
    requested = len(work)
    if requested and failures > 0.1 * requested:
        raise ValidationError(
            f"{failures}/{requested} simulated days failed; dataset rejected")

    def slices(views):
        xs, ys = [], []
        for vw in views:
            x, y, _ = day_windows(predicted, vw.schedule, vw.v, vw.theta,
                                  vw.margin_actual, window=config.window,
                                  lead=config.horizon, stride=config.stride)
            xs.append(x)
            ys.append(y)
        if not xs:
            return np.zeros((0, 0)), np.zeros(0)
        return np.concatenate(xs, axis=0), np.concatenate(ys, axis=0)

    x_train, y_train = slices(train_views)
    x_test, y_test = slices(test_views)
    manifest = {"days": day_log,
                "requested": requested,
                "failed": failures,
                "train_windows": int(y_train.size),
                "test_windows": int(y_test.size),
                "config": config_dict(config)}
    dataset = Dataset(predicted=predicted, train_views=train_views,
                      test_views=test_views, x_train=x_train, y_train=y_train,
                      x_test=x_test, y_test=y_test, manifest=manifest,
                      plan=plan)
    if out_dir is not None:
        write_dataset(dataset, out_dir)
    return dataset


def config_dict(config):
    d = asdict(config)
    d["units"] = list(d["units"])
    return d


# ---------------------------------------------------------------------------
# dataset persistence

def _schedule_arrays(sched, prefix):
    keys = ("g_p", "g_q", "r", "d_curt", "p_ch", "p_dis", "e")
    out = {prefix + k: getattr(sched, k) for k in keys}
    out[prefix + "ids"] = np.array([
        ",".join(sched.gen_ids), ",".join(sched.node_ids),
        ",".join(sched.sto_ids), ",".join(str(t) for t in sched.intervals),
        repr(float(sched.dt_minutes))])
    out[prefix + "reserve_required"] = sched.reserve_required
    return out


def _schedule_from_arrays(data, prefix, like=None):
    from .dispatch import DispatchSchedule
    meta = [str(s) for s in data[prefix + "ids"]]
    gen_ids = tuple(meta[0].split(",")) if meta[0] else ()
    node_ids = tuple(meta[1].split(",")) if meta[1] else ()
    sto_ids = tuple(meta[2].split(",")) if meta[2] else ()
    intervals = tuple(int(t) for t in meta[3].split(",")) if meta[3] else ()
    n_t = len(intervals)
    zeros = np.zeros((0, n_t))
    return DispatchSchedule(
        intervals=intervals, dt_minutes=float(meta[4]), gen_ids=gen_ids,
        node_ids=node_ids, line_ids=(), sto_ids=sto_ids,
        g_p=data[prefix + "g_p"], g_q=data[prefix + "g_q"],
        r=data[prefix + "r"], d_curt=data[prefix + "d_curt"],
        p_ch=data[prefix + "p_ch"], p_dis=data[prefix + "p_dis"],
        e=data[prefix + "e"], f_p=zeros, f_q=zeros, a=zeros,
        u=np.zeros((0, n_t)), objective=0.0, status="loaded", iterations=0,
        residuals={}, reserve_required=data[prefix + "reserve_required"])


def write_dataset(dataset, out_dir):
    """Lay the dataset down as npz files plus a hashed manifest."""
    os.makedirs(out_dir, exist_ok=True)
    days_dir = os.path.join(out_dir, "days")
    os.makedirs(days_dir, exist_ok=True)
    files = {}

    pred_path = os.path.join(out_dir, "predicted.npz")
    np.savez(pred_path, **_schedule_arrays(dataset.predicted, "sched_"))
    files["predicted.npz"] = pred_path

    for vw in dataset.train_views + dataset.test_views:
        name = f"day_{vw.kind}_{vw.index:03d}.npz"
        path = os.path.join(days_dir, name)
        np.savez(path, kind=np.array(vw.kind), index=np.array(vw.index),
                 attacked=np.array(vw.attacked), v=vw.v, theta=vw.theta,
                 margin_actual=vw.margin_actual, margin_ems=vw.margin_ems,
                 clipped=np.array(vw.clipped),
                 **_schedule_arrays(vw.schedule, "sched_"))
        files[os.path.join("days", name)] = path

    data_path = os.path.join(out_dir, "dataset.npz")
    np.savez(data_path, x_train=dataset.x_train, y_train=dataset.y_train,
             x_test=dataset.x_test, y_test=dataset.y_test)
    files["dataset.npz"] = data_path

    manifest = dict(dataset.manifest)
    manifest["files"] = {rel: file_digest(path)
                         for rel, path in sorted(files.items())}
    man_path = os.path.join(out_dir, "manifest.json")
    with open(man_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    dataset.manifest = manifest
    return [*files.values(), man_path]


def load_day_view(path):
    data = np.load(path, allow_pickle=False)
    return DayView(kind=str(data["kind"]), index=int(data["index"]),
                   attacked=bool(data["attacked"]),
                   schedule=_schedule_from_arrays(data, "sched_"),
                   v=data["v"], theta=data["theta"],
                   margin_actual=data["margin_actual"],
                   margin_ems=data["margin_ems"],
                   clipped=int(data["clipped"]))


def load_predicted(path):
    data = np.load(path, allow_pickle=False)
    return _schedule_from_arrays(data, "sched_")


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# training and scenario evaluation

def train_from_dataset(config, dataset):
    if dataset.y_train.size == 0:
        raise ValidationError("empty training set")
    sigma = config.sigma if config.sigma > 0 else float(
        np.sqrt(dataset.x_train.shape[1]))
    kernel = KernelSpec(kind=config.kernel, sigma=sigma, degree=config.degree)
    return train_svr(dataset.x_train, dataset.y_train, kernel=kernel,
                     c=config.c, epsilon=config.epsilon, tol=config.tol,
                     seed=config.seed)


@dataclass
class DayResult:
    """Detection outcome for one held-out day."""

    kind: str
    index: int
    attacked: bool
    series: object                # MarginSeries
    exhaustion: int = None        # first interval with actual < threshold
    alarm_target: int = None      # first interval whose prediction alarms
    alarm_issue: int = None       # when that prediction was made
    lead_minutes: float = None    # exhaustion minus issue, in minutes
    detected: bool = False
    false_alarm: bool = False     # any alarm on a clean day
    ems_flat: bool = True         # attacked EMS view matches the twin's


@dataclass
class ScenarioReport:
    scenario: str
    config: dict
    days: list
    metrics: dict
    manifest: dict = field(default_factory=dict)


def evaluate_day(view, model, predicted, config, twin_ems=None):
    """Score one held-out day with the trained margin predictor."""
    dt = predicted.dt_minutes
    series = run_detection(model, predicted, view.schedule, view.v, view.theta,
                           view.margin_actual, view.margin_ems,
                           threshold=config.threshold, window=config.window,
                           lead=config.horizon)
    result = DayResult(kind=view.kind, index=view.index,
                       attacked=view.attacked, series=series)
    below = np.where(view.margin_actual < config.threshold)[0]
    if below.size:
        result.exhaustion = int(below[0])
    if series.first_alarm is not None:
        result.alarm_target = int(series.first_alarm)
        # a prediction for target t is issued `horizon` intervals earlier;
        # the operator hears the alarm at issue time
        result.alarm_issue = result.alarm_target - config.horizon
    if view.attacked:
        if result.exhaustion is not None and result.alarm_issue is not None:
            result.lead_minutes = (result.exhaustion - result.alarm_issue) * dt
            result.detected = result.lead_minutes >= 0
        if twin_ems is not None:
            result.ems_flat = bool(np.array_equal(view.margin_ems, twin_ems))
    else:
        result.false_alarm = series.first_alarm is not None
    return result


def run_scenario(config, scenario=None, out_dir=None, jobs=1):
    """Full loop for one named scenario; returns the report."""
    if scenario is not None:
        if scenario not in SCENARIOS:
            raise ValidationError(f"unknown scenario {scenario!r}")
        config = replace(config, scenario=scenario)
    if config.test_days < 1:
        raise ValidationError("scenario run needs at least one test day")
    dataset = generate_dataset(
        config, out_dir=None if out_dir is None
        else os.path.join(out_dir, "dataset"), jobs=jobs)
    model = train_from_dataset(config, dataset)

    twins = {vw.index: vw for vw in dataset.test_views if not vw.attacked}
    days = []
    for vw in dataset.test_views:
        twin = twins.get(vw.index) if vw.attacked else None
        days.append(evaluate_day(vw, model, dataset.predicted, config,
                                 twin_ems=None if twin is None
                                 else twin.margin_ems))
    report = ScenarioReport(scenario=config.scenario,
                            config=config_dict(config), days=days,
                            metrics=_metrics(config, dataset, model, days))
    if out_dir is not None:
        emit_report(report, out_dir, model=model)
    return report


def _metrics(config, dataset, model, days):
    attacked = [d for d in days if d.attacked]
    normal = [d for d in days if not d.attacked]
    leads = [d.lead_minutes for d in attacked if d.lead_minutes is not None]
    metrics = {
        "scenario": config.scenario,
        "attacked_days": len(attacked),
        "normal_days": len(normal),
        "detected_days": sum(d.detected for d in attacked),
        "detection_rate": (sum(d.detected for d in attacked) / len(attacked)
                           if attacked else None),
        "lead_minutes_min": min(leads) if leads else None,
        "lead_minutes_median": float(np.median(leads)) if leads else None,
        "false_alarm_days": sum(d.false_alarm for d in normal),
        "ems_view_flat": all(d.ems_flat for d in attacked),
        "exhausted_days": sum(d.exhaustion is not None for d in attacked),
        "threshold": config.threshold,
        "dt_minutes": float(dataset.predicted.dt_minutes),
        "train_windows": int(dataset.y_train.size),
        "model": {k: model.info[k] for k in ("iterations", "converged",
                                             "violation", "n_train")},
        "n_support_vectors": int(len(model.coef)),
        "day_failures": dataset.manifest.get("failed", 0),
    }
    if dataset.plan is not None and dataset.plan.delta.shape[0] > 1:
        delta = dataset.plan.delta
        cors = [float(np.corrcoef(delta[i], delta[j])[0, 1])
                for i in range(delta.shape[0])
                for j in range(i + 1, delta.shape[0])]
        metrics["min_pairwise_correlation"] = min(cors)
    return metrics


# ---------------------------------------------------------------------------
# report emission

def emit_report(report, out_dir, model=None):
    """Write margins, metrics, plot data, summary and a hashed manifest."""
    if not report.days:
        raise ValidationError("empty report: no evaluated days")
    os.makedirs(out_dir, exist_ok=True)
    paths = {}

    margins = os.path.join(out_dir, "margins.csv")
    with open(margins, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["day", "index", "interval", "minute",
                    "ems_view", "actual", "predicted", "alarm"])
        dt = _dt_minutes(report)
        for day in report.days:
            s = day.series
            for t in s.intervals:
                pred = s.predicted[t]
                w.writerow([day.kind, day.index, t, int(t * dt),
                            repr(float(s.ems_view[t])),
                            repr(float(s.actual[t])),
                            "" if np.isnan(pred) else repr(float(pred)),
                            int(s.alarm[t])])
    paths["margins.csv"] = margins

    plot = os.path.join(out_dir, "margins_long.csv")
    with open(plot, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["day", "index", "interval", "series", "value"])
        for day in report.days:
            s = day.series
            for name, arr in (("ems_view", s.ems_view), ("actual", s.actual),
                              ("predicted", s.predicted)):
                for t in s.intervals:
                    if np.isnan(arr[t]):
                        continue
                    w.writerow([day.kind, day.index, t, name,
                                repr(float(arr[t]))])
    paths["margins_long.csv"] = plot

    metrics = os.path.join(out_dir, "metrics.json")
    payload = {"metrics": report.metrics, "config": report.config,
               "days": [_day_dict(d) for d in report.days]}
    with open(metrics, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    paths["metrics.json"] = metrics

    if model is not None:
        model_path = os.path.join(out_dir, "model.npz")
        save_model(model_path, model)
        paths["model.npz"] = model_path

    summary = os.path.join(out_dir, "summary.txt")
    with open(summary, "w") as fh:
        fh.write(_summary_text(report))
    paths["summary.txt"] = summary

    manifest = os.path.join(out_dir, "manifest.json")
    listing = {rel: file_digest(p) for rel, p in sorted(paths.items())}
    dataset_manifest = os.path.join(out_dir, "dataset", "manifest.json")
    if os.path.exists(dataset_manifest):
        listing["dataset/manifest.json"] = file_digest(dataset_manifest)
    with open(manifest, "w") as fh:
        json.dump({"scenario": report.scenario, "files": listing}, fh,
                  indent=2, sort_keys=True)
        fh.write("\n")
    report.manifest = listing
    for rel, p in paths.items():
        if not os.path.exists(p):
            raise OSError(f"failed to write {p}")
    return [*paths.values(), manifest]


def _dt_minutes(report):
    return report.metrics.get("dt_minutes", 10.0)


def _day_dict(day):
    return {"kind": day.kind, "index": day.index, "attacked": day.attacked,
            "exhaustion": day.exhaustion, "alarm_target": day.alarm_target,
            "alarm_issue": day.alarm_issue, "lead_minutes": day.lead_minutes,
            "detected": day.detected, "false_alarm": day.false_alarm,
            "ems_flat": day.ems_flat,
            "skipped_targets": len(day.series.skipped)}


def _summary_text(report):
    m = report.metrics
    lines = [
        f"scenario: {report.scenario}",
        f"attacked test days: {m['attacked_days']}"
        f" (margin exhausted on {m['exhausted_days']})",
        f"normal test days: {m['normal_days']}",
        f"detected: {m['detected_days']}/{m['attacked_days']}"
        + (f" (rate {m['detection_rate']:.2f})"
           if m["detection_rate"] is not None else ""),
    ]
    if m["lead_minutes_min"] is not None:
        lines.append(f"alarm lead: median {m['lead_minutes_median']:.0f} min,"
                     f" min {m['lead_minutes_min']:.0f} min")
    lines += [
        f"false alarm days: {m['false_alarm_days']}/{m['normal_days']}",
        f"EMS-view margin flat on attacked days: {m['ems_view_flat']}",
        f"alarm threshold: {m['threshold']} p.u.",
        f"training windows: {m['train_windows']}"
        f" (support vectors {m['n_support_vectors']})",
    ]
    if "min_pairwise_correlation" in m:
        lines.append("min pairwise falsification correlation: "
                     f"{m['min_pairwise_correlation']:.3f}")
    if m["day_failures"]:
        lines.append(f"failed simulation days: {m['day_failures']}")
    return "\n".join(lines) + "\n"
