"""Operating-margin labels, detector features, and the rolling alarm loop.

The detector watches a trailing window of dispatch signals and voltage
telemetry and predicts the system operating margin a fixed lead ahead.
Margin accounting compares the realized resource trajectories against the
EMS schedule: deviations eat into the scheduled upward reserve on one side
and into the remaining downward capability on the other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

FEATURE_LAYOUT_VERSION = 1

DEFAULT_WINDOW = 36      # monitoring history, intervals (6 h at 10 min)
DEFAULT_LEAD = 12        # prediction horizon past the window end (2 h)
DEFAULT_THRESHOLD = 0.01  # alarm level, p.u.; 1 MW on the 100 MVA fixture base

MARGIN_MODES = ("headroom", "symmetric")


def storage_net(schedule):
    """Net grid-side storage output, discharge positive; (n_sto, n_t)."""
    return schedule.p_dis - schedule.p_ch


def feature_dimension(n_gens, n_nodes, n_storage, n_sensors, window,
                      include_reserve=False):
    per_interval = 2 * n_gens + 2 * n_nodes + 2 * n_storage + 2 * n_sensors
    if include_reserve:
        per_interval += 2 * n_gens
    return per_interval * window


def build_feature_vector(predicted, reported, v, theta, window,
                         include_reserve=False):
    """Assemble one detector input vector for a monitoring window.

    Layout (version 1), each block unit-major and interval-minor:
    predicted then reported generator output, predicted then reported
    curtailment over all nodes, predicted then reported net storage output,
    then sensor voltage magnitudes and angles.  `predicted` is the day-ahead
    schedule, `reported` the intraday schedule as seen on the uplink.  The
    optional reserve blocks (predicted then reported) append at the end so
    the base layout stays stable.
    """
    w = np.asarray(tuple(window), dtype=int)
    if w.size == 0:
        raise ValidationError("monitoring window is empty")
    if (predicted.gen_ids != reported.gen_ids
            or predicted.node_ids != reported.node_ids
            or predicted.sto_ids != reported.sto_ids):
        raise ValidationError("predicted and reported schedules disagree on fleet")
    v = np.asarray(v, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if v.shape != theta.shape:
        raise ValidationError("voltage and angle telemetry have different shapes")
    avail = min(predicted.n_t, reported.n_t, v.shape[1])
    if w.min() < 0 or w.max() >= avail:
        raise ValidationError(
            f"window [{w.min()}, {w.max()}] extends beyond available data "
            f"({avail} intervals)")
    blocks = [
        predicted.g_p[:, w].ravel(), reported.g_p[:, w].ravel(),
        predicted.d_curt[:, w].ravel(), reported.d_curt[:, w].ravel(),
        storage_net(predicted)[:, w].ravel(), storage_net(reported)[:, w].ravel(),
        v[:, w].ravel(), theta[:, w].ravel(),
    ]
    if include_reserve:
        blocks += [predicted.r[:, w].ravel(), reported.r[:, w].ravel()]
    return np.concatenate(blocks)


# ---------------------------------------------------------------------------
# operating margin

def margin_series(schedule, actual, fleet, profile, mode="headroom"):
    """Margin per interval: min of remaining upward and downward reserve.

    Deviation is the fleet-wide sum of (actual - scheduled) over generator
    output, net storage output, and curtailment; positive deviation consumes
    the scheduled upward reserve, negative deviation the downward capability.
    mode "headroom" derives the downward side from the realized trajectories:
    ramp- and floor-limited generator backoff, storage recharge headroom
    (power and remaining energy room), and recall of scheduled curtailment.
    mode "symmetric" reuses the scheduled upward reserve on both sides.
    """
    if mode not in MARGIN_MODES:
        raise ValidationError(f"unknown margin mode '{mode}'")
    if (schedule.gen_ids != actual.gen_ids or schedule.sto_ids != actual.sto_ids
            or schedule.node_ids != actual.node_ids):
        raise ValidationError("schedule and actual run disagree on fleet")
    dev = (actual.g_p - schedule.g_p).sum(axis=0)
    dev += (storage_net(actual) - storage_net(schedule)).sum(axis=0)
    dev += (actual.d_curt - schedule.d_curt).sum(axis=0)
    r_up = schedule.r.sum(axis=0)
    if mode == "symmetric":
        r_dn = r_up
    else:
        r_dn = np.zeros(schedule.n_t)
        for gi, gid in enumerate(actual.gen_ids):
            gen = fleet.generator(gid)
            if not gen.flexible:
                continue
            room = np.minimum(actual.g_p[gi] - gen.p_min, abs(gen.ramp_dn))
            r_dn = r_dn + np.maximum(room, 0.0)
        for si, sid in enumerate(actual.sto_ids):
            sto = fleet.storage_unit(sid)
            net = actual.p_dis[si] - actual.p_ch[si]
            power_room = net + sto.p_max / sto.eff_ch
            energy_room = (sto.e_max - actual.e[si]) / sto.eff_ch
            r_dn = r_dn + np.maximum(np.minimum(power_room, energy_room), 0.0)
        for ni, node in enumerate(actual.node_ids):
            pi = profile.node_index(node)
            recall = actual.d_curt[ni] - profile.curtail_min[pi]
            r_dn = r_dn + np.maximum(recall, 0.0)
    return np.minimum(r_up - dev, r_dn + dev)


def compute_margin(schedule, actual, fleet, profile, t, mode="headroom"):
    """Scalar margin at interval t; see margin_series."""
    return float(margin_series(schedule, actual, fleet, profile, mode=mode)[t])


def ems_margin_series(schedule, fleet, profile, mode="headroom"):
    """Margin as the EMS sees it: uplink matches the schedule, zero deviation."""
    return margin_series(schedule, schedule, fleet, profile, mode=mode)


# ---------------------------------------------------------------------------
# training windows and rolling detection

def day_windows(predicted, reported, v, theta, margin, window=DEFAULT_WINDOW,
                lead=DEFAULT_LEAD, stride=1, include_reserve=False):
    """Feature rows and margin labels for every feasible target in one day.

    Target t uses the window [t - lead - window, t - lead); the first
    window + lead intervals of a day carry no sample.  Returns
    (features, labels, targets).
    """
    if stride < 1:
        raise ValidationError("stride must be >= 1")
    margin = np.asarray(margin, dtype=float)
    rows, labels, targets = [], [], []
    for t in range(window + lead, margin.size, stride):
        rows.append(build_feature_vector(
            predicted, reported, v, theta, range(t - lead - window, t - lead),
            include_reserve=include_reserve))
        labels.append(margin[t])
        targets.append(t)
    n_cols = rows[0].size if rows else feature_dimension(
        len(predicted.gen_ids), len(predicted.node_ids),
        len(predicted.sto_ids), np.asarray(v).shape[0], window, include_reserve)
    return (np.asarray(rows, dtype=float).reshape(len(rows), n_cols),
            np.asarray(labels, dtype=float), tuple(targets))


@dataclass
class MarginSeries:
    """Per-interval detection record for one day.

    predicted is NaN wherever no full monitoring window precedes the target;
    alarm holds exactly where predicted < threshold.  The series ends where
    actual margin data ends (telemetry stops recording at an outage).
    """

    intervals: tuple
    ems_view: np.ndarray
    actual: np.ndarray
    predicted: np.ndarray
    alarm: np.ndarray
    threshold: float
    skipped: tuple           # targets without a full history window

    @property
    def first_alarm(self):
        hits = np.flatnonzero(self.alarm)
        return int(self.intervals[hits[0]]) if hits.size else None


def run_detection(model, predicted, reported, v, theta, actual_margin,
                  ems_margin, threshold=DEFAULT_THRESHOLD,
                  window=DEFAULT_WINDOW, lead=DEFAULT_LEAD,
                  include_reserve=False):
    """Roll the margin predictor across a day and flag threshold crossings.

    At each target interval the model sees the trailing `window` intervals
    ending `lead` intervals earlier, exactly as during training.  The
    detector reads only uplink-visible signals; realized margins enter the
    record for scoring, never the feature path.
    """
    actual_margin = np.asarray(actual_margin, dtype=float)
    ems_margin = np.asarray(ems_margin, dtype=float)
    n = actual_margin.size
    preds = np.full(n, np.nan)
    skipped = []
    rows, targets = [], []
    for t in range(n):
        start = t - lead - window
        if start < 0:
            skipped.append(t)
            continue
        rows.append(build_feature_vector(
            predicted, reported, v, theta, range(start, t - lead),
            include_reserve=include_reserve))
        targets.append(t)
    if rows:
        preds[targets] = model.predict(np.asarray(rows, dtype=float))
    alarm = preds < threshold       # NaN compares False: no window, no alarm
    return MarginSeries(
        intervals=tuple(range(n)), ems_view=ems_margin[:n].copy(),
        actual=actual_margin.copy(), predicted=preds, alarm=alarm,
        threshold=float(threshold), skipped=tuple(skipped),
    )
