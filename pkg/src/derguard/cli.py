"""Command line front end.

Verbs:
  validate-net  parse a network file and print the topology report
  gen-data      simulate days and write the windowed dataset
  train         fit the margin predictor on a generated dataset
  detect        replay one stored day through a trained model
  scenario      full study loop, training plus held-out evaluation

Global flags: --config, --seed, --out, --jobs.  The output directory and
worker count also honor the DERGUARD_OUT and DERGUARD_JOBS environment
variables; an explicit flag wins over the environment.
"""

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from .errors import (AttackInfeasible, DispatchInfeasible, FormatError,
                     PowerFlowError, ValidationError)
from .network import fixture_path, load_network, validate_radial
from .scenario import (SCENARIOS, emit_report, evaluate_day, generate_dataset,
                       load_config, load_day_view, load_predicted,
                       run_scenario, train_from_dataset)
from .svr import load_model, save_model


def build_parser():
    parser = argparse.ArgumentParser(
        prog="derguard",
        description="DER dispatch falsification study pipeline")
    parser.add_argument("--config", help="INI config file")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", help="output directory "
                        "(default $DERGUARD_OUT or ./derguard-out)")
    parser.add_argument("--jobs", type=int,
                        help="day-level worker count (default $DERGUARD_JOBS"
                        " or 1)")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("validate-net", help="check a network file")
    p.add_argument("path", nargs="?", help="network file (default fixture)")

    sub.add_parser("gen-data", help="simulate days, write the dataset")

    p = sub.add_parser("train", help="train the margin predictor")
    p.add_argument("data", help="dataset directory from gen-data")

    p = sub.add_parser("detect", help="replay one day through a model")
    p.add_argument("model", help="model.npz from train or scenario")
    p.add_argument("day", help="day record npz from gen-data")

    p = sub.add_parser("scenario", help="run a named end-to-end scenario")
    p.add_argument("name", choices=SCENARIOS)
    return parser


def resolve(args):
    out = args.out or os.environ.get("DERGUARD_OUT") or "derguard-out"
    jobs = args.jobs
    if jobs is None:
        env = os.environ.get("DERGUARD_JOBS")
        jobs = int(env) if env else 1
    config = load_config(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    return config, out, jobs


def cmd_validate_net(args):
    path = args.path or fixture_path()
    network, fleet, profile = load_network(path)
    report = validate_radial(network)
    print(f"{path}: {len(network.nodes)} nodes, {len(network.lines)} lines, "
          f"root {network.root}, {len(network.sensor_nodes)} sensors")
    print(f"fleet: {len(fleet.generators)} generators, "
          f"{len(fleet.storage)} storage units; "
          f"profile horizon {profile.p.shape[1]} x {profile.dt_minutes:g} min")
    print("depth order:", " ".join(report.order))
    return 0


def cmd_gen_data(args, config, out, jobs):
    dataset = generate_dataset(config, out_dir=out, jobs=jobs)
    man = dataset.manifest
    print(f"dataset: {man['requested']} days requested, {man['failed']} "
          f"failed; {man['train_windows']} train and {man['test_windows']} "
          f"test windows -> {out}")
    return 0


def cmd_train(args, config, out):
    from .scenario import Dataset
    data = np.load(os.path.join(args.data, "dataset.npz"))
    dataset = Dataset(predicted=None, train_views=[], test_views=[],
                      x_train=data["x_train"], y_train=data["y_train"],
                      x_test=data["x_test"], y_test=data["y_test"])
    model = train_from_dataset(config, dataset)
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "model.npz")
    save_model(path, model)
    info = model.info
    print(f"trained on {info['n_train']} windows: "
          f"{len(model.coef)} support vectors, "
          f"{info['iterations']} iterations, converged={info['converged']}"
          f" -> {path}")
    return 0


def cmd_detect(args, config, out):
    model = load_model(args.model)
    view = load_day_view(args.day)
    predicted = load_predicted(
        os.path.join(os.path.dirname(args.day), "..", "predicted.npz"))
    result = evaluate_day(view, model, predicted, config)
    s = result.series
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, f"margins_{view.kind}_{view.index:03d}.csv")
    import csv
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["interval", "ems_view", "actual", "predicted", "alarm"])
        for t in s.intervals:
            pred = s.predicted[t]
            w.writerow([t, repr(float(s.ems_view[t])),
                        repr(float(s.actual[t])),
                        "" if np.isnan(pred) else repr(float(pred)),
                        int(s.alarm[t])])
    if result.alarm_issue is not None:
        print(f"{view.kind} day {view.index}: first alarm issued at interval "
              f"{result.alarm_issue} (target {result.alarm_target})")
    else:
        print(f"{view.kind} day {view.index}: no alarm")
    if result.exhaustion is not None:
        print(f"actual margin exhausted at interval {result.exhaustion}")
    print(f"margin series -> {path}")
    return 0


def cmd_scenario(args, config, out, jobs):
    report = run_scenario(config, scenario=args.name, out_dir=out, jobs=jobs)
    with open(os.path.join(out, "summary.txt")) as fh:
        sys.stdout.write(fh.read())
    print(f"report -> {out}")
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "validate-net":
            return cmd_validate_net(args)
        config, out, jobs = resolve(args)
        if args.verb == "gen-data":
            return cmd_gen_data(args, config, out, jobs)
        if args.verb == "train":
            return cmd_train(args, config, out)
        if args.verb == "detect":
            return cmd_detect(args, config, out)
        if args.verb == "scenario":
            return cmd_scenario(args, config, out, jobs)
        raise AssertionError(f"unhandled verb {args.verb}")
    except (ValidationError, FormatError, DispatchInfeasible,
            AttackInfeasible, PowerFlowError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
