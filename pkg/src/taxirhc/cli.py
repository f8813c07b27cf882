"""Command-line entry point: ``estimate``, ``dispatch``, ``simulate``, ``report``.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 infeasible
one-shot dispatch.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import report as rpt
from .config import ConfigError, load_config, parse_assignment, parse_sweep
from .demand import DemandModel, estimate_from_traces
from .dispatch import DispatchInfeasible, solve_dispatch
from .geo import generate_stations
from .rhc import FleetSnapshot, RhcState, build_instance, refresh_demand
from .seeding import derive_seed
from .sim import (compare_metrics, model_from_scenario, run_baseline, run_dispatch_sim,
                  run_replay_baseline, scenario_from_model, synthesize_scenario)
from .trace import TraceParseError, load_trace_dir

log = logging.getLogger("taxirhc")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INFEASIBLE = 0, 1, 2, 3


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p):
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--seed", type=int, help="root random seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--mode", choices=["nominal", "robust"])
    p.add_argument("--beta", type=float, help="idle-distance weight for every horizon step")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key, e.g. clock.horizon=4")


def build_parser():
    ap = _Parser(prog="taxirhc", description="Receding-horizon taxi dispatch toolkit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("estimate", help="bootstrap a demand model from a trace directory")
    _common(p)
    p.add_argument("trace_dir", nargs="?", help="directory of per-taxi trace files")
    p.add_argument("--days", choices=["all", "weekday", "weekend"])

    p = sub.add_parser("dispatch", help="solve one dispatch step for a fleet snapshot")
    _common(p)
    p.add_argument("--model", required=True, help="demand model file")
    p.add_argument("--fleet", required=True, help="CSV with taxi_id,lat,lon,occupied")
    p.add_argument("--period", type=int, default=1, help="1-based t2 period of the day")

    p = sub.add_parser("simulate", help="run dispatch and baseline arms on a scenario")
    _common(p)
    p.add_argument("--sweep", action="append", default=[], metavar="KEY=V1,V2,...",
                   help="sweep beta, alpha, T, t2 or mode")
    p.add_argument("--repeat", type=int, default=1, help="run seeds seed..seed+repeat-1")
    p.add_argument("--days", choices=["all", "weekday", "weekend"])
    p.add_argument("--jobs", type=int, default=1, help="parallel sweep workers")

    p = sub.add_parser("report", help="summarise simulate outputs into the cost table")
    p.add_argument("inputs", nargs="+", help="summary.csv files or directories holding them")
    p.add_argument("--out", help="write report.csv here")
    p.add_argument("--baseline-beta", type=float, default=rpt.BASELINE_BETA,
                   help="idle weight used to price the no-dispatch arm")
    return ap


def _config(args):
    overrides = [parse_assignment(s) for s in args.set]
    for flag, key in (("seed", "seed"), ("out", "out"), ("mode", "dispatch.mode"),
                      ("beta", "dispatch.beta"), ("days", "estimate.days")):
        v = getattr(args, flag, None)
        if v is not None:
            overrides.append((key, v))
    return load_config(args.config, overrides)


def _load_traces(path):
    if path is None:
        raise ConfigError("traces: no trace directory given (argument or config key)")
    try:
        records = load_trace_dir(path)
    except OSError as e:
        raise DataError(f"cannot read trace directory {path}: {e.strerror or e}") from None
    except TraceParseError as e:
        raise DataError(str(e)) from None
    if not any(records.values()):
        raise DataError(f"trace directory {path} holds no records")
    return records


def _estimate_model(cfg, records):
    c, e = cfg.data["clock"], cfg.data["estimate"]
    try:
        return estimate_from_traces(records, cfg.grid(), c["t1"], c["t2"], e["B"],
                                    derive_seed(cfg.seed, "bootstrap"), e["multiplier"],
                                    e["days"], e["day_offset"])
    except ValueError as err:
        raise DataError(str(err)) from None


def cmd_estimate(args) -> int:
    cfg = _config(args)
    records = _load_traces(args.trace_dir or cfg.get("traces"))
    model = _estimate_model(cfg, records)
    out = Path(cfg.get("out"))
    out.mkdir(parents=True, exist_ok=True)
    model.save(out / "model.json")
    print(f"{'slot':>4} {'demand':>10} {'low':>10} {'high':>10} {'dropoffs':>10}")
    for h in range(model.r_mean.shape[0]):
        print(f"{h + 1:>4} {model.r_mean[h].sum():>10.3f} {model.r_lo[h].sum():>10.3f} "
              f"{model.r_hi[h].sum():>10.3f} {model.dp_mean[h].sum():>10.3f}")
    print(f"wrote {out / 'model.json'}")
    return EXIT_OK


def _load_model(path) -> DemandModel:
    try:
        return DemandModel.load(path)
    except OSError as e:
        raise DataError(f"cannot read model {path}: {e.strerror}") from None
    except (ValueError, KeyError) as e:
        raise DataError(f"{path}: invalid demand model ({e})") from None


def load_fleet(path):
    """Fleet snapshot CSV ``taxi_id,lat,lon,occupied`` -> (vacant ids, positions, occupied count)."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as e:
        raise DataError(f"cannot read fleet snapshot {path}: {e.strerror}") from None
    ids, pos, occupied = [], [], 0
    for i, r in enumerate(rows, start=2):
        try:
            lat, lon, occ = float(r["lat"]), float(r["lon"]), int(r["occupied"])
            tid = r["taxi_id"]
        except (KeyError, TypeError, ValueError):
            raise DataError(f"{path}:{i}: expected taxi_id,lat,lon,occupied") from None
        if occ not in (0, 1) or not (np.isfinite(lat) and np.isfinite(lon)):
            raise DataError(f"{path}:{i}: bad position or occupancy flag")
        if occ:
            occupied += 1
        else:
            ids.append(tid)
            pos.append((lat, lon))
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate taxi ids")
    return ids, np.array(pos).reshape(-1, 2), occupied


def cmd_dispatch(args) -> int:
    cfg = _config(args)
    grid, rc = cfg.grid(), cfg.rhc()
    model = _load_model(args.model)
    if model.n != grid.n:
        raise DataError(f"model {args.model} has {model.n} regions but the grid "
                        f"({grid.rows}x{grid.cols}) has {grid.n}")
    if model.t1 != rc.t1:
        raise DataError(f"model {args.model} uses t1={model.t1} but clock.t1={rc.t1}")
    if not 1 <= args.period <= rc.slots_per_day:
        raise ConfigError(f"--period: must lie in 1..{rc.slots_per_day}")
    ids, pos, occupied = load_fleet(args.fleet)
    if not ids:
        raise DataError(f"{args.fleet}: no vacant taxis to dispatch")
    fleet = FleetSnapshot(ids, pos, occupied)
    stations = generate_stations(grid, len(ids), derive_seed(cfg.seed, "stations"), ids)
    state = refresh_demand(RhcState(h2=args.period), model, rc, occupied)
    regions = grid.locate(pos[:, 0], pos[:, 1])
    inst = build_instance(state, fleet, model, rc, stations, regions)
    if inst is None:
        raise DataError("no demand over the horizon; nothing to dispatch")
    try:
        plan = solve_dispatch(inst, tol=rc.lp_tol, max_iters=rc.max_iters)
    except DispatchInfeasible as e:
        print(f"infeasible: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE

    out = Path(cfg.get("out"))
    out.mkdir(parents=True, exist_ok=True)
    W = inst.stations
    with open(out / "plan.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["taxi_id", "from_region", "to_region", "target_lat", "target_lon", "distance_deg"])
        for i, (tid, reg) in enumerate(zip(ids, plan.regions)):
            tgt = W[i, reg]
            w.writerow([tid, int(regions[i]) + 1, int(reg) + 1, repr(float(tgt[0])), repr(float(tgt[1])),
                        repr(float(np.abs(pos[i] - tgt).sum()))])
    obj = plan.objective
    lines = [f"mode {rc.mode}", f"taxis {inst.N}", f"regions {inst.n}", f"horizon {inst.T}",
             f"lp_objective {plan.lp_objective!r}", f"mismatch {obj.JE!r}", f"idle_distance {obj.JD!r}",
             f"total {obj.total!r}", f"alpha_slack {plan.alpha_slack!r}"]
    (out / "plan_summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    print(f"wrote {out / 'plan.csv'}")
    return EXIT_OK


def _sweep_points(cfg, sweeps):
    """Cartesian product of sweep values -> [(label, config)]."""
    if not sweeps:
        return [("base", cfg)]
    parsed = [parse_sweep(s) for s in sweeps]
    points = []
    for combo in itertools.product(*[[(k, v) for v in vals] for k, vals in parsed]):
        c = cfg
        for k, v in combo:
            c = c.with_value(k, v)
        label = "_".join(f"{k.split('.')[-1]}={v}" for k, v in combo)
        points.append((label, c))
    return points


def _prepare_source(cfg, seed):
    """Scenario and demand model for one seed."""
    rc, sc_cfg = cfg.rhc(), cfg.data["scenario"]
    grid = cfg.grid()
    if cfg.get("model") is not None or cfg.get("traces") is not None:
        if cfg.get("model") is not None:
            model = _load_model(cfg.get("model"))
        else:
            model = _estimate_model(cfg, _load_traces(cfg.get("traces")))
        if model.n != grid.n:
            raise DataError(f"model has {model.n} regions but the grid has {grid.n}")
        sc = scenario_from_model(model, grid, sc_cfg["fleet_size"], derive_seed(seed, "scenario"),
                                 sc_cfg["days"])
        return sc, model
    sc = synthesize_scenario(grid, sc_cfg["fleet_size"], cfg.scenario_rates(), None, rc.t1,
                             derive_seed(seed, "scenario"), sc_cfg["days"])
    model = model_from_scenario(sc, rc.t1, rc.t2, sc_cfg["history_days"], sc_cfg["history_B"],
                                derive_seed(seed, "history"), cfg.get("estimate.multiplier"))
    return sc, model


def run_point(label, cfg, seed, out):
    """One sweep point and seed: both arms, all artifacts. Returns the summary rows."""
    rc, sc_cfg, mpd = cfg.rhc(), cfg.data["scenario"], cfg.get("miles_per_degree")
    sc, model = _prepare_source(cfg, seed)
    res = run_dispatch_sim(sc, model, rc, trip_ticks=sc_cfg["trip_ticks"], miles_per_degree=mpd)
    base = run_baseline(sc, rc.t2, sc_cfg["trip_ticks"], mpd)
    out.mkdir(parents=True, exist_ok=True)
    res.metrics.to_csv(out / "metrics_dispatch.csv")
    base.to_csv(out / "metrics_baseline.csv")
    res.write_orders(out / "orders.csv")
    rows = [rpt.summary_row(label, "baseline", None, seed, base),
            rpt.summary_row(label, "dispatch", rc, seed, res.metrics)]
    rpt.write_summary(out / "summary.csv", rows)
    cmp = compare_metrics(base, res.metrics)
    with open(out / "comparison.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(cmp))
        w.writerow([repr(float(v)) for v in cmp.values()])
    text = (f"{label} seed {seed}: idle {cmp['reference_idle_miles']:.3f} -> "
            f"{cmp['candidate_idle_miles']:.3f} mi ({cmp['idle_change_pct']:+.1f}%), mismatch "
            f"{cmp['reference_mismatch']:.4f} -> {cmp['candidate_mismatch']:.4f} "
            f"({cmp['mismatch_change_pct']:+.1f}%)")
    (out / "comparison.txt").write_text(text + "\n")
    return text


def cmd_simulate(args) -> int:
    cfg = _config(args)
    if args.repeat < 1 or args.jobs < 1:
        raise ConfigError("--repeat and --jobs must be at least 1")
    points = _sweep_points(cfg, args.sweep)
    out = Path(cfg.get("out"))
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(cfg.dump())
    if cfg.get("traces") is not None:
        replay = run_replay_baseline(_load_traces(cfg.get("traces")), cfg.grid(), cfg.rhc().t2,
                                     cfg.get("estimate.day_offset"), cfg.get("miles_per_degree"))
        replay.to_csv(out / "metrics_replay.csv")
    jobs = [(label, c, cfg.seed + r, out / label / f"seed-{cfg.seed + r}")
            for label, c in points for r in range(args.repeat)]
    if args.jobs == 1 or len(jobs) == 1:
        texts = [run_point(*j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            texts = list(ex.map(run_point, *zip(*jobs)))
    for t in texts:
        print(t)
    return EXIT_OK


def cmd_report(args) -> int:
    rows = rpt.read_summaries(args.inputs)
    agg = rpt.aggregate(rows, args.baseline_beta)
    print(rpt.render_table(agg))
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        rpt.write_report(Path(args.out) / "report.csv", agg)
    return EXIT_OK


COMMANDS = {"estimate": cmd_estimate, "dispatch": cmd_dispatch, "simulate": cmd_simulate,
            "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, rpt.ReportError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
