"""Run summaries and the cost-table report built from them."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from pathlib import Path

SUMMARY_SCHEMA = "taxirhc-summary/1"
SUMMARY_FIELDS = ["schema", "label", "arm", "mode", "beta", "horizon", "t2", "seed", "slots",
                  "fleet_size", "mean_mismatch_error", "total_idle_miles",
                  "idle_miles_per_taxi_hour", "served", "expired"]
METRICS_FIELDS = ["slot", "mismatch_error", "idle_miles"]
# the no-dispatch column is priced with this idle weight
BASELINE_BETA = 10.0


class ReportError(ValueError):
    pass


def total_cost(mismatch_error: float, idle_distance: float, beta: float) -> float:
    """Mismatch error plus ``beta`` times idle distance."""
    return mismatch_error + beta * idle_distance


def summary_row(label, arm, rhc_cfg, seed, metrics) -> dict:
    s = metrics.summary()
    beta = "" if rhc_cfg is None else ";".join(repr(float(b)) for b in rhc_cfg.betas())
    return {
        "schema": SUMMARY_SCHEMA,
        "label": label,
        "arm": arm,
        "mode": "" if rhc_cfg is None else rhc_cfg.mode,
        "beta": beta,
        "horizon": "" if rhc_cfg is None else rhc_cfg.horizon,
        "t2": s["t2"],
        "seed": seed,
        "slots": s["slots"],
        "fleet_size": s["fleet_size"],
        "mean_mismatch_error": repr(s["mean_mismatch_error"]),
        "total_idle_miles": repr(s["total_idle_miles"]),
        "idle_miles_per_taxi_hour": repr(s["idle_miles_per_taxi_hour"]),
        "served": s["served"],
        "expired": s["expired"],
    }


def write_summary(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS)
        w.writeheader()
        w.writerows(rows)


def read_summaries(paths) -> list[dict]:
    """Rows of one or more summary files; directories are searched for ``summary.csv``."""
    files = []
    for p in map(Path, paths):
        files.extend(sorted(p.rglob("summary.csv")) if p.is_dir() else [p])
    if not files:
        raise ReportError("no summary files given")
    rows = []
    for f in files:
        try:
            with open(f, newline="") as fh:
                reader = csv.DictReader(fh)
                header = reader.fieldnames or []
                if header != SUMMARY_FIELDS:
                    raise ReportError(f"{f}: not a summary file (header {','.join(header) or '<empty>'})")
                for row in reader:
                    if row["schema"] != SUMMARY_SCHEMA:
                        raise ReportError(f"{f}: unsupported schema {row['schema']!r}")
                    rows.append(row)
        except OSError as e:
            raise ReportError(f"{f}: {e.strerror}") from None
    if not rows:
        raise ReportError("summary files contain no runs")
    return rows


def aggregate(rows, baseline_beta: float = BASELINE_BETA) -> list[dict]:
    """Mean error and idle distance per (arm, label), priced into a total cost.

    Idle distance is idle miles per taxi-hour. A run whose beta is a schedule is
    priced with its first-step weight.
    """
    groups = defaultdict(list)
    for r in rows:
        groups[(r["arm"], r["label"], r["beta"], r["mode"])].append(r)
    out = []
    for (arm, label, beta, mode), rs in sorted(groups.items(), key=_order):
        err = math.fsum(float(r["mean_mismatch_error"]) for r in rs) / len(rs)
        idle = math.fsum(float(r["idle_miles_per_taxi_hour"]) for r in rs) / len(rs)
        b = float(beta.split(";")[0]) if beta else baseline_beta
        out.append({"arm": arm, "label": label, "mode": mode, "beta": b, "runs": len(rs),
                    "mismatch_error": err, "idle_distance": idle, "total_cost": total_cost(err, idle, b)})
    return out


def _order(item):
    (arm, label, beta, mode), _ = item
    return (arm != "baseline", float(beta.split(";")[0]) if beta else -1.0, label, mode)


def render_table(agg) -> str:
    lines = [f"{'arm':<10}{'label':<16}{'mode':<9}{'beta':>7}{'runs':>6}"
             f"{'s/d error':>12}{'idle dist':>12}{'total cost':>12}"]
    for a in agg:
        lines.append(f"{a['arm']:<10}{a['label']:<16}{a['mode']:<9}{a['beta']:>7g}{a['runs']:>6}"
                     f"{a['mismatch_error']:>12.3f}{a['idle_distance']:>12.3f}{a['total_cost']:>12.3f}")
    return "\n".join(lines)


def write_report(path, agg):
    fields = ["arm", "label", "mode", "beta", "runs", "mismatch_error", "idle_distance", "total_cost"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for a in agg:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in a.items()})


def read_metrics(path):
    """Per-slot metrics CSV -> (mismatch list, idle list)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != METRICS_FIELDS:
            raise ReportError(f"{path}: not a metrics file")
        rows = list(reader)
    return [float(r[1]) for r in rows], [float(r[2]) for r in rows]
