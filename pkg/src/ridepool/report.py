"""Trace post-processing: summaries, per-epoch tables, and run comparisons."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict
from typing import Optional, Sequence

from .sim import Metrics, aggregate_epochs


class TraceError(ValueError):
    pass


def read_trace(path: str) -> list[dict]:
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise TraceError(f"{path}:{lineno}: malformed record ({exc})") from None
    if not records:
        raise TraceError(f"{path}: no epochs")
    return records


EPOCH_COLUMNS = [
    "epoch", "now", "new_requests", "batch_size", "expired", "rr_edges", "vr_edges",
    "rv_travel_calls", "blocks", "dropped_cross_edges", "trips", "vrp_calls",
    "vrp_feasible", "gate_candidates", "cliques_skipped", "tripgen_truncated_vehicles",
    "ilp_edges", "solver_nodes", "solver_proved_optimal", "objective",
    "assigned_vehicles", "assigned_requests", "picked_up", "delivered", "pool_end",
    "wait_s_sum", "delay_s_sum", "moving_seconds", "empty_moving_seconds",
    "onboard_seconds", "vehicle_seconds",
]

COMPARISON_COLUMNS = [
    "run", "requests_total", "requests_served", "service_rate", "expired",
    "still_active", "delivered", "mean_wait_s", "mean_total_delay_s",
    "mean_occupancy", "empty_travel_time_s", "moving_time_s", "vrp_calls",
    "gate_candidates", "cliques_skipped", "dropped_cross_edges", "solver_nodes",
    "solver_proved_optimal_epochs", "tripgen_truncated_epochs",
]


def report(
    trace_paths: Sequence[str],
    out_dir: str,
    labels: Optional[Sequence[str]] = None,
) -> dict[str, Metrics]:
    """Aggregate traces and write summary.json, per_epoch.csv, comparison.csv.

    Returns the per-run aggregated metrics, keyed by run label.
    """
    if not trace_paths:
        raise TraceError("no traces given")
    if labels is None:
        labels = []
        for p in trace_paths:
            base = os.path.basename(os.path.dirname(p)) or os.path.basename(p)
            label = base
            n = 2
            while label in labels:
                label = f"{base}_{n}"
                n += 1
            labels.append(label)
    if len(labels) != len(trace_paths):
        raise TraceError("labels and traces differ in length")

    os.makedirs(out_dir, exist_ok=True)
    runs: dict[str, Metrics] = {}
    traces: dict[str, list[dict]] = {}
    for label, path in zip(labels, trace_paths):
        records = read_trace(path)
        traces[label] = records
        runs[label] = aggregate_epochs(records)

    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump({label: asdict(m) for label, m in runs.items()}, fh, indent=2, sort_keys=True)

    with open(os.path.join(out_dir, "per_epoch.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run"] + EPOCH_COLUMNS)
        for label in labels:
            for rec in traces[label]:
                writer.writerow([label] + [rec.get(col, "") for col in EPOCH_COLUMNS])

    with open(os.path.join(out_dir, "comparison.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(COMPARISON_COLUMNS)
        for label in labels:
            m = asdict(runs[label])
            writer.writerow([label] + [m[col] for col in COMPARISON_COLUMNS[1:]])

    return runs
