"""Command-line entry points.

Exit codes: 0 success, 1 validation/configuration error, 2 runtime abort.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time as _time

from . import feasfilter
from .fleet import DeadlineMissError, PlanContractError
from .network import NetworkError, TravelTimeOracle, gen_grid
from .partition import (
    PartitionError,
    WeightedGraph,
    kway_partition,
    modularity,
    modularity_partition,
)
from .report import TraceError, report
from .sim import ConfigError, SimulationAbort, load_config, run_simulation

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """argparse that exits 1 (not 2) on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ridepool", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run a configured simulation")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--dump-rv", action="store_true")
    p_sim.add_argument("--dump-rtv", action="store_true")
    p_sim.add_argument("--dump-ilp", action="store_true")

    p_train = sub.add_parser("train-filter", help="train the feasibility filter from a sample log")
    p_train.add_argument("--samples", required=True)
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--lr", type=float, default=1e-2)
    p_train.add_argument("--batches", type=int, default=500)
    p_train.add_argument("--batch-size", type=int, default=64)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--rounds", type=int, default=3)
    p_train.add_argument("--dim", type=int, default=16)

    p_bench = sub.add_parser("partition-bench", help="benchmark partition methods on an RV dump")
    p_bench.add_argument("--rv", required=True)
    p_bench.add_argument("--k", default="2,4", help="comma-separated block counts")
    p_bench.add_argument("--methods", default="kway,modularity")
    p_bench.add_argument("--epsilon", type=float, default=0.05)
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--out", default=None, help="CSV path (default stdout)")

    p_gen = sub.add_parser("gen-synthetic", help="generate a grid scenario (network, requests, config)")
    p_gen.add_argument("--grid", nargs=2, type=int, metavar=("ROWS", "COLS"), required=True)
    p_gen.add_argument("--requests", type=int, required=True)
    p_gen.add_argument("--seed", type=int, required=True)
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--edge-time", type=int, default=30)
    p_gen.add_argument("--epochs", type=int, default=20)
    p_gen.add_argument("--epoch-length", type=int, default=60)
    p_gen.add_argument("--vehicles", type=int, default=30)
    p_gen.add_argument("--capacity", type=int, default=4)
    p_gen.add_argument("--max-wait", type=int, default=300)
    p_gen.add_argument("--max-delay", type=int, default=600)
    p_gen.add_argument("--budget-nodes", type=int, default=4000,
                       help="deterministic per-epoch budget written into the config")
    p_gen.add_argument("--max-vr-per-vehicle", type=int, default=12)

    p_rep = sub.add_parser("report", help="aggregate and compare run traces")
    p_rep.add_argument("--traces", nargs="+", required=True)
    p_rep.add_argument("--labels", nargs="*", default=None)
    p_rep.add_argument("--out", required=True)

    return parser


def _cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if args.dump_rv or args.dump_rtv or args.dump_ilp:
        from dataclasses import replace

        cfg = replace(cfg, dump_rv=args.dump_rv, dump_rtv=args.dump_rtv, dump_ilp=args.dump_ilp)
    result = run_simulation(cfg)
    m = result.metrics
    print(
        f"served {m.requests_served}/{m.requests_total} "
        f"(rate {m.service_rate:.3f}), mean wait {m.mean_wait_s:.1f}s, "
        f"mean occupancy {m.mean_occupancy:.3f}, empty travel {m.empty_travel_time_s}s"
    )
    if result.trace_path:
        print(f"trace: {result.trace_path}")
        print(f"summary: {result.summary_path}")
    return 0


def _cmd_train_filter(args) -> int:
    samples = feasfilter.read_samples(args.samples)
    hyper = feasfilter.TrainHyper(
        lr=args.lr, batches=args.batches, batch_size=args.batch_size,
        seed=args.seed, rounds=args.rounds, dim=args.dim,
    )
    rep = feasfilter.train(samples, hyper)
    rep.params.save(args.out)
    print(
        f"trained on {rep.n_samples} samples: final loss {rep.final_loss:.4f}, "
        f"ranking score {rep.ranking_score:.4f}"
    )
    print(f"params: {args.out}")
    return 0


def _cmd_partition_bench(args) -> int:
    with open(args.rv) as fh:
        dump = json.load(fh)
    nodes = [("r", rid) for rid in dump["request_ids"]]
    nodes += [("v", vid) for vid in dump["vehicle_ids"]]
    edges = [(("r", a), ("r", b), 1.0) for a, b in dump["rr_edges"]]
    edges += [(("v", v), ("r", r), 1.0) for v, r, _cost in dump["vr_edges"]]
    graph = WeightedGraph.build(nodes, edges)

    ks = [int(x) for x in args.k.split(",") if x]
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    rows = []
    for method in methods:
        if method not in ("kway", "modularity"):
            raise ConfigError(f"unknown method {method!r}")
        if method == "modularity":
            t0 = _time.monotonic()
            part = modularity_partition(graph, args.seed)
            ms = (_time.monotonic() - t0) * 1000
            rows.append([part.k, method, part.edge_cut, round(part.imbalance, 4),
                         round(modularity(graph, part), 4), round(ms, 2)])
        else:
            for k in ks:
                t0 = _time.monotonic()
                part = kway_partition(graph, k, args.epsilon, args.seed)
                ms = (_time.monotonic() - t0) * 1000
                rows.append([part.k, method, part.edge_cut, round(part.imbalance, 4),
                             round(modularity(graph, part), 4), round(ms, 2)])

    out_fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(out_fh)
        writer.writerow(["k", "method", "edge_cut", "imbalance", "modularity", "ms"])
        writer.writerows(rows)
    finally:
        if args.out:
            out_fh.close()
    return 0


def _cmd_gen_synthetic(args) -> int:
    rows, cols = args.grid
    os.makedirs(args.out, exist_ok=True)
    network = gen_grid(rows, cols, args.edge_time, args.seed)
    oracle = TravelTimeOracle(network)

    nodes_path = os.path.join(args.out, "nodes.csv")
    edges_path = os.path.join(args.out, "edges.csv")
    requests_path = os.path.join(args.out, "requests.csv")
    config_path = os.path.join(args.out, "config.json")

    with open(nodes_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node_id", "lat", "lon"])
        for node in sorted(network.nodes):
            lat, lon = network.coords[node]
            writer.writerow([node, f"{lat:.6f}", f"{lon:.6f}"])
    with open(edges_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["from", "to", "travel_time_s"])
        for u, v, w in network.edges:
            writer.writerow([u, v, w])

    from .sim import synthesize_requests

    horizon = args.epochs * args.epoch_length
    reqs = synthesize_requests(
        network, oracle, args.requests, horizon, args.max_wait, args.max_delay, args.seed,
    )
    with open(requests_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["request_id", "t_request_s", "origin_node", "dest_node"])
        for r in reqs:
            writer.writerow([r.id, r.t_request, r.origin, r.destination])

    config = {
        "network": {"files": {"nodes": nodes_path, "edges": edges_path}},
        "requests": {"file": requests_path},
        "fleet": {"n_vehicles": args.vehicles, "capacity": args.capacity, "seed": args.seed},
        "windows": {"max_wait_s": args.max_wait, "max_delay_s": args.max_delay},
        "n_epochs": args.epochs,
        "epoch_length_s": args.epoch_length,
        "budget": {"mode": "deterministic", "nodes": args.budget_nodes},
        "limits": {"max_vr_per_vehicle": args.max_vr_per_vehicle},
        "seed": args.seed,
        "output_dir": os.path.join(args.out, "run"),
    }
    with open(config_path, "w") as fh:
        json.dump(config, fh, indent=2)
    print(f"scenario written to {args.out} ({len(reqs)} requests); config: {config_path}")
    return 0


def _cmd_report(args) -> int:
    labels = args.labels if args.labels else None
    runs = report(args.traces, args.out, labels)
    for label, m in runs.items():
        print(f"{label}: served {m.requests_served}/{m.requests_total}, "
              f"occupancy {m.mean_occupancy:.3f}, empty travel {m.empty_travel_time_s}s")
    print(f"reports written to {args.out}")
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "train-filter": _cmd_train_filter,
    "partition-bench": _cmd_partition_bench,
    "gen-synthetic": _cmd_gen_synthetic,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("RIDEPOOL_LOG", "WARNING"))
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, NetworkError, TraceError, PartitionError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (SimulationAbort, DeadlineMissError, PlanContractError) as exc:
        print(f"runtime abort: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
