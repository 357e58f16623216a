"""Deterministic epoch-driven simulation loop, configuration, and metrics.

Each epoch: snapshot the fleet, batch active requests, build the
shareability graph, optionally partition it, enumerate verified trips under
the epoch budget, solve the assignment problem with the anytime solver,
commit routes, and advance the fleet. In deterministic mode every budget is
counted in solver branch nodes / travel calls, so runs are byte-reproducible
for any worker count.
"""

from __future__ import annotations

import json
import logging
import os
import random
import time as _time
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

from . import assign, feasfilter
from ._par import ordered_map
from .demand import Request, RequestBatch, batch_by_epoch, load_requests_csv, make_request, _trip_time_p95
from .fleet import (
    PICKUP,
    DeadlineMissError,
    PlanContractError,
    Vehicle,
    advance,
    apply_assignment,
    keep_onboard_only,
    place_fleet,
)
from .network import RoadNetwork, TravelTimeOracle, gen_grid, load_network
from .partition import (
    kway_partition,
    modularity_partition,
    rv_to_weighted_graph,
    split_rv,
)
from .shareability import RVGraph, RVLimits, build_rv
from .tripgen import (
    CandidateFilter,
    ChainFilter,
    RTVGraph,
    TripBudgets,
    TripGenCounters,
    build_rtv,
)
from ._kernels import KERNEL

logger = logging.getLogger(__name__)

DEFAULT_NODE_BUDGET = 200_000  # deterministic analog of the 30 s wall budget
DEFAULT_PENALTY_S = 24 * 3600


class ConfigError(ValueError):
    """Invalid simulation configuration."""


class SimulationAbort(RuntimeError):
    """An epoch invariant was violated; carries the epoch index."""


def _check_keys(d: dict, allowed: set, context: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"{context}: unknown key(s) {sorted(unknown)}")


@dataclass(frozen=True)
class GridSpec:
    rows: int
    cols: int
    edge_time_s: int = 30
    seed: int = 0


@dataclass(frozen=True)
class NetworkSpec:
    grid: Optional[GridSpec] = None
    nodes_file: Optional[str] = None
    edges_file: Optional[str] = None


@dataclass(frozen=True)
class SyntheticDemandSpec:
    rate_per_epoch: int
    seed: int = 0


@dataclass(frozen=True)
class DemandSpec:
    file: Optional[str] = None
    synthetic: Optional[SyntheticDemandSpec] = None


@dataclass(frozen=True)
class FleetSpec:
    n_vehicles: int
    capacity: int
    seed: int = 0


@dataclass(frozen=True)
class BudgetSpec:
    mode: str = "deterministic"  # deterministic | realtime
    nodes: int = DEFAULT_NODE_BUDGET
    ms: int = 30_000


@dataclass(frozen=True)
class FilterSpec:
    enabled: bool = False
    threshold: float = 0.0
    min_applied_size: int = 2
    params_file: Optional[str] = None
    sample_log: Optional[str] = None


@dataclass(frozen=True)
class RandomDropConfig:
    drop_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.drop_rate <= 1.0:
            raise ConfigError(f"drop_rate must be in [0,1], got {self.drop_rate}")


@dataclass(frozen=True)
class PartitionSpec:
    method: str = "none"  # none | kway | modularity
    k: int = 0  # 0 = use worker count
    epsilon: float = 0.05
    seed: int = 0
    weight_vr_by_cost: bool = False


@dataclass(frozen=True)
class LimitsSpec:
    max_vr_per_vehicle: int = 30
    max_trips_per_vehicle: int = 0


@dataclass(frozen=True)
class WindowSpec:
    max_wait_s: int
    max_delay_s: int


@dataclass(frozen=True)
class SimConfig:
    network: NetworkSpec
    requests: DemandSpec
    fleet: FleetSpec
    windows: WindowSpec
    n_epochs: int
    epoch_length_s: int = 60
    budget: BudgetSpec = BudgetSpec()
    trip_gen_fraction: float = 0.5
    filter: FilterSpec = FilterSpec()
    random_drop: RandomDropConfig = RandomDropConfig()
    partition: PartitionSpec = PartitionSpec()
    limits: LimitsSpec = LimitsSpec()
    workers: int = 1
    seed: int = 0
    unassigned_penalty_s: int = DEFAULT_PENALTY_S
    output_dir: Optional[str] = None
    dump_rv: bool = False
    dump_rtv: bool = False
    dump_ilp: bool = False

    def __post_init__(self):
        if self.n_epochs < 1:
            raise ConfigError("n_epochs must be >= 1")
        if self.epoch_length_s < 1:
            raise ConfigError("epoch_length_s must be >= 1")
        if not 0.0 < self.trip_gen_fraction < 1.0:
            raise ConfigError("trip_gen_fraction must be in (0,1)")
        if self.budget.mode not in ("deterministic", "realtime"):
            raise ConfigError(f"unknown budget mode {self.budget.mode!r}")
        if self.budget.mode == "realtime" and self.budget.ms >= self.epoch_length_s * 1000:
            raise ConfigError("realtime budget must be below the epoch length")
        if self.partition.method not in ("none", "kway", "modularity"):
            raise ConfigError(f"unknown partition method {self.partition.method!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.windows.max_wait_s < 0 or self.windows.max_delay_s < 0:
            raise ConfigError("windows must be non-negative")


def config_from_dict(doc: dict) -> SimConfig:
    _check_keys(doc, {
        "network", "requests", "fleet", "windows", "n_epochs", "epoch_length_s",
        "budget", "trip_gen_fraction", "filter", "random_drop", "partition",
        "limits", "workers", "seed", "unassigned_penalty_s", "output_dir",
    }, "config")
    for key in ("network", "requests", "fleet", "windows", "n_epochs"):
        if key not in doc:
            raise ConfigError(f"config: missing mandatory key {key!r}")

    net = doc["network"]
    _check_keys(net, {"grid", "files"}, "network")
    if ("grid" in net) == ("files" in net):
        raise ConfigError("network: exactly one of 'grid' or 'files' required")
    if "grid" in net:
        _check_keys(net["grid"], {"rows", "cols", "edge_time_s", "seed"}, "network.grid")
        network = NetworkSpec(grid=GridSpec(**net["grid"]))
    else:
        _check_keys(net["files"], {"nodes", "edges"}, "network.files")
        network = NetworkSpec(nodes_file=net["files"]["nodes"], edges_file=net["files"]["edges"])

    dem = doc["requests"]
    _check_keys(dem, {"file", "synthetic"}, "requests")
    if ("file" in dem) == ("synthetic" in dem):
        raise ConfigError("requests: exactly one of 'file' or 'synthetic' required")
    if "file" in dem:
        demand = DemandSpec(file=dem["file"])
    else:
        _check_keys(dem["synthetic"], {"rate_per_epoch", "seed"}, "requests.synthetic")
        demand = DemandSpec(synthetic=SyntheticDemandSpec(**dem["synthetic"]))

    _check_keys(doc["fleet"], {"n_vehicles", "capacity", "seed"}, "fleet")
    _check_keys(doc["windows"], {"max_wait_s", "max_delay_s"}, "windows")

    kwargs = {}
    if "budget" in doc:
        _check_keys(doc["budget"], {"mode", "nodes", "ms"}, "budget")
        kwargs["budget"] = BudgetSpec(**doc["budget"])
    if "filter" in doc:
        _check_keys(doc["filter"], {"enabled", "threshold", "min_applied_size", "params_file", "sample_log"}, "filter")
        kwargs["filter"] = FilterSpec(**doc["filter"])
    if "random_drop" in doc:
        _check_keys(doc["random_drop"], {"drop_rate", "seed"}, "random_drop")
        kwargs["random_drop"] = RandomDropConfig(**doc["random_drop"])
    if "partition" in doc:
        _check_keys(doc["partition"], {"method", "k", "epsilon", "seed", "weight_vr_by_cost"}, "partition")
        kwargs["partition"] = PartitionSpec(**doc["partition"])
    if "limits" in doc:
        _check_keys(doc["limits"], {"max_vr_per_vehicle", "max_trips_per_vehicle"}, "limits")
        kwargs["limits"] = LimitsSpec(**doc["limits"])
    for key in ("n_epochs", "epoch_length_s", "trip_gen_fraction", "workers", "seed",
                "unassigned_penalty_s", "output_dir"):
        if key in doc:
            kwargs[key] = doc[key]
    kwargs["n_epochs"] = doc["n_epochs"]

    return SimConfig(
        network=network,
        requests=demand,
        fleet=FleetSpec(**doc["fleet"]),
        windows=WindowSpec(**doc["windows"]),
        **kwargs,
    )


def load_config(path: str) -> SimConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(doc)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


@dataclass
class Metrics:
    """Final run aggregates.

    still_active counts requests that were activated but neither picked up
    nor expired by the last epoch's expiry check. mean_occupancy is the
    time-weighted mean onboard count over all vehicle-seconds.
    """

    requests_total: int = 0
    requests_served: int = 0
    service_rate: float = 0.0
    expired: int = 0
    still_active: int = 0
    delivered: int = 0
    mean_wait_s: float = 0.0
    mean_total_delay_s: float = 0.0
    mean_occupancy: float = 0.0
    empty_travel_time_s: int = 0
    moving_time_s: int = 0
    vehicle_seconds: int = 0
    vrp_calls: int = 0
    rv_travel_calls: int = 0
    gate_candidates: int = 0
    cliques_skipped: int = 0
    dropped_cross_edges: int = 0
    solver_nodes: int = 0
    solver_proved_optimal_epochs: int = 0
    solver_budget_hit_epochs: int = 0
    tripgen_truncated_epochs: int = 0

    def validate(self, max_capacity: int) -> list[str]:
        problems = []
        if self.requests_served > self.requests_total:
            problems.append("served exceeds total")
        expected_rate = (
            self.requests_served / self.requests_total if self.requests_total else 0.0
        )
        if self.service_rate != expected_rate:
            problems.append("service_rate inconsistent")
        if self.requests_total != self.requests_served + self.expired + self.still_active:
            problems.append("conservation violated: total != served + expired + still_active")
        if self.mean_occupancy > max_capacity:
            problems.append("mean occupancy exceeds capacity")
        if min(self.empty_travel_time_s, self.moving_time_s, self.mean_wait_s,
               self.mean_total_delay_s) < 0:
            problems.append("negative time aggregate")
        return problems


def aggregate_epochs(records: Sequence[dict]) -> Metrics:
    """Rebuild final metrics from per-epoch trace records."""
    if not records:
        raise ValueError("no epochs")
    m = Metrics()
    wait_sum = delay_sum = onboard_s = 0
    for r in records:
        m.requests_total += r["new_requests"]
        m.requests_served += r["picked_up"]
        m.expired += r["expired"]
        m.delivered += r["delivered"]
        wait_sum += r["wait_s_sum"]
        delay_sum += r["delay_s_sum"]
        onboard_s += r["onboard_seconds"]
        m.vehicle_seconds += r["vehicle_seconds"]
        m.empty_travel_time_s += r["empty_moving_seconds"]
        m.moving_time_s += r["moving_seconds"]
        m.vrp_calls += r["vrp_calls"]
        m.rv_travel_calls += r["rv_travel_calls"]
        m.gate_candidates += r["gate_candidates"]
        m.cliques_skipped += r["cliques_skipped"]
        m.dropped_cross_edges += r["dropped_cross_edges"]
        m.solver_nodes += r["solver_nodes"]
        m.solver_proved_optimal_epochs += int(r["solver_proved_optimal"])
        m.solver_budget_hit_epochs += int(not r["solver_proved_optimal"])
        m.tripgen_truncated_epochs += int(r["tripgen_truncated_vehicles"] > 0)
    m.still_active = m.requests_total - m.requests_served - m.expired
    m.service_rate = m.requests_served / m.requests_total if m.requests_total else 0.0
    m.mean_wait_s = wait_sum / m.requests_served if m.requests_served else 0.0
    m.mean_total_delay_s = delay_sum / m.delivered if m.delivered else 0.0
    m.mean_occupancy = onboard_s / m.vehicle_seconds if m.vehicle_seconds else 0.0
    return m


# ---------------------------------------------------------------------------
# candidate filters
# ---------------------------------------------------------------------------


def _mix_key(*parts: int) -> int:
    """Deterministic integer key from a sequence of integers."""
    h = 0
    for p in parts:
        h = (h * 1_000_003 + p + 0x9E3779B9) % (1 << 63)
    return h


class RandomDropFilter(CandidateFilter):
    """Skips size >= 2 candidates independently with a fixed probability.

    The decision for a candidate is drawn from a stream keyed on (seed,
    epoch time, vehicle, request ids), so it is independent of evaluation
    order and therefore stable under parallelism.
    """

    def __init__(self, cfg: RandomDropConfig):
        self.cfg = cfg

    def gate(self, vehicle, requests, now):
        if len(requests) < 2 or self.cfg.drop_rate <= 0.0:
            return False
        key = _mix_key(self.cfg.seed, now, vehicle.id, *(r.id for r in requests))
        return random.Random(key).random() < self.cfg.drop_rate


def random_drop_hook(cfg: RandomDropConfig) -> CandidateFilter:
    return RandomDropFilter(cfg)


class LearnedGateFilter(CandidateFilter):
    """Featurize + predict + threshold; size-1 candidates are never gated."""

    def __init__(self, params: feasfilter.EmbeddingParams, cfg: feasfilter.FilterConfig,
                 scaling: feasfilter.FeatureScaling, oracle: TravelTimeOracle):
        self.params = params
        self.cfg = cfg
        self.scaling = scaling
        self.oracle = oracle

    def gate(self, vehicle, requests, now):
        if not self.cfg.enabled or len(requests) < self.cfg.min_applied_size:
            return False
        g = feasfilter.featurize(vehicle, requests, now, self.oracle, self.scaling)
        return feasfilter.predict(g, self.params) < self.cfg.threshold


class SampleLoggingFilter(CandidateFilter):
    """Logs a labeled sample for every candidate the travel search verified."""

    def __init__(self, sink: feasfilter.SampleSink, scaling: feasfilter.FeatureScaling,
                 oracle: TravelTimeOracle):
        self.sink = sink
        self.scaling = scaling
        self.oracle = oracle
        self.current_epoch = 0

    def observe(self, vehicle, requests, now, feasible):
        g = feasfilter.featurize(vehicle, requests, now, self.oracle, self.scaling)
        self.sink.log_sample(g, 1 if feasible else 0, self.current_epoch)


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------


@dataclass
class SimResult:
    metrics: Metrics
    epoch_records: list[dict]
    summary: dict
    trace_path: Optional[str] = None
    summary_path: Optional[str] = None


def _build_network(cfg: SimConfig) -> RoadNetwork:
    if cfg.network.grid is not None:
        g = cfg.network.grid
        return gen_grid(g.rows, g.cols, g.edge_time_s, g.seed)
    return load_network(cfg.network.nodes_file, cfg.network.edges_file)


def synthesize_requests(
    network: RoadNetwork,
    oracle: TravelTimeOracle,
    n_requests: int,
    horizon: int,
    max_wait: int,
    max_delay: int,
    seed: int,
) -> list[Request]:
    """Uniform origin/destination pairs, arrival times uniform in the horizon."""
    rng = random.Random(seed)
    nodes = sorted(network.nodes)
    if len(nodes) < 2 and n_requests > 0:
        raise ConfigError("synthetic demand needs at least 2 nodes")
    rows = []
    for _ in range(n_requests):
        t = rng.randrange(horizon)
        while True:
            o, d = rng.choice(nodes), rng.choice(nodes)
            if o != d and oracle.shortest_time(o, d) is not None:
                break
        rows.append((t, o, d))
    rows.sort()
    return [
        make_request(i, o, d, t, max_wait, max_delay, oracle)
        for i, (t, o, d) in enumerate(rows)
    ]


def _load_demand(cfg: SimConfig, network: RoadNetwork, oracle: TravelTimeOracle):
    horizon = cfg.n_epochs * cfg.epoch_length_s
    w = cfg.windows
    if cfg.requests.file is not None:
        result = load_requests_csv(cfg.requests.file, oracle, w.max_wait_s, w.max_delay_s)
        return result.requests, result.trip_time_p95, dict(result.skipped)
    spec = cfg.requests.synthetic
    reqs = synthesize_requests(
        network, oracle, spec.rate_per_epoch * cfg.n_epochs, horizon,
        w.max_wait_s, w.max_delay_s, spec.seed,
    )
    return reqs, _trip_time_p95([r.direct_time for r in reqs]), {}


def _build_hook(cfg: SimConfig, oracle: TravelTimeOracle, scaling: feasfilter.FeatureScaling):
    hooks: list[CandidateFilter] = []
    sink = None
    if cfg.random_drop.drop_rate > 0.0:
        hooks.append(RandomDropFilter(cfg.random_drop))
    if cfg.filter.enabled:
        if not cfg.filter.params_file:
            raise ConfigError("filter.enabled requires filter.params_file")
        params = feasfilter.EmbeddingParams.load(cfg.filter.params_file)
        fcfg = feasfilter.FilterConfig(
            threshold=cfg.filter.threshold,
            min_applied_size=cfg.filter.min_applied_size,
            enabled=True,
        )
        hooks.append(LearnedGateFilter(params, fcfg, scaling, oracle))
    logging_hook = None
    if cfg.filter.sample_log:
        sink = feasfilter.SampleSink(cfg.filter.sample_log)
        logging_hook = SampleLoggingFilter(sink, scaling, oracle)
        hooks.append(logging_hook)
    if not hooks:
        return CandidateFilter(), None, None
    if len(hooks) == 1:
        return hooks[0], sink, logging_hook
    return ChainFilter(hooks), sink, logging_hook


def _abort(cfg: SimConfig, epoch: int, reason: str, vehicles, pool) -> None:
    """Raise SimulationAbort with the epoch index, writing diagnostics first."""
    message = f"epoch {epoch}: {reason}"
    if cfg.output_dir:
        os.makedirs(cfg.output_dir, exist_ok=True)
        path = os.path.join(cfg.output_dir, f"abort_epoch{epoch:04d}.json")
        doc = {
            "epoch": epoch,
            "reason": reason,
            "pool": sorted(pool),
            "vehicles": [
                {
                    "id": v.id,
                    "node": v.node,
                    "successor": v.successor,
                    "successor_remaining": v.successor_remaining,
                    "onboard": [p.request_id for p in v.onboard],
                    "plan": [
                        [s.action, s.request_id, s.node, s.deadline] for s in v.plan
                    ],
                }
                for v in vehicles
            ],
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2)
        message += f" (diagnostics: {path})"
    raise SimulationAbort(message)


def _partition_rv(cfg: SimConfig, rv: RVGraph):
    """Split the epoch's RV graph per the configured method."""
    method = cfg.partition.method
    if method == "none":
        return [rv], 0, 1
    n_nodes = len(rv.request_ids) + len(rv.vehicle_ids)
    if n_nodes == 0:
        return [rv], 0, 1
    k = cfg.partition.k if cfg.partition.k > 0 else cfg.workers
    k = min(k, n_nodes)
    wg = rv_to_weighted_graph(rv, cfg.partition.weight_vr_by_cost)
    if method == "kway":
        part = kway_partition(wg, k, cfg.partition.epsilon, cfg.partition.seed)
    else:
        part = modularity_partition(wg, cfg.partition.seed)
    blocks, dropped = split_rv(rv, part)
    return blocks, dropped, part.k


def run_simulation(cfg: SimConfig) -> SimResult:
    """Run the full epoch pipeline; deterministic mode is byte-reproducible."""
    t_start = _time.monotonic()
    network = _build_network(cfg)
    oracle = TravelTimeOracle(network)
    requests, tt_p95, skipped = _load_demand(cfg, network, oracle)
    requests_by_id = {r.id: r for r in requests}
    horizon = cfg.n_epochs * cfg.epoch_length_s
    batches = batch_by_epoch(requests, cfg.epoch_length_s, horizon)

    vehicles = place_fleet(network, cfg.fleet.n_vehicles, cfg.fleet.capacity, cfg.fleet.seed)
    scaling = feasfilter.FeatureScaling(
        max_wait=max(1, cfg.windows.max_wait_s),
        max_delay=max(1, cfg.windows.max_delay_s),
        trip_time_norm=tt_p95,
    )
    hook, sink, logging_hook = _build_hook(cfg, oracle, scaling)

    deterministic = cfg.budget.mode == "deterministic"
    if deterministic:
        tripgen_call_budget = int(cfg.budget.nodes * cfg.trip_gen_fraction)
        solver_node_budget = max(1, cfg.budget.nodes - tripgen_call_budget)
        per_vehicle_calls = (
            max(1, tripgen_call_budget // max(1, cfg.fleet.n_vehicles))
            if tripgen_call_budget > 0 else 0
        )
    else:
        tripgen_call_budget = 0
        solver_node_budget = 1 << 60
        per_vehicle_calls = 0

    dumps_dir = None
    if cfg.output_dir and (cfg.dump_rv or cfg.dump_rtv or cfg.dump_ilp):
        dumps_dir = os.path.join(cfg.output_dir, "dumps")
        os.makedirs(dumps_dir, exist_ok=True)

    pool: dict[int, Request] = {}
    served: set[int] = set()
    delivered: set[int] = set()
    records: list[dict] = []

    for epoch in range(cfg.n_epochs):
        now = epoch * cfg.epoch_length_s
        epoch_wall_start = _time.monotonic()
        if logging_hook is not None:
            logging_hook.current_epoch = epoch

        expired_now = sorted(rid for rid, r in pool.items() if now > r.t_latest_pickup)
        for rid in expired_now:
            del pool[rid]

        new_requests = batches[epoch].requests if epoch < len(batches) else ()
        planned_unpicked = sorted(
            {s.request_id for v in vehicles for s in v.plan if s.action == PICKUP}
        )
        batch_map = {r.id: r for r in new_requests}
        batch_map.update(pool)
        for rid in planned_unpicked:
            batch_map[rid] = requests_by_id[rid]
        batch = RequestBatch(
            epoch=epoch,
            requests=tuple(sorted(batch_map.values(), key=lambda r: r.id)),
        )

        rv = build_rv(
            vehicles, batch, now, oracle,
            RVLimits(max_vr_per_vehicle=cfg.limits.max_vr_per_vehicle), cfg.workers,
        )
        blocks, dropped_edges, k_used = _partition_rv(cfg, rv)

        wall_deadline = None
        if not deterministic:
            wall_deadline = epoch_wall_start + (cfg.budget.ms / 1000.0) * cfg.trip_gen_fraction
        budgets = TripBudgets(
            max_trips_per_vehicle=cfg.limits.max_trips_per_vehicle,
            max_vrp_calls=per_vehicle_calls,
            wall_deadline=wall_deadline,
        )
        vehicles_by_id = {v.id: v for v in vehicles}

        def gen_block(block_rv: RVGraph) -> RTVGraph:
            block_vehicles = [vehicles_by_id[vid] for vid in block_rv.vehicle_ids]
            inner_workers = 1 if len(blocks) > 1 else cfg.workers
            return build_rtv(
                block_vehicles, block_rv, requests_by_id, now, oracle,
                hook, budgets, inner_workers,
            )

        rtvs = ordered_map(gen_block, blocks, cfg.workers if len(blocks) > 1 else 1)
        if sink is not None:
            sink.flush_epoch()

        problem = assign.build_ilp(rtvs, batch.requests, cfg.unassigned_penalty_s)
        if deterministic:
            solver_budget = solver_node_budget
            solver_wall = None
        else:
            solver_budget = 1 << 60
            solver_wall = epoch_wall_start + cfg.budget.ms / 1000.0
        solution = assign.solve_anytime(problem, solver_budget, wall_deadline=solver_wall)
        violations = assign.validate(problem, solution)
        if violations:
            _abort(cfg, epoch, f"invalid solution: {violations}", vehicles, pool)

        if dumps_dir is not None:
            _write_dumps(cfg, dumps_dir, epoch, rv, rtvs, problem)

        chosen_by_vehicle = {e.vehicle_id: e for e in solution.chosen}
        new_fleet: list[Vehicle] = []
        reverted_all: set[int] = set()
        try:
            for v in vehicles:
                edge = chosen_by_vehicle.get(v.id)
                if edge is not None:
                    route = None
                    for rtv in rtvs:
                        for cand in rtv.by_vehicle.get(v.id, ()):
                            if cand.trip == edge.trip:
                                route = cand.route
                                break
                        if route is not None:
                            break
                    if route is None:
                        _abort(cfg, epoch, f"chosen edge {edge} lost its route", vehicles, pool)
                    v2, reverted = apply_assignment(v, route.stops)
                else:
                    v2, reverted = keep_onboard_only(v)
                new_fleet.append(v2)
                reverted_all.update(reverted)
        except PlanContractError as exc:
            _abort(cfg, epoch, str(exc), vehicles, pool)
        vehicles = new_fleet

        batch_ids = {r.id for r in batch.requests}
        if not reverted_all <= batch_ids:
            _abort(
                cfg, epoch,
                f"reverted request(s) {sorted(reverted_all - batch_ids)} not in batch",
                vehicles, pool,
            )
        pool = {rid: requests_by_id[rid] for rid in sorted(solution.unassigned)}

        try:
            adv = ordered_map(
                lambda v: advance(v, now, cfg.epoch_length_s, oracle), vehicles, cfg.workers
            )
        except (DeadlineMissError, PlanContractError) as exc:
            _abort(cfg, epoch, str(exc), vehicles, pool)
        vehicles = [r.vehicle for r in adv]
        picked_up = deliver_count = 0
        wait_sum = delay_sum = 0
        for res in adv:
            for ev in res.events:
                req = requests_by_id[ev.request_id]
                if ev.kind == PICKUP:
                    if ev.request_id in served:
                        _abort(cfg, epoch, f"request {ev.request_id} picked up twice", vehicles, pool)
                    served.add(ev.request_id)
                    picked_up += 1
                    wait_sum += ev.t - req.t_request
                else:
                    if ev.request_id in delivered or ev.request_id not in served:
                        _abort(cfg, epoch, f"inconsistent dropoff for request {ev.request_id}", vehicles, pool)
                    delivered.add(ev.request_id)
                    deliver_count += 1
                    delay_sum += ev.t - req.t_ideal_arrival
        moving = sum(r.moving_seconds for r in adv)
        empty_moving = sum(r.empty_moving_seconds for r in adv)
        onboard_s = sum(r.onboard_seconds for r in adv)

        counters = TripGenCounters()
        for rtv in rtvs:
            counters.merge(rtv.counters)

        record = {
            "epoch": epoch,
            "now": now,
            "new_requests": len(new_requests),
            "batch_size": len(batch.requests),
            "expired": len(expired_now),
            "rr_edges": len(rv.rr_edges),
            "vr_edges": len(rv.vr_edges),
            "rv_travel_calls": rv.vr_travel_calls + rv.rr_travel_calls,
            "blocks": k_used,
            "dropped_cross_edges": dropped_edges,
            "trips": sum(len(r.edges) for r in rtvs),
            "vrp_calls": counters.vrp_calls,
            "vrp_feasible": counters.vrp_feasible,
            "gate_candidates": counters.gate_candidates,
            "cliques_skipped": counters.cliques_skipped,
            "tripgen_truncated_vehicles": counters.truncated_vehicles,
            "ilp_edges": len(problem.edges),
            "solver_nodes": solution.stats.nodes_explored,
            "solver_proved_optimal": solution.flag == assign.PROVED_OPTIMAL,
            "objective": solution.objective,
            "assigned_vehicles": len(solution.chosen),
            "assigned_requests": len(batch.requests) - len(solution.unassigned),
            "picked_up": picked_up,
            "delivered": deliver_count,
            "pool_end": len(pool),
            "wait_s_sum": wait_sum,
            "delay_s_sum": delay_sum,
            "moving_seconds": moving,
            "empty_moving_seconds": empty_moving,
            "onboard_seconds": onboard_s,
            "vehicle_seconds": cfg.fleet.n_vehicles * cfg.epoch_length_s,
        }
        if not deterministic:
            record["wall_ms"] = int((_time.monotonic() - epoch_wall_start) * 1000)
        records.append(record)
        logger.info(
            "epoch %d: batch=%d trips=%d served=%d objective=%d",
            epoch, len(batch.requests), record["trips"], picked_up, solution.objective,
        )

    if sink is not None:
        sink.close()

    metrics = aggregate_epochs(records)
    problems = metrics.validate(cfg.fleet.capacity)
    if problems:
        raise SimulationAbort(f"metric invariants violated: {problems}")

    summary = {
        "config": asdict(cfg),
        "constants": {
            "kernel": KERNEL,
            "budget_mode": cfg.budget.mode,
            "thirty_second_analog_nodes": DEFAULT_NODE_BUDGET,
            "epoch_budget_nodes": cfg.budget.nodes if deterministic else None,
            "tripgen_call_budget": tripgen_call_budget,
            "per_vehicle_call_quota": per_vehicle_calls,
            "solver_node_budget": solver_node_budget if deterministic else None,
            "unassigned_penalty_s": cfg.unassigned_penalty_s,
            "trip_time_p95_s": tt_p95,
        },
        "ingest": {"n_requests": len(requests), "skipped": skipped},
        "metrics": asdict(metrics),
        "wall_s": round(_time.monotonic() - t_start, 3),
    }

    trace_path = summary_path = None
    if cfg.output_dir:
        os.makedirs(cfg.output_dir, exist_ok=True)
        trace_path = os.path.join(cfg.output_dir, "trace.jsonl")
        with open(trace_path, "w") as fh:
            for record in records:
                fh.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")
        summary_path = os.path.join(cfg.output_dir, "summary.json")
        with open(summary_path, "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)

    return SimResult(
        metrics=metrics,
        epoch_records=records,
        summary=summary,
        trace_path=trace_path,
        summary_path=summary_path,
    )


def _write_dumps(cfg, dumps_dir, epoch, rv, rtvs, problem):
    if cfg.dump_rv:
        with open(os.path.join(dumps_dir, f"rv_epoch{epoch:04d}.json"), "w") as fh:
            json.dump(rv.to_dump(), fh)
    if cfg.dump_rtv:
        doc = [
            {"vehicle": e.vehicle_id, "trip": list(e.trip), "cost": e.cost}
            for rtv in rtvs for e in rtv.edges
        ]
        with open(os.path.join(dumps_dir, f"rtv_epoch{epoch:04d}.json"), "w") as fh:
            json.dump(doc, fh)
    if cfg.dump_ilp:
        with open(os.path.join(dumps_dir, f"ilp_epoch{epoch:04d}.txt"), "w") as fh:
            for e in problem.edges:
                reqs = " ".join(str(r) for r in e.trip)
                fh.write(f"e {e.vehicle_id} {reqs} {e.cost}\n")
            fh.write(f"penalty {problem.unassigned_penalty}\n")
