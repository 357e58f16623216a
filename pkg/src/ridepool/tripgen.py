"""Candidate trip enumeration with exact per-trip route verification.

The travel search is the hot path of the whole pipeline: one call per
candidate clique. It runs on the compiled kernel when available (see
ridepool._kernels) and on a bit-identical pure-Python fallback otherwise.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Mapping, Optional, Sequence

from ._kernels import solve_stop_order
from ._par import ordered_map
from .demand import Request
from .fleet import DROPOFF, PICKUP, Stop, Vehicle
from .network import TravelTimeOracle

if TYPE_CHECKING:
    from .shareability import RVGraph

Trip = tuple[int, ...]

INF_TIME = 1 << 40


@dataclass(frozen=True)
class FeasibleRoute:
    """A verified stop sequence and its total delay over the trip's requests."""

    stops: tuple[Stop, ...]
    cost: int


def travel(
    vehicle: Vehicle,
    requests: Sequence[Request],
    now: int,
    oracle: TravelTimeOracle,
) -> Optional[FeasibleRoute]:
    """Exact minimum-delay route serving `requests` plus all onboard dropoffs.

    Searches every admissible interleaving of stops (pickup before dropoff,
    running occupancy within capacity, all deadlines met) and returns the
    route minimizing total delay of the new requests, ties broken by the
    lexicographically smallest stop sequence keyed on (request_id, action).
    Returns None when no admissible ordering exists.
    """
    reqs = sorted(requests, key=lambda r: r.id)
    for a, b in zip(reqs, reqs[1:]):
        if a.id == b.id:
            raise ValueError(f"duplicate request id {a.id} in trip")
    onboard_ids = vehicle.onboard_ids()
    overlap = onboard_ids.intersection(r.id for r in reqs)
    if overlap:
        raise ValueError(f"request(s) {sorted(overlap)} already onboard vehicle {vehicle.id}")

    # raw stop table, pre-sorted by the tie-break key (request_id, action);
    # rows: (sort key, node, kind, ready, deadline, has_cost, ideal, request_id)
    entries = []
    for p in vehicle.onboard:
        entries.append(((p.request_id, 1), p.destination, 1, 0, p.t_latest_dropoff, 0, 0, p.request_id))
    for r in reqs:
        entries.append(((r.id, 0), r.origin, 0, r.t_request, r.t_latest_pickup, 0, 0, r.id))
        entries.append(((r.id, 1), r.destination, 1, 0, r.t_latest_dropoff, 1, r.t_ideal_arrival, r.id))
    entries.sort(key=lambda e: e[0])

    n = len(entries)
    kind = [e[2] for e in entries]
    ready = [e[3] for e in entries]
    deadline = [e[4] for e in entries]
    has_cost = [e[5] for e in entries]
    ideal = [e[6] for e in entries]
    pickup_index = {e[7]: i for i, e in enumerate(entries) if e[2] == 0}
    partner = [
        pickup_index[e[7]] if e[2] == 1 and e[7] in pickup_index else -1
        for e in entries
    ]

    start_node = vehicle.effective_node
    start_time = now + vehicle.effective_delay
    nodes = [start_node] + [e[1] for e in entries]
    columns = [oracle._times_to(v) for v in nodes]
    tt = [
        [col.get(u, INF_TIME) for col in columns]
        for u in nodes
    ]

    feasible, cost, order = solve_stop_order(
        n, kind, ready, deadline, has_cost, ideal, partner, tt,
        start_time, len(vehicle.onboard), vehicle.capacity,
    )
    if not feasible:
        return None
    stops = tuple(
        Stop(
            node=entries[i][1],
            action=PICKUP if entries[i][2] == 0 else DROPOFF,
            request_id=entries[i][7],
            deadline=entries[i][4],
            ready=entries[i][3],
        )
        for i in order
    )
    return FeasibleRoute(stops=stops, cost=cost)


class CandidateFilter:
    """Hook applied to size >= 2 candidate cliques before the travel call.

    gate() returning True skips the candidate (it is then treated as
    infeasible, so none of its supersets are formed). observe() sees the
    verified label of every candidate that was actually travel-tested.
    """

    def gate(self, vehicle: Vehicle, requests: tuple[Request, ...], now: int) -> bool:
        return False

    def observe(self, vehicle: Vehicle, requests: tuple[Request, ...], now: int, feasible: bool) -> None:
        pass


class ChainFilter(CandidateFilter):
    def __init__(self, filters: Sequence[CandidateFilter]):
        self.filters = list(filters)

    def gate(self, vehicle, requests, now):
        return any(f.gate(vehicle, requests, now) for f in self.filters)

    def observe(self, vehicle, requests, now, feasible):
        for f in self.filters:
            f.observe(vehicle, requests, now, feasible)


@dataclass(frozen=True)
class TripBudgets:
    """Per-vehicle enumeration budgets; 0 disables a limit.

    max_vrp_calls counts travel invocations (the deterministic budget unit);
    wall_deadline is a time.monotonic() deadline used in realtime mode only.
    """

    max_trips_per_vehicle: int = 0
    max_vrp_calls: int = 0
    wall_deadline: Optional[float] = None

    def calls_exhausted(self, calls: int) -> bool:
        if self.max_vrp_calls and calls >= self.max_vrp_calls:
            return True
        if self.wall_deadline is not None and _time.monotonic() >= self.wall_deadline:
            return True
        return False


@dataclass
class TripGenCounters:
    vrp_calls: int = 0
    vrp_feasible: int = 0
    gate_candidates: int = 0
    cliques_skipped: int = 0
    truncated_vehicles: int = 0

    def merge(self, other: "TripGenCounters") -> None:
        self.vrp_calls += other.vrp_calls
        self.vrp_feasible += other.vrp_feasible
        self.gate_candidates += other.gate_candidates
        self.cliques_skipped += other.cliques_skipped
        self.truncated_vehicles += other.truncated_vehicles


@dataclass(frozen=True)
class RTVEdge:
    vehicle_id: int
    trip: Trip
    route: FeasibleRoute

    @property
    def cost(self) -> int:
        return self.route.cost


@dataclass
class RTVGraph:
    """Verified (trip, vehicle) edges plus enumeration counters."""

    edges: tuple[RTVEdge, ...]
    counters: TripGenCounters
    by_vehicle: dict[int, tuple[RTVEdge, ...]] = field(default_factory=dict)
    by_request: dict[int, tuple[RTVEdge, ...]] = field(default_factory=dict)

    def __post_init__(self):
        by_v: dict[int, list[RTVEdge]] = {}
        by_r: dict[int, list[RTVEdge]] = {}
        for e in self.edges:
            by_v.setdefault(e.vehicle_id, []).append(e)
            for rid in e.trip:
                by_r.setdefault(rid, []).append(e)
        self.by_vehicle = {k: tuple(v) for k, v in by_v.items()}
        self.by_request = {k: tuple(v) for k, v in by_r.items()}


def enumerate_trips(
    vehicle: Vehicle,
    rv: "RVGraph",
    requests_by_id: Mapping[int, Request],
    now: int,
    oracle: TravelTimeOracle,
    filter_hook: Optional[CandidateFilter] = None,
    budgets: Optional[TripBudgets] = None,
) -> tuple[list[tuple[Trip, FeasibleRoute]], TripGenCounters]:
    """Grow feasible trips for one vehicle by clique size.

    Size-1 trips reuse the verified single-request routes from the
    shareability graph. A size-k candidate is formed only when all of its
    size-(k-1) subsets are feasible trips for this vehicle and all request
    pairs are shareable; each surviving candidate goes through the filter
    hook and then the travel search.
    """
    hook = filter_hook or CandidateFilter()
    budgets = budgets or TripBudgets()
    counters = TripGenCounters()
    rr = rv.rr_set

    feasible: dict[Trip, FeasibleRoute] = {}
    for edge in rv.vr_by_vehicle.get(vehicle.id, ()):
        feasible[(edge.request_id,)] = edge.route
        if budgets.max_trips_per_vehicle and len(feasible) >= budgets.max_trips_per_vehicle:
            counters.truncated_vehicles = 1
            return sorted(feasible.items(), key=lambda kv: (len(kv[0]), kv[0])), counters

    calls = 0
    stopped = False
    prev_tier: list[Trip] = sorted(feasible)
    vr_ids = sorted(t[0] for t in feasible if len(t) == 1)
    for size in range(2, vehicle.capacity + 1):
        if stopped or not prev_tier:
            break
        candidates: set[Trip] = set()
        for trip in prev_tier:
            last = trip[-1]
            for rid in vr_ids:
                if rid <= last:
                    continue
                if all((min(t, rid), max(t, rid)) in rr for t in trip):
                    candidates.add(trip + (rid,))
        new_tier: list[Trip] = []
        for cand in sorted(candidates):
            if any(cand[:i] + cand[i + 1:] not in feasible for i in range(len(cand))):
                continue
            reqs = tuple(requests_by_id[rid] for rid in cand)
            counters.gate_candidates += 1
            if hook.gate(vehicle, reqs, now):
                counters.cliques_skipped += 1
                continue
            if budgets.calls_exhausted(calls):
                counters.truncated_vehicles = 1
                stopped = True
                break
            calls += 1
            route = travel(vehicle, reqs, now, oracle)
            hook.observe(vehicle, reqs, now, route is not None)
            if route is not None:
                feasible[cand] = route
                new_tier.append(cand)
                counters.vrp_feasible += 1
                if budgets.max_trips_per_vehicle and len(feasible) >= budgets.max_trips_per_vehicle:
                    counters.truncated_vehicles = 1
                    stopped = True
                    break
        prev_tier = new_tier
    counters.vrp_calls = calls
    return sorted(feasible.items(), key=lambda kv: (len(kv[0]), kv[0])), counters


def build_rtv(
    vehicles: Sequence[Vehicle],
    rv: "RVGraph",
    requests_by_id: Mapping[int, Request],
    now: int,
    oracle: TravelTimeOracle,
    filter_hook: Optional[CandidateFilter] = None,
    budgets: Optional[TripBudgets] = None,
    workers: int = 1,
) -> RTVGraph:
    """Enumerate trips for every vehicle (in parallel) and merge canonically."""
    ordered = sorted(vehicles, key=lambda v: v.id)

    def one(v: Vehicle):
        return enumerate_trips(v, rv, requests_by_id, now, oracle, filter_hook, budgets)

    results = ordered_map(one, ordered, workers)
    edges: list[RTVEdge] = []
    counters = TripGenCounters()
    for v, (trips, c) in zip(ordered, results):
        counters.merge(c)
        for trip, route in trips:
            edges.append(RTVEdge(vehicle_id=v.id, trip=trip, route=route))
    edges.sort(key=lambda e: (e.vehicle_id, len(e.trip), e.trip))
    return RTVGraph(edges=tuple(edges), counters=counters)
