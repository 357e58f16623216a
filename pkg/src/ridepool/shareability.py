"""Pairwise shareability graph over one epoch's requests and vehicles."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

from ._par import ordered_map
from .demand import Request, RequestBatch
from .fleet import Vehicle
from .network import TravelTimeOracle
from .tripgen import FeasibleRoute, travel


@dataclass(frozen=True)
class RVLimits:
    """Densification controls; 0 disables a cap."""

    max_vr_per_vehicle: int = 30


@dataclass(frozen=True)
class VREdge:
    vehicle_id: int
    request_id: int
    cost: int
    route: FeasibleRoute


@dataclass
class RVGraph:
    request_ids: tuple[int, ...]
    vehicle_ids: tuple[int, ...]
    rr_edges: tuple[tuple[int, int], ...]
    vr_edges: tuple[VREdge, ...]
    vr_travel_calls: int = 0
    rr_travel_calls: int = 0
    rr_set: frozenset[tuple[int, int]] = field(default_factory=frozenset)
    vr_by_vehicle: dict[int, tuple[VREdge, ...]] = field(default_factory=dict)

    def __post_init__(self):
        self.rr_set = frozenset(self.rr_edges)
        by_v: dict[int, list[VREdge]] = {}
        for e in self.vr_edges:
            by_v.setdefault(e.vehicle_id, []).append(e)
        self.vr_by_vehicle = {k: tuple(v) for k, v in by_v.items()}

    def to_dump(self) -> dict:
        """Diagnostic JSON form (node lists + edge lists, routes omitted)."""
        return {
            "request_ids": list(self.request_ids),
            "vehicle_ids": list(self.vehicle_ids),
            "rr_edges": [list(e) for e in self.rr_edges],
            "vr_edges": [[e.vehicle_id, e.request_id, e.cost] for e in self.vr_edges],
        }


def pairwise_shareable(r1: Request, r2: Request, now: int, oracle: TravelTimeOracle) -> bool:
    """True iff a virtual 2-seat vehicle parked at either origin can serve both.

    Evaluated with the exact travel search from each request's origin; an
    edge exists when at least one starting origin admits a feasible ordering.
    """
    ok, _ = _pairwise_shareable_counted(r1, r2, now, oracle)
    return ok


def _start_can_work(start: Request, other: Request, now: int, oracle: TravelTimeOracle) -> bool:
    """Cheap necessary conditions for a virtual vehicle starting at start.origin.

    Every stop's service time is at least now + direct time from the start
    (triangle inequality), so a deadline already beyond direct reach rules
    the ordering search out without running it.
    """
    tt = oracle.shortest_time
    o = start.origin
    reach_other_pickup = tt(o, other.origin)
    if reach_other_pickup is None or now + reach_other_pickup > other.t_latest_pickup:
        return False
    own_drop = tt(o, start.destination)
    if own_drop is None or now + own_drop > start.t_latest_dropoff:
        return False
    other_drop = tt(o, other.destination)
    if other_drop is None or now + other_drop > other.t_latest_dropoff:
        return False
    return True


def _pairwise_shareable_counted(
    r1: Request, r2: Request, now: int, oracle: TravelTimeOracle
) -> tuple[bool, int]:
    calls = 0
    if _start_can_work(r1, r2, now, oracle):
        calls += 1
        v1 = Vehicle(id=-1, capacity=2, node=r1.origin)
        if travel(v1, (r1, r2), now, oracle) is not None:
            return True, calls
    if _start_can_work(r2, r1, now, oracle):
        calls += 1
        v2 = Vehicle(id=-2, capacity=2, node=r2.origin)
        if travel(v2, (r1, r2), now, oracle) is not None:
            return True, calls
    return False, calls


def build_rv(
    vehicles: Sequence[Vehicle],
    batch: RequestBatch,
    now: int,
    oracle: TravelTimeOracle,
    limits: Optional[RVLimits] = None,
    workers: int = 1,
) -> RVGraph:
    """Build request-request and vehicle-request edges for one epoch snapshot.

    Fully parallel over request pairs and vehicle-request pairs; output order
    is canonical (sorted by ids) and identical for any worker count.
    """
    limits = limits or RVLimits()
    requests = sorted(batch.requests, key=lambda r: r.id)
    fleet = sorted(vehicles, key=lambda v: v.id)

    pairs = [(i, j) for i in range(len(requests)) for j in range(i + 1, len(requests))]

    def check_pair(ij):
        i, j = ij
        return _pairwise_shareable_counted(requests[i], requests[j], now, oracle)

    pair_results = ordered_map(check_pair, pairs, workers)
    rr_edges = tuple(
        (requests[i].id, requests[j].id)
        for (i, j), (ok, _) in zip(pairs, pair_results)
        if ok
    )
    rr_calls = sum(n for _, n in pair_results)

    def vehicle_edges(v: Vehicle):
        found = []
        calls = 0
        pos = v.effective_node
        t0 = now + v.effective_delay
        for r in requests:
            # direct-reach screens are necessary conditions (triangle inequality)
            reach_pickup = oracle.shortest_time(pos, r.origin)
            if reach_pickup is None or t0 + reach_pickup > r.t_latest_pickup:
                continue
            reach_drop = oracle.shortest_time(pos, r.destination)
            if reach_drop is None or t0 + reach_drop > r.t_latest_dropoff:
                continue
            calls += 1
            route = travel(v, (r,), now, oracle)
            if route is not None:
                found.append(VREdge(vehicle_id=v.id, request_id=r.id, cost=route.cost, route=route))
        if limits.max_vr_per_vehicle:
            found.sort(key=lambda e: (e.cost, e.request_id))
            found = found[: limits.max_vr_per_vehicle]
        found.sort(key=lambda e: e.request_id)
        return found, calls

    per_vehicle = ordered_map(vehicle_edges, fleet, workers)
    vr_edges = tuple(e for edges, _ in per_vehicle for e in edges)

    return RVGraph(
        request_ids=tuple(r.id for r in requests),
        vehicle_ids=tuple(v.id for v in fleet),
        rr_edges=rr_edges,
        vr_edges=vr_edges,
        vr_travel_calls=sum(calls for _, calls in per_vehicle),
        rr_travel_calls=rr_calls,
    )
