"""Vehicle state and deterministic advancement between decision epochs.

Vehicles are immutable snapshots; every mutation returns a new instance so an
epoch's planning always works against a frozen view of the fleet.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, replace
from typing import Optional

from .network import RoadNetwork, TravelTimeOracle

PICKUP = "pickup"
DROPOFF = "dropoff"


class PlanContractError(RuntimeError):
    """A route violated the plan contract (e.g. dropped an onboard passenger)."""


class DeadlineMissError(RuntimeError):
    """A committed plan missed a deadline at execution time.

    Cannot happen for routes produced by the exact travel search; raised as a
    hard abort with diagnostics if it ever does.
    """


@dataclass(frozen=True)
class Stop:
    """One planned service action.

    deadline is t_latest_pickup for pickups, t_latest_dropoff for dropoffs.
    ready is the earliest service time (the request time for pickups; 0 for
    dropoffs) - a vehicle arriving early waits in place.
    """

    node: int
    action: str
    request_id: int
    deadline: int
    ready: int = 0


@dataclass(frozen=True)
class OnboardPassenger:
    request_id: int
    destination: int
    t_latest_dropoff: int


@dataclass(frozen=True)
class Vehicle:
    id: int
    capacity: int
    node: int
    successor: Optional[int] = None
    successor_remaining: int = 0
    onboard: tuple[OnboardPassenger, ...] = ()
    plan: tuple[Stop, ...] = ()

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError(f"vehicle {self.id}: capacity must be >= 1")
        if len(self.onboard) > self.capacity:
            raise ValueError(f"vehicle {self.id}: onboard exceeds capacity")

    @property
    def effective_node(self) -> int:
        """Position used by planning: the successor node while mid-edge."""
        return self.successor if self.successor is not None else self.node

    @property
    def effective_delay(self) -> int:
        """Seconds until the vehicle stands at effective_node."""
        return self.successor_remaining if self.successor is not None else 0

    @property
    def free_seats(self) -> int:
        return self.capacity - len(self.onboard)

    def onboard_ids(self) -> frozenset[int]:
        return frozenset(p.request_id for p in self.onboard)


@dataclass(frozen=True)
class FleetEvent:
    kind: str  # PICKUP or DROPOFF
    request_id: int
    vehicle_id: int
    node: int
    t: int


@dataclass(frozen=True)
class AdvanceResult:
    vehicle: Vehicle
    events: tuple[FleetEvent, ...]
    moving_seconds: int
    empty_moving_seconds: int
    onboard_seconds: int


def apply_assignment(vehicle: Vehicle, route: tuple[Stop, ...]) -> tuple[Vehicle, tuple[int, ...]]:
    """Commit a verified route: replace the plan, report reverted requests.

    Requests previously planned but not yet picked up and absent from the new
    route are returned so the caller can put them back in the open pool.
    Raises PlanContractError if the route omits an onboard passenger's dropoff.
    """
    onboard_ids = vehicle.onboard_ids()
    new_dropoffs = {s.request_id for s in route if s.action == DROPOFF}
    missing = onboard_ids - new_dropoffs
    if missing:
        raise PlanContractError(
            f"vehicle {vehicle.id}: route omits dropoff for onboard request(s) {sorted(missing)}"
        )
    previously_planned = {s.request_id for s in vehicle.plan if s.action == PICKUP}
    newly_planned = {s.request_id for s in route if s.action == PICKUP}
    reverted = tuple(sorted(previously_planned - newly_planned))
    return replace(vehicle, plan=tuple(route)), reverted


def keep_onboard_only(vehicle: Vehicle) -> tuple[Vehicle, tuple[int, ...]]:
    """Strip planned-but-unpicked requests, keeping onboard dropoffs in order.

    Used for vehicles that received no assignment this epoch; the retained
    subsequence of a feasible plan is itself feasible.
    """
    onboard_ids = vehicle.onboard_ids()
    route = tuple(s for s in vehicle.plan if s.action == DROPOFF and s.request_id in onboard_ids)
    return apply_assignment(vehicle, route)


def advance(vehicle: Vehicle, now: int, dt: int, oracle: TravelTimeOracle) -> AdvanceResult:
    """Advance a vehicle dt seconds along its plan, emitting service events.

    Movement follows deterministic shortest paths between consecutive stops;
    pickups and dropoffs are instantaneous. Deadline misses abort hard: they
    are impossible for routes certified by the travel search.
    """
    if dt < 0:
        raise ValueError(f"dt must be >= 0, got {dt}")
    network: RoadNetwork = oracle.network
    t = now
    end = now + dt
    node = vehicle.node
    successor = vehicle.successor
    remaining = vehicle.successor_remaining
    onboard = {p.request_id: p for p in vehicle.onboard}
    plan = list(vehicle.plan)
    events: list[FleetEvent] = []
    moving = 0
    empty_moving = 0
    onboard_seconds = 0

    while t < end:
        if successor is not None:
            step = min(remaining, end - t)
            moving += step
            if not onboard:
                empty_moving += step
            onboard_seconds += len(onboard) * step
            t += step
            remaining -= step
            if remaining == 0:
                node = successor
                successor = None
            continue

        if not plan:
            onboard_seconds += len(onboard) * (end - t)
            t = end
            break

        stop = plan[0]
        if stop.node == node:
            if stop.action == PICKUP and t < stop.ready:
                wait = min(stop.ready - t, end - t)
                onboard_seconds += len(onboard) * wait
                t += wait
                if t < stop.ready:
                    break
                continue
            if t > stop.deadline:
                raise DeadlineMissError(
                    f"vehicle {vehicle.id}: {stop.action} for request {stop.request_id} "
                    f"at node {stop.node} at t={t} > deadline {stop.deadline}"
                )
            if stop.action == PICKUP:
                if len(onboard) >= vehicle.capacity:
                    raise PlanContractError(
                        f"vehicle {vehicle.id}: pickup of {stop.request_id} over capacity"
                    )
                dropoff = next(
                    (s for s in plan[1:] if s.action == DROPOFF and s.request_id == stop.request_id),
                    None,
                )
                if dropoff is None:
                    raise PlanContractError(
                        f"vehicle {vehicle.id}: pickup of {stop.request_id} without a later dropoff"
                    )
                onboard[stop.request_id] = OnboardPassenger(
                    request_id=stop.request_id,
                    destination=dropoff.node,
                    t_latest_dropoff=dropoff.deadline,
                )
            else:
                if stop.request_id not in onboard:
                    raise PlanContractError(
                        f"vehicle {vehicle.id}: dropoff of {stop.request_id} who is not onboard"
                    )
                del onboard[stop.request_id]
            events.append(
                FleetEvent(kind=stop.action, request_id=stop.request_id, vehicle_id=vehicle.id, node=node, t=t)
            )
            plan.pop(0)
            continue

        # move one edge toward the next stop
        path = oracle.shortest_path(node, stop.node)
        if path is None:
            raise PlanContractError(
                f"vehicle {vehicle.id}: stop node {stop.node} unreachable from {node}"
            )
        successor = path[1]
        remaining = network.edge_time(node, successor)

    updated = replace(
        vehicle,
        node=node,
        successor=successor,
        successor_remaining=remaining,
        onboard=tuple(sorted(onboard.values(), key=lambda p: p.request_id)),
        plan=tuple(plan),
    )
    return AdvanceResult(
        vehicle=updated,
        events=tuple(events),
        moving_seconds=moving,
        empty_moving_seconds=empty_moving,
        onboard_seconds=onboard_seconds,
    )


def place_fleet(network: RoadNetwork, n_vehicles: int, capacity: int, seed: int) -> list[Vehicle]:
    """Uniform random initial placement over nodes, deterministic per seed."""
    rng = random.Random(seed)
    nodes = sorted(network.nodes)
    return [
        Vehicle(id=i, capacity=capacity, node=rng.choice(nodes))
        for i in range(n_vehicles)
    ]
