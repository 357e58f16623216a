"""Trip-vehicle assignment: problem construction and anytime exact solver.

The solver keeps a feasible incumbent at all times: a greedy phase seeds it,
then best-first branch-and-bound on edge include/exclude decisions improves
it until the tree closes (proved optimal) or the node budget runs out.
"""

from __future__ import annotations

import heapq
import time as _time
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

from .tripgen import RTVGraph, Trip

PROVED_OPTIMAL = "proved-optimal"
BUDGET_INCUMBENT = "budget-exhausted-incumbent"


class ProblemError(ValueError):
    """Invalid assignment-problem construction."""


@dataclass(frozen=True)
class IlpEdge:
    index: int
    vehicle_id: int
    trip: Trip
    cost: int


@dataclass
class AssignmentProblem:
    edges: tuple[IlpEdge, ...]
    request_ids: tuple[int, ...]
    unassigned_penalty: int
    by_vehicle: dict[int, tuple[int, ...]]
    by_request: dict[int, tuple[int, ...]]


@dataclass
class SolveStats:
    nodes_explored: int = 0
    incumbent_log: tuple[tuple[int, int], ...] = ()


@dataclass
class Solution:
    chosen: tuple[IlpEdge, ...]
    unassigned: frozenset[int]
    objective: int
    flag: str
    stats: SolveStats


def build_ilp(
    rtv: Union[RTVGraph, Sequence[RTVGraph]],
    requests: Iterable,
    unassigned_penalty: int,
) -> AssignmentProblem:
    """Assemble one problem from an RTV graph or a list of per-block graphs.

    Edge order is deterministic: vehicle id, then trip (lexicographic). The
    penalty must dominate every edge cost so unassignment is never preferred
    to a feasible service.
    """
    rtv_list = [rtv] if isinstance(rtv, RTVGraph) else list(rtv)
    request_ids = tuple(sorted(r.id if hasattr(r, "id") else int(r) for r in requests))
    universe = set(request_ids)
    if len(request_ids) != len(universe):
        raise ProblemError("duplicate request ids in universe")

    raw: list[tuple[int, Trip, int]] = []
    seen: set[tuple[int, Trip]] = set()
    for g in rtv_list:
        for e in g.edges:
            key = (e.vehicle_id, e.trip)
            if key in seen:
                raise ProblemError(f"duplicate (trip, vehicle) edge {key}")
            seen.add(key)
            if not e.trip:
                raise ProblemError(f"empty trip for vehicle {e.vehicle_id}")
            missing = [rid for rid in e.trip if rid not in universe]
            if missing:
                raise ProblemError(f"edge {key} references request(s) {missing} outside the universe")
            if e.cost < 0:
                raise ProblemError(f"edge {key} has negative cost {e.cost}")
            raw.append((e.vehicle_id, e.trip, e.cost))
    raw.sort(key=lambda t: (t[0], t[1]))

    max_cost = max((c for _, _, c in raw), default=0)
    if unassigned_penalty <= max_cost:
        raise ProblemError(
            f"unassigned penalty {unassigned_penalty} must exceed max edge cost {max_cost}"
        )

    edges = tuple(IlpEdge(index=i, vehicle_id=v, trip=t, cost=c) for i, (v, t, c) in enumerate(raw))
    by_vehicle: dict[int, list[int]] = {}
    by_request: dict[int, list[int]] = {}
    for e in edges:
        by_vehicle.setdefault(e.vehicle_id, []).append(e.index)
        for rid in e.trip:
            by_request.setdefault(rid, []).append(e.index)
    return AssignmentProblem(
        edges=edges,
        request_ids=request_ids,
        unassigned_penalty=unassigned_penalty,
        by_vehicle={k: tuple(v) for k, v in by_vehicle.items()},
        by_request={k: tuple(v) for k, v in by_request.items()},
    )


def _greedy_pick(p: AssignmentProblem) -> list[IlpEdge]:
    order = sorted(p.edges, key=lambda e: (-len(e.trip), e.cost, e.index))
    used_vehicles: set[int] = set()
    covered: set[int] = set()
    chosen: list[IlpEdge] = []
    for e in order:
        if e.vehicle_id in used_vehicles:
            continue
        if any(rid in covered for rid in e.trip):
            continue
        chosen.append(e)
        used_vehicles.add(e.vehicle_id)
        covered.update(e.trip)
    chosen.sort(key=lambda e: e.index)
    return chosen


def _objective(p: AssignmentProblem, chosen: Sequence[IlpEdge]) -> int:
    covered = set()
    for e in chosen:
        covered.update(e.trip)
    return sum(e.cost for e in chosen) + p.unassigned_penalty * (len(p.request_ids) - len(covered))


def greedy_only(p: AssignmentProblem) -> Solution:
    """Phase-1 incumbent on its own, for ablations."""
    chosen = _greedy_pick(p)
    covered = {rid for e in chosen for rid in e.trip}
    obj = _objective(p, chosen)
    return Solution(
        chosen=tuple(chosen),
        unassigned=frozenset(p.request_ids) - covered,
        objective=obj,
        flag=BUDGET_INCUMBENT,
        stats=SolveStats(nodes_explored=0, incumbent_log=((0, obj),)),
    )


def solve_anytime(
    p: AssignmentProblem,
    budget: int,
    node_inspector=None,
    wall_deadline: Optional[float] = None,
) -> Solution:
    """Best incumbent within a branch-node budget; exact when the tree closes.

    budget counts expanded branch nodes (the deterministic unit);
    wall_deadline is an optional time.monotonic() cutoff for realtime mode.
    The lower bound is admissible: chosen cost, plus the full penalty for
    uncovered requests no remaining edge can serve, plus for each
    still-coverable request the floor of the cheapest per-request marginal
    cost among remaining edges. node_inspector, when given, is called with
    (chosen_indexes, excluded_indexes, lower_bound) at every expansion.

    Children inherit the parent bound as their heap priority and compute
    their exact bound when popped; both are valid lower bounds, so best-first
    ordering and the optimality proof are unaffected.
    """
    if budget <= 0:
        raise ValueError(f"budget must be positive, got {budget}")
    n_requests = len(p.request_ids)
    c_ko = p.unassigned_penalty

    # dense encodings: requests as bit positions, vehicles as small-int bits
    req_bit = {rid: i for i, rid in enumerate(p.request_ids)}
    veh_ids = sorted({e.vehicle_id for e in p.edges})
    veh_bit = {vid: i for i, vid in enumerate(veh_ids)}
    n_edges = len(p.edges)
    e_trip_mask = [0] * n_edges
    e_trip_bits: list[tuple[int, ...]] = [()] * n_edges
    e_veh = [0] * n_edges
    e_cost = [0] * n_edges
    e_marginal = [0] * n_edges
    edges_by_req: list[list[int]] = [[] for _ in range(n_requests)]
    for e in p.edges:
        mask = 0
        for rid in e.trip:
            mask |= 1 << req_bit[rid]
        e_trip_mask[e.index] = mask
        e_trip_bits[e.index] = tuple(req_bit[rid] for rid in e.trip)
        e_veh[e.index] = veh_bit[e.vehicle_id]
        e_cost[e.index] = e.cost
        e_marginal[e.index] = e.cost // len(e.trip)
    for b in range(n_requests):
        edges_by_req[b] = sorted(
            (i for i in range(n_edges) if (e_trip_mask[i] >> b) & 1),
            key=lambda i: (e_cost[i], i),
        )
    all_requests_mask = (1 << n_requests) - 1
    edge_data = list(zip(range(n_edges), e_trip_mask, e_veh, e_marginal, e_trip_bits))
    INF = 1 << 62

    incumbent = _greedy_pick(p)
    incumbent_obj = _objective(p, incumbent)
    incumbent_idx = tuple(e.index for e in incumbent)
    log: list[tuple[int, int]] = [(0, incumbent_obj)]

    def bound_and_branch(excluded: frozenset, covered: int, used: int, cost: int):
        """One pass over edges: exact lower bound + branching edge."""
        best_marg = [INF] * n_requests
        for i, mask, veh, marg, bits in edge_data:
            if i in excluded:
                continue
            if (used >> veh) & 1:
                continue
            if mask & covered:
                continue
            for b in bits:
                if marg < best_marg[b]:
                    best_marg[b] = marg
        lb = cost
        r_star = -1
        for b in range(n_requests):
            if (covered >> b) & 1:
                continue
            m = best_marg[b]
            if m == INF:
                lb += c_ko
            else:
                lb += m
                if r_star < 0:
                    r_star = b
        e_star = -1
        if r_star >= 0:
            for i in edges_by_req[r_star]:
                if i in excluded or (used >> e_veh[i]) & 1 or (e_trip_mask[i] & covered):
                    continue
                e_star = i
                break
        return lb, r_star, e_star

    # heap entries: (priority_bound, seq, chosen tuple, excluded, covered, used, cost)
    heap: list = [(0, 0, (), frozenset(), 0, 0, 0)]
    seq = 0
    nodes = 0
    proved = False
    while heap:
        if nodes >= budget:
            break
        if wall_deadline is not None and _time.monotonic() >= wall_deadline:
            break
        prio, _, chosen_idx, excluded, covered, used, cost = heapq.heappop(heap)
        if prio >= incumbent_obj:
            # best-first on valid bounds: every remaining node is at least as bad
            proved = True
            break
        nodes += 1
        lb, r_star, e_star = bound_and_branch(excluded, covered, used, cost)
        if node_inspector is not None:
            node_inspector(chosen_idx, excluded, lb)

        # stopping here is itself feasible: everything uncovered goes unassigned
        here_obj = cost + c_ko * bin(all_requests_mask & ~covered).count("1")
        if here_obj < incumbent_obj:
            incumbent_idx = chosen_idx
            incumbent_obj = here_obj
            log.append((nodes, here_obj))
        if lb >= incumbent_obj:
            continue
        if e_star < 0:
            continue

        seq += 1
        heapq.heappush(heap, (
            lb, seq,
            chosen_idx + (e_star,), excluded,
            covered | e_trip_mask[e_star], used | (1 << e_veh[e_star]),
            cost + e_cost[e_star],
        ))
        seq += 1
        heapq.heappush(heap, (
            lb, seq,
            chosen_idx, excluded | {e_star},
            covered, used, cost,
        ))

    if not heap:
        proved = True
    chosen = sorted((p.edges[i] for i in incumbent_idx), key=lambda e: e.index)
    covered_ids = {rid for e in chosen for rid in e.trip}
    return Solution(
        chosen=tuple(chosen),
        unassigned=frozenset(p.request_ids) - covered_ids,
        objective=incumbent_obj,
        flag=PROVED_OPTIMAL if proved else BUDGET_INCUMBENT,
        stats=SolveStats(nodes_explored=nodes, incumbent_log=tuple(log)),
    )


def validate(p: AssignmentProblem, s: Solution) -> list[str]:
    """Re-check every solution invariant; returns violations (empty = ok)."""
    violations: list[str] = []
    seen_vehicles: set[int] = set()
    covered: list[int] = []
    for e in s.chosen:
        if e.index >= len(p.edges) or p.edges[e.index] != e:
            violations.append(f"edge {e.index} is not part of the problem")
            continue
        if e.vehicle_id in seen_vehicles:
            violations.append(f"vehicle multiplicity: vehicle {e.vehicle_id} chosen twice")
        seen_vehicles.add(e.vehicle_id)
        covered.extend(e.trip)
    covered_set = set(covered)
    if len(covered) != len(covered_set):
        dupes = sorted({r for r in covered if covered.count(r) > 1})
        violations.append(f"request multiplicity: request(s) {dupes} covered twice")
    universe = set(p.request_ids)
    both = covered_set & s.unassigned
    if both:
        violations.append(f"request(s) {sorted(both)} both assigned and unassigned")
    missing = universe - covered_set - s.unassigned
    if missing:
        violations.append(f"request(s) {sorted(missing)} neither assigned nor unassigned")
    outside = (covered_set | s.unassigned) - universe
    if outside:
        violations.append(f"request(s) {sorted(outside)} outside the universe")
    expected = sum(e.cost for e in s.chosen) + p.unassigned_penalty * len(s.unassigned)
    if expected != s.objective:
        violations.append(f"objective mismatch: stated {s.objective}, recomputed {expected}")
    return violations
