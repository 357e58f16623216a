"""Graph decomposition for parallel trip generation.

Two methods: multilevel k-way partitioning (heavy-edge matching, greedy
growing, move-based refinement under a balance bound) and greedy
agglomerative modularity maximization. Both are deterministic for a fixed
seed.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Hashable, Iterable, Mapping

from .shareability import RVGraph


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class WeightedGraph:
    """Undirected weighted graph over opaque hashable node ids."""

    nodes: tuple
    edges: tuple  # (a, b, weight) with a < b, no self-loops

    @staticmethod
    def build(nodes: Iterable[Hashable], edges: Iterable[tuple]) -> "WeightedGraph":
        node_list = tuple(sorted(set(nodes)))
        node_set = set(node_list)
        merged: dict[tuple, float] = {}
        for a, b, *w in edges:
            weight = float(w[0]) if w else 1.0
            if a == b:
                raise PartitionError(f"self-loop on node {a!r}")
            if a not in node_set or b not in node_set:
                raise PartitionError(f"edge ({a!r},{b!r}) references undeclared node")
            key = (a, b) if (a, b) <= (b, a) else (b, a)
            merged[key] = merged.get(key, 0.0) + weight
        edge_list = tuple((a, b, w) for (a, b), w in sorted(merged.items()))
        return WeightedGraph(nodes=node_list, edges=edge_list)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def total_weight(self) -> float:
        return sum(w for _, _, w in self.edges)

    def adjacency(self) -> dict:
        adj: dict = {n: {} for n in self.nodes}
        for a, b, w in self.edges:
            adj[a][b] = adj[a].get(b, 0.0) + w
            adj[b][a] = adj[b].get(a, 0.0) + w
        return adj


@dataclass(frozen=True)
class Partition:
    assignment: Mapping
    k: int
    edge_cut: float
    imbalance: float


def _cut_and_imbalance(g: WeightedGraph, assignment: Mapping, k: int) -> tuple[float, float]:
    cut = 0.0
    for a, b, w in g.edges:
        if assignment[a] != assignment[b]:
            cut += w
    sizes = [0] * k
    for n in g.nodes:
        sizes[assignment[n]] += 1
    target = math.ceil(g.n_nodes / k) if g.n_nodes else 1
    imbalance = max(sizes) / target if g.n_nodes else 1.0
    return cut, imbalance


def _finish(g: WeightedGraph, assignment: dict, k: int) -> Partition:
    cut, imbalance = _cut_and_imbalance(g, assignment, k)
    return Partition(assignment=dict(assignment), k=k, edge_cut=cut, imbalance=imbalance)


# ---------------------------------------------------------------------------
# multilevel k-way
# ---------------------------------------------------------------------------


class _Level:
    """Index-based working graph for one coarsening level."""

    def __init__(self, adj: list[dict[int, float]], node_w: list[int]):
        self.adj = adj
        self.node_w = node_w
        self.n = len(adj)


def _coarsen(level: _Level, rng: random.Random) -> tuple[_Level, list[int]]:
    """One heavy-edge-matching pass; returns (coarse level, fine->coarse map)."""
    n = level.n
    visit = list(range(n))
    rng.shuffle(visit)
    match = [-1] * n
    for u in visit:
        if match[u] != -1:
            continue
        best = -1
        best_w = 0.0
        for v, w in sorted(level.adj[u].items()):
            if match[v] != -1:
                continue
            if w > best_w or (w == best_w and (best == -1 or v < best)):
                best, best_w = v, w
        if best != -1:
            match[u] = best
            match[best] = u

    coarse_of = [-1] * n
    next_id = 0
    for u in range(n):
        if coarse_of[u] != -1:
            continue
        coarse_of[u] = next_id
        if match[u] != -1 and coarse_of[match[u]] == -1:
            coarse_of[match[u]] = next_id
        next_id += 1

    c_adj: list[dict[int, float]] = [{} for _ in range(next_id)]
    c_w = [0] * next_id
    for u in range(n):
        c_w[coarse_of[u]] += level.node_w[u]
    for u in range(n):
        cu = coarse_of[u]
        for v, w in level.adj[u].items():
            if v <= u:
                continue
            cv = coarse_of[v]
            if cu == cv:
                continue
            c_adj[cu][cv] = c_adj[cu].get(cv, 0.0) + w
            c_adj[cv][cu] = c_adj[cv].get(cu, 0.0) + w
    return _Level(c_adj, c_w), coarse_of


def _grow_initial(level: _Level, k: int, cap: int, rng: random.Random) -> list[int]:
    """Greedy graph growing into k blocks, best effort on the cap."""
    n = level.n
    target = math.ceil(sum(level.node_w) / k)
    block = [-1] * n
    unassigned = set(range(n))
    for b in range(k):
        if not unassigned:
            break
        seed = max(unassigned, key=lambda u: (sum(level.adj[u].values()), -u))
        block[seed] = b
        unassigned.discard(seed)
        weight = level.node_w[seed]
        while weight < target and unassigned:
            best = None
            best_gain = None
            for u in sorted(unassigned):
                if weight + level.node_w[u] > cap:
                    continue
                gain = sum(w for v, w in level.adj[u].items() if block[v] == b)
                if best_gain is None or gain > best_gain:
                    best, best_gain = u, gain
            if best is None:
                break
            block[best] = b
            unassigned.discard(best)
            weight += level.node_w[best]
    # leftovers go to the lightest block
    sizes = [0] * k
    for u in range(n):
        if block[u] != -1:
            sizes[block[u]] += level.node_w[u]
    for u in sorted(unassigned):
        b = min(range(k), key=lambda i: (sizes[i], i))
        block[u] = b
        sizes[b] += level.node_w[u]
    return block


def _refine(level: _Level, block: list[int], k: int, cap: int) -> None:
    """Rebalance to the cap, then greedy single-node moves that reduce cut.

    Monotone: once balanced, every accepted move strictly reduces the cut and
    keeps every block within the cap.
    """
    n = level.n
    sizes = [0] * k
    for u in range(n):
        sizes[block[u]] += level.node_w[u]

    def ext_weights(u: int) -> dict[int, float]:
        by_block: dict[int, float] = {}
        for v, w in level.adj[u].items():
            by_block[block[v]] = by_block.get(block[v], 0.0) + w
        return by_block

    # forced rebalance: pull nodes out of over-cap blocks, cheapest cut first
    guard = 0
    while max(sizes) > cap and guard <= n * k:
        guard += 1
        heavy = max(range(k), key=lambda b: (sizes[b], b))
        best = None  # (cut_delta, node, dest)
        for u in range(n):
            if block[u] != heavy:
                continue
            by_block = ext_weights(u)
            internal = by_block.get(heavy, 0.0)
            for b in range(k):
                if b == heavy or sizes[b] + level.node_w[u] > cap:
                    continue
                delta = internal - by_block.get(b, 0.0)
                cand = (delta, u, b)
                if best is None or cand < best:
                    best = cand
        if best is None:
            break
        _, u, b = best
        sizes[block[u]] -= level.node_w[u]
        block[u] = b
        sizes[b] += level.node_w[u]

    # improvement passes
    improved = True
    while improved:
        improved = False
        best = None  # (gain, node, dest) with gain > 0
        for u in range(n):
            by_block = ext_weights(u)
            src = block[u]
            internal = by_block.get(src, 0.0)
            for b, w in sorted(by_block.items()):
                if b == src:
                    continue
                if sizes[b] + level.node_w[u] > cap:
                    continue
                gain = w - internal
                if gain <= 0:
                    continue
                cand = (-gain, u, b)
                if best is None or cand < best:
                    best = cand
        if best is not None:
            _, u, b = best
            sizes[block[u]] -= level.node_w[u]
            block[u] = b
            sizes[b] += level.node_w[u]
            improved = True


def kway_partition(g: WeightedGraph, k: int, epsilon: float = 0.05, seed: int = 0) -> Partition:
    """Multilevel k-way partition: coarsen, grow, refine while uncoarsening.

    Balance bound: every block holds at most floor(ceil(n/k) * (1 + epsilon))
    nodes. k = 1 returns the trivial partition.
    """
    if k < 1:
        raise PartitionError(f"k must be >= 1, got {k}")
    if epsilon < 0:
        raise PartitionError(f"epsilon must be >= 0, got {epsilon}")
    n = g.n_nodes
    if k > n:
        raise PartitionError(f"k={k} exceeds node count {n}")
    if k == 1:
        return _finish(g, {node: 0 for node in g.nodes}, 1)

    index_of = {node: i for i, node in enumerate(g.nodes)}
    adj: list[dict[int, float]] = [{} for _ in range(n)]
    for a, b, w in g.edges:
        ia, ib = index_of[a], index_of[b]
        adj[ia][ib] = adj[ia].get(ib, 0.0) + w
        adj[ib][ia] = adj[ib].get(ia, 0.0) + w

    rng = random.Random(seed)
    cap = math.floor(math.ceil(n / k) * (1.0 + epsilon) + 1e-9)

    levels = [_Level(adj, [1] * n)]
    maps: list[list[int]] = []
    stop_at = max(2 * k, 32)
    while levels[-1].n > stop_at:
        coarse, coarse_of = _coarsen(levels[-1], rng)
        if coarse.n == levels[-1].n:
            break
        levels.append(coarse)
        maps.append(coarse_of)

    block = _grow_initial(levels[-1], k, cap, rng)
    _refine(levels[-1], block, k, cap)
    for level_idx in range(len(levels) - 2, -1, -1):
        coarse_of = maps[level_idx]
        block = [block[coarse_of[u]] for u in range(levels[level_idx].n)]
        _refine(levels[level_idx], block, k, cap)

    assignment = {node: block[index_of[node]] for node in g.nodes}
    part = _finish(g, assignment, k)
    if part.imbalance > (1.0 + epsilon) + 1e-9:
        raise PartitionError(
            f"refinement failed to satisfy balance: imbalance {part.imbalance:.3f} > {1 + epsilon}"
        )
    return part


# ---------------------------------------------------------------------------
# greedy modularity
# ---------------------------------------------------------------------------


def modularity(g: WeightedGraph, p: Partition) -> float:
    """Q = sum_i (e_ii - a_i^2) over blocks; 0 for a zero-weight graph."""
    total = g.total_weight()
    if total == 0:
        return 0.0
    inside: dict[int, float] = {}
    degree: dict[int, float] = {}
    for a, b, w in g.edges:
        ba, bb = p.assignment[a], p.assignment[b]
        if ba == bb:
            inside[ba] = inside.get(ba, 0.0) + w
        degree[ba] = degree.get(ba, 0.0) + w
        degree[bb] = degree.get(bb, 0.0) + w
    q = 0.0
    for b in sorted(set(p.assignment.values())):
        e_ii = inside.get(b, 0.0) / total
        a_i = degree.get(b, 0.0) / (2.0 * total)
        q += e_ii - a_i * a_i
    return q


def modularity_partition(g: WeightedGraph, seed: int = 0) -> Partition:
    """Greedy agglomerative merging while any merge has positive modularity gain.

    Fully deterministic: ties resolve to the smallest (community, community)
    id pair; the seed is accepted for interface symmetry with kway_partition.
    """
    if g.n_nodes == 0:
        raise PartitionError("empty graph")
    index_of = {node: i for i, node in enumerate(g.nodes)}
    total = g.total_weight()
    if total == 0:
        assignment = {node: i for i, node in enumerate(g.nodes)}
        return Partition(assignment=assignment, k=g.n_nodes, edge_cut=0.0, imbalance=1.0)

    comm_of = list(range(g.n_nodes))
    between: dict[int, dict[int, float]] = {i: {} for i in range(g.n_nodes)}
    degree = [0.0] * g.n_nodes
    for a, b, w in g.edges:
        ia, ib = index_of[a], index_of[b]
        between[ia][ib] = between[ia].get(ib, 0.0) + w
        between[ib][ia] = between[ib].get(ia, 0.0) + w
        degree[ia] += w
        degree[ib] += w

    alive = set(range(g.n_nodes))
    two_m = 2.0 * total
    while True:
        best = None  # (-gain, ci, cj)
        for ci in sorted(alive):
            for cj, w in sorted(between[ci].items()):
                if cj <= ci:
                    continue
                gain = 2.0 * (w / two_m - (degree[ci] / two_m) * (degree[cj] / two_m))
                if gain <= 0:
                    continue
                cand = (-gain, ci, cj)
                if best is None or cand < best:
                    best = cand
        if best is None:
            break
        _, ci, cj = best
        # merge cj into ci
        for other, w in between[cj].items():
            if other == ci:
                continue
            between[ci][other] = between[ci].get(other, 0.0) + w
            between[other][ci] = between[other].get(ci, 0.0) + w
        for other in between[cj]:
            del between[other][cj]
        between[cj] = {}
        degree[ci] += degree[cj]
        alive.discard(cj)
        for u in range(len(comm_of)):
            if comm_of[u] == cj:
                comm_of[u] = ci

    labels = {c: i for i, c in enumerate(sorted(alive))}
    assignment = {node: labels[comm_of[index_of[node]]] for node in g.nodes}
    part = _finish(g, assignment, len(alive))
    return part


# ---------------------------------------------------------------------------
# shareability-graph adapters
# ---------------------------------------------------------------------------

VEHICLE_TAG = "v"
REQUEST_TAG = "r"


def rv_to_weighted_graph(rv: RVGraph, weight_vr_by_cost: bool = False) -> WeightedGraph:
    """Joint graph over vehicle and request nodes with unit-weight edges.

    Vehicle nodes are tagged ('v', id) and requests ('r', id) so each block
    of a partition of this graph is an independent subproblem. When
    weight_vr_by_cost is set, vehicle-request edges get weight 1/(1+cost).
    """
    nodes = [(REQUEST_TAG, rid) for rid in rv.request_ids]
    nodes += [(VEHICLE_TAG, vid) for vid in rv.vehicle_ids]
    edges = [((REQUEST_TAG, a), (REQUEST_TAG, b), 1.0) for a, b in rv.rr_edges]
    for e in rv.vr_edges:
        w = 1.0 / (1.0 + e.cost) if weight_vr_by_cost else 1.0
        edges.append(((VEHICLE_TAG, e.vehicle_id), (REQUEST_TAG, e.request_id), w))
    return WeightedGraph.build(nodes, edges)


def split_rv(rv: RVGraph, p: Partition) -> tuple[list[RVGraph], int]:
    """Project a partition of the joint graph back onto per-block subgraphs.

    Cross-block edges are dropped and counted; the union of block node sets
    equals the original node set.
    """
    expected = {(REQUEST_TAG, rid) for rid in rv.request_ids}
    expected |= {(VEHICLE_TAG, vid) for vid in rv.vehicle_ids}
    if set(p.assignment.keys()) != expected:
        raise PartitionError("partition does not cover the RV node set exactly")

    req_block = {rid: p.assignment[(REQUEST_TAG, rid)] for rid in rv.request_ids}
    veh_block = {vid: p.assignment[(VEHICLE_TAG, vid)] for vid in rv.vehicle_ids}

    dropped = 0
    blocks: list[RVGraph] = []
    for b in range(p.k):
        rids = tuple(rid for rid in rv.request_ids if req_block[rid] == b)
        vids = tuple(vid for vid in rv.vehicle_ids if veh_block[vid] == b)
        rr = tuple(e for e in rv.rr_edges if req_block[e[0]] == b and req_block[e[1]] == b)
        vr = tuple(
            e for e in rv.vr_edges
            if veh_block[e.vehicle_id] == b and req_block[e.request_id] == b
        )
        blocks.append(
            RVGraph(
                request_ids=rids,
                vehicle_ids=vids,
                rr_edges=rr,
                vr_edges=vr,
            )
        )
    kept = sum(len(g.rr_edges) + len(g.vr_edges) for g in blocks)
    dropped = (len(rv.rr_edges) + len(rv.vr_edges)) - kept
    return blocks, dropped
