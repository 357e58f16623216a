"""Directed road network with integer travel times and exact shortest-time queries.

All travel times are integer seconds; every downstream deadline check is
integral, so feasibility decisions are exact and platform independent.
"""

from __future__ import annotations

import csv
import random
from heapq import heappop, heappush
from typing import Iterable, Mapping, Optional

UNREACHABLE = None


class NetworkError(ValueError):
    """Malformed network input (parse or validation failure)."""


class UnknownNodeError(KeyError):
    """A query referenced a node id that is not part of the network."""


class RoadNetwork:
    """Immutable directed graph over integer node ids.

    Edges are (from, to, travel_time_s) with strictly positive integer times.
    Parallel edges are allowed; queries use the fastest one. Coordinates are
    optional and used only for reporting and nearest-node mapping.
    """

    def __init__(
        self,
        nodes: Iterable[int],
        edges: Iterable[tuple[int, int, int]],
        coords: Optional[Mapping[int, tuple[float, float]]] = None,
    ):
        node_list = list(nodes)
        node_set = set(node_list)
        if len(node_list) != len(node_set):
            seen = set()
            for n in node_list:
                if n in seen:
                    raise NetworkError(f"duplicate node id {n}")
                seen.add(n)
        self.nodes: frozenset[int] = frozenset(node_set)
        edge_list = []
        for u, v, w in edges:
            if u not in node_set:
                raise NetworkError(f"edge ({u},{v}) references undeclared node {u}")
            if v not in node_set:
                raise NetworkError(f"edge ({u},{v}) references undeclared node {v}")
            w = int(w)
            if w <= 0:
                raise NetworkError(f"edge ({u},{v}) has non-positive travel time {w}")
            edge_list.append((int(u), int(v), w))
        edge_list.sort()
        self.edges: tuple[tuple[int, int, int], ...] = tuple(edge_list)
        self.coords: dict[int, tuple[float, float]] = dict(coords) if coords else {}

        # fastest-edge adjacency, neighbor lists sorted by id for determinism
        out: dict[int, dict[int, int]] = {n: {} for n in node_set}
        inc: dict[int, dict[int, int]] = {n: {} for n in node_set}
        for u, v, w in edge_list:
            if v not in out[u] or w < out[u][v]:
                out[u][v] = w
            if u not in inc[v] or w < inc[v][u]:
                inc[v][u] = w
        self._out = {u: tuple(sorted(nbrs.items())) for u, nbrs in out.items()}
        self._in = {v: tuple(sorted(nbrs.items())) for v, nbrs in inc.items()}

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def out_neighbors(self, u: int) -> tuple[tuple[int, int], ...]:
        try:
            return self._out[u]
        except KeyError:
            raise UnknownNodeError(u) from None

    def in_neighbors(self, v: int) -> tuple[tuple[int, int], ...]:
        try:
            return self._in[v]
        except KeyError:
            raise UnknownNodeError(v) from None

    def edge_time(self, u: int, v: int) -> int:
        """Fastest direct edge time; raises if no (u, v) edge exists."""
        for nbr, w in self.out_neighbors(u):
            if nbr == v:
                return w
        raise NetworkError(f"no edge ({u},{v})")


class TravelTimeOracle:
    """Exact shortest-travel-time and shortest-path queries with memoization.

    One Dijkstra run per *destination* node (over reversed edges) serves every
    source; results are memoized for the lifetime of the oracle. Safe for
    concurrent readers: a race at worst recomputes the same immutable table.
    """

    def __init__(self, network: RoadNetwork):
        self.network = network
        self._to_dest: dict[int, dict[int, int]] = {}

    def _times_to(self, dest: int) -> dict[int, int]:
        cached = self._to_dest.get(dest)
        if cached is not None:
            return cached
        if dest not in self.network.nodes:
            raise UnknownNodeError(dest)
        dist: dict[int, int] = {dest: 0}
        heap: list[tuple[int, int]] = [(0, dest)]
        in_nbrs = self.network.in_neighbors
        while heap:
            d, v = heappop(heap)
            if d > dist.get(v, d):
                continue
            for u, w in in_nbrs(v):
                nd = d + w
                if nd < dist.get(u, nd + 1):
                    dist[u] = nd
                    heappush(heap, (nd, u))
        self._to_dest[dest] = dist
        return dist

    def shortest_time(self, u: int, v: int) -> Optional[int]:
        """Exact shortest travel time in seconds, or None if v is unreachable."""
        if u not in self.network.nodes:
            raise UnknownNodeError(u)
        return self._times_to(v).get(u)

    def shortest_path(self, u: int, v: int) -> Optional[list[int]]:
        """A shortest path as a node list, or None if unreachable.

        Ties are broken by always stepping to the smallest next node id that
        stays on a shortest path, which makes routes deterministic.
        """
        dist = self._times_to(v)
        if u not in self.network.nodes:
            raise UnknownNodeError(u)
        remaining = dist.get(u)
        if remaining is None:
            return None
        path = [u]
        cur = u
        while cur != v:
            here = dist[cur]
            for nbr, w in self.network.out_neighbors(cur):
                d_nbr = dist.get(nbr)
                if d_nbr is not None and w + d_nbr == here:
                    path.append(nbr)
                    cur = nbr
                    break
            else:  # pragma: no cover - contradicts dist[cur] being finite
                raise AssertionError(f"no shortest-path successor from {cur} to {v}")
        return path


def shortest_time(oracle: TravelTimeOracle, u: int, v: int) -> Optional[int]:
    return oracle.shortest_time(u, v)


def shortest_path(oracle: TravelTimeOracle, u: int, v: int) -> Optional[list[int]]:
    return oracle.shortest_path(u, v)


def load_network(nodes_file: str, edges_file: str) -> RoadNetwork:
    """Load a network from two CSV files.

    nodes CSV header: node_id,lat,lon (lat/lon may be empty).
    edges CSV header: from,to,travel_time_s.
    """
    nodes: list[int] = []
    coords: dict[int, tuple[float, float]] = {}
    with open(nodes_file, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:1]] != ["node_id"]:
            raise NetworkError(f"{nodes_file}: expected header starting with node_id")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                node_id = int(row[0])
            except (ValueError, IndexError):
                raise NetworkError(f"{nodes_file}:{lineno}: bad node_id {row[:1]!r}") from None
            if node_id < 0:
                raise NetworkError(f"{nodes_file}:{lineno}: node ids must be unsigned, got {node_id}")
            nodes.append(node_id)
            if len(row) >= 3 and row[1].strip() and row[2].strip():
                try:
                    coords[node_id] = (float(row[1]), float(row[2]))
                except ValueError:
                    raise NetworkError(f"{nodes_file}:{lineno}: bad coordinates {row[1:3]!r}") from None

    edges: list[tuple[int, int, int]] = []
    with open(edges_file, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["from", "to", "travel_time_s"]:
            raise NetworkError(f"{edges_file}: expected header from,to,travel_time_s")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                u, v, w = int(row[0]), int(row[1]), int(row[2])
            except (ValueError, IndexError):
                raise NetworkError(f"{edges_file}:{lineno}: bad edge row {row!r}") from None
            if w <= 0:
                raise NetworkError(f"{edges_file}:{lineno}: travel_time_s must be positive, got {w}")
            edges.append((u, v, w))

    return RoadNetwork(nodes, edges, coords)


def gen_grid(rows: int, cols: int, edge_time: int, seed: int) -> RoadNetwork:
    """4-connected bidirectional grid; node id = row * cols + col.

    Coordinates are synthetic (0.001 degrees per cell plus a small seeded
    jitter) so coordinate-based request ingestion can be exercised.
    """
    if rows < 1 or cols < 1:
        raise NetworkError(f"grid dimensions must be >= 1, got {rows}x{cols}")
    if edge_time <= 0:
        raise NetworkError(f"edge_time must be positive, got {edge_time}")
    rng = random.Random(seed)
    nodes = list(range(rows * cols))
    coords = {}
    for r in range(rows):
        for c in range(cols):
            jitter = (rng.uniform(-1e-4, 1e-4), rng.uniform(-1e-4, 1e-4))
            coords[r * cols + c] = (r * 1e-3 + jitter[0], c * 1e-3 + jitter[1])
    edges = []
    for r in range(rows):
        for c in range(cols):
            n = r * cols + c
            if c + 1 < cols:
                edges.append((n, n + 1, edge_time))
                edges.append((n + 1, n, edge_time))
            if r + 1 < rows:
                edges.append((n, n + cols, edge_time))
                edges.append((n + cols, n, edge_time))
    return RoadNetwork(nodes, edges, coords)


def nearest_node(network: RoadNetwork, lat: float, lon: float) -> int:
    """Nearest node by straight-line distance over the stored coordinates."""
    if not network.coords:
        raise NetworkError("network has no coordinates; cannot map lat/lon")
    best = None
    best_d2 = None
    for node in sorted(network.coords):
        nlat, nlon = network.coords[node]
        d2 = (nlat - lat) ** 2 + (nlon - lon) ** 2
        if best_d2 is None or d2 < best_d2:
            best, best_d2 = node, d2
    return best
