"""Ride requests: time-window derivation, CSV ingestion, and epoch batching."""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

from .network import RoadNetwork, TravelTimeOracle, nearest_node

logger = logging.getLogger(__name__)


class RequestError(ValueError):
    """A request cannot be constructed (unreachable pair, origin == destination)."""


@dataclass(frozen=True)
class Request:
    """A ride demand with derived pickup/dropoff deadlines.

    t_latest_pickup  = t_request + max_wait
    t_ideal_arrival  = t_request + shortest_time(origin, destination)
    t_latest_dropoff = t_ideal_arrival + max_delay
    """

    id: int
    origin: int
    destination: int
    t_request: int
    t_latest_pickup: int
    t_ideal_arrival: int
    t_latest_dropoff: int

    @property
    def direct_time(self) -> int:
        return self.t_ideal_arrival - self.t_request


@dataclass(frozen=True)
class RequestBatch:
    epoch: int
    requests: tuple[Request, ...]


def make_request(
    request_id: int,
    origin: int,
    destination: int,
    t_request: int,
    max_wait: int,
    max_delay: int,
    oracle: TravelTimeOracle,
) -> Request:
    if origin == destination:
        raise RequestError(f"request {request_id}: origin equals destination ({origin})")
    direct = oracle.shortest_time(origin, destination)
    if direct is None:
        raise RequestError(f"request {request_id}: destination {destination} unreachable from {origin}")
    if max_wait < 0 or max_delay < 0:
        raise RequestError(f"request {request_id}: negative window (max_wait={max_wait}, max_delay={max_delay})")
    t_ideal = t_request + direct
    return Request(
        id=request_id,
        origin=origin,
        destination=destination,
        t_request=t_request,
        t_latest_pickup=t_request + max_wait,
        t_ideal_arrival=t_ideal,
        t_latest_dropoff=t_ideal + max_delay,
    )


NODE_HEADER = ["request_id", "t_request_s", "origin_node", "dest_node"]
COORD_HEADER = [
    "request_id",
    "t_request_s",
    "pickup_lat",
    "pickup_lon",
    "dropoff_lat",
    "dropoff_lon",
]


@dataclass
class IngestResult:
    requests: list[Request]
    skipped: Counter
    trip_time_p95: int

    @property
    def n_skipped(self) -> int:
        return sum(self.skipped.values())


def _trip_time_p95(times: Sequence[int]) -> int:
    """Nearest-rank 95th percentile, at least 1 so it can normalize features."""
    if not times:
        return 1
    ordered = sorted(times)
    idx = max(0, math.ceil(0.95 * len(ordered)) - 1)
    return max(1, ordered[idx])


def load_requests_csv(
    path: str,
    oracle: TravelTimeOracle,
    max_wait: int,
    max_delay: int,
) -> IngestResult:
    """Load requests, skipping invalid rows with per-reason counts.

    The header selects the schema: explicit node ids, or pickup/dropoff
    coordinates mapped to the nearest network node.
    """
    network: RoadNetwork = oracle.network
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise RequestError(f"{path}: empty file")
        header = [h.strip() for h in header]
        if header == NODE_HEADER:
            by_coords = False
        elif header == COORD_HEADER:
            by_coords = True
        else:
            raise RequestError(f"{path}: unrecognized header {header!r}")

        requests: list[Request] = []
        skipped: Counter = Counter()
        seen_ids: set[int] = set()
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rid = int(row[0])
                t_req = int(row[1])
                if by_coords:
                    origin = nearest_node(network, float(row[2]), float(row[3]))
                    dest = nearest_node(network, float(row[4]), float(row[5]))
                else:
                    origin = int(row[2])
                    dest = int(row[3])
            except (ValueError, IndexError):
                skipped["malformed_row"] += 1
                logger.warning("%s:%d: malformed row skipped", path, lineno)
                continue
            if rid in seen_ids:
                skipped["duplicate_id"] += 1
                continue
            if origin not in network.nodes or dest not in network.nodes:
                skipped["unknown_node"] += 1
                continue
            try:
                req = make_request(rid, origin, dest, t_req, max_wait, max_delay, oracle)
            except RequestError as exc:
                reason = "origin_equals_destination" if origin == dest else "unreachable"
                skipped[reason] += 1
                logger.warning("%s:%d: %s", path, lineno, exc)
                continue
            seen_ids.add(rid)
            requests.append(req)

    requests.sort(key=lambda r: (r.t_request, r.id))
    p95 = _trip_time_p95([r.direct_time for r in requests])
    return IngestResult(requests=requests, skipped=skipped, trip_time_p95=p95)


def batch_by_epoch(
    requests: Iterable[Request],
    epoch_length: int,
    horizon: int,
) -> list[RequestBatch]:
    """Partition requests into epoch batches: batch k holds t_request in [kL, (k+1)L).

    At least ceil(horizon / epoch_length) batches are produced (empty ones
    included); the sequence is extended if any request arrives later, so the
    batching is always a partition of the input.
    """
    if epoch_length <= 0:
        raise ValueError(f"epoch_length must be positive, got {epoch_length}")
    reqs = sorted(requests, key=lambda r: (r.t_request, r.id))
    n_batches = max(0, -(-horizon // epoch_length))
    if reqs:
        n_batches = max(n_batches, reqs[-1].t_request // epoch_length + 1)
    buckets: list[list[Request]] = [[] for _ in range(n_batches)]
    for r in reqs:
        if r.t_request < 0:
            raise ValueError(f"request {r.id} has negative t_request")
        buckets[r.t_request // epoch_length].append(r)
    return [RequestBatch(epoch=k, requests=tuple(b)) for k, b in enumerate(buckets)]
