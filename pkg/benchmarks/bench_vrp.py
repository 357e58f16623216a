"""Benchmark the compiled stop-ordering kernel against the pure-Python fallback.

Times two things on identical randomized instances, verifying both kernels
agree bit for bit:
  * end-to-end travel() (matrix assembly + search), and
  * the raw kernel search on pre-built arrays.
Usage: python benchmarks/bench_vrp.py [n_instances]
"""

import random
import sys
import time

from ridepool._kernels import KERNEL, _vrp_py

try:
    from ridepool._kernels import _vrp_c
except ImportError:
    _vrp_c = None

from ridepool.demand import make_request
from ridepool.fleet import OnboardPassenger, Vehicle
from ridepool.network import TravelTimeOracle, gen_grid
from ridepool import tripgen

INF = 1 << 40


def make_instances(n, oracle, max_new, n_onboard, seed, max_wait=300, max_delay=600):
    rng = random.Random(seed)
    nodes = sorted(oracle.network.nodes)
    instances = []
    for trial in range(n):
        node = rng.choice(nodes)
        onboard = []
        for i in range(n_onboard):
            dest = rng.choice([x for x in nodes if x != node])
            direct = oracle.shortest_time(node, dest)
            onboard.append(OnboardPassenger(
                request_id=9000 + i, destination=dest,
                t_latest_dropoff=direct + rng.randrange(60, max_delay),
            ))
        vehicle = Vehicle(id=trial, capacity=4, node=node,
                          onboard=tuple(sorted(onboard, key=lambda p: p.request_id)))
        reqs = []
        for i in range(max_new):
            while True:
                o, d = rng.choice(nodes), rng.choice(nodes)
                if o != d:
                    break
            reqs.append(make_request(i, o, d, rng.randrange(60), max_wait, max_delay, oracle))
        instances.append((vehicle, tuple(reqs)))
    return instances


def raw_arrays(vehicle, reqs, oracle):
    """The same stop table travel() builds, for kernel-only timing."""
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
    partner = [pickup_index[e[7]] if e[2] == 1 and e[7] in pickup_index else -1 for e in entries]
    nodes = [vehicle.node] + [e[1] for e in entries]
    tt = [[oracle.shortest_time(u, v) if oracle.shortest_time(u, v) is not None else INF for v in nodes] for u in nodes]
    return (n, kind, ready, deadline, has_cost, ideal, partner, tt, 0, len(vehicle.onboard), vehicle.capacity)


def time_travel(kernel, instances, oracle):
    tripgen.solve_stop_order = kernel.solve_stop_order
    results = []
    t0 = time.perf_counter()
    for vehicle, reqs in instances:
        results.append(tripgen.travel(vehicle, reqs, 0, oracle))
    return results, time.perf_counter() - t0


def time_kernel(kernel, arrays):
    results = []
    t0 = time.perf_counter()
    for args in arrays:
        results.append(kernel.solve_stop_order(*args))
    return results, time.perf_counter() - t0


def main():
    n = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
    oracle = TravelTimeOracle(gen_grid(15, 15, 30, 0))
    print(f"default kernel in this build: {KERNEL}")
    if _vrp_c is None:
        print("compiled kernel unavailable; nothing to compare")

    cases = [
        ("2 stops", 1, 0, 300, 600),
        ("5 stops", 2, 1, 300, 600),
        ("8 stops", 3, 2, 300, 600),
        ("10 stops", 4, 2, 300, 600),
        ("10 stops, loose", 4, 2, 1200, 3600),
    ]
    original = tripgen.solve_stop_order
    hdr = f"{'case':>16} {'py travel ms':>13} {'c travel ms':>12} {'speedup':>8} {'py kern ms':>11} {'c kern ms':>10} {'speedup':>8}"
    print(hdr)
    try:
        for name, max_new, n_onboard, mw, md in cases:
            instances = make_instances(n, oracle, max_new, n_onboard,
                                       seed=max_new * 7 + n_onboard, max_wait=mw, max_delay=md)
            arrays = [raw_arrays(v, r, oracle) for v, r in instances]
            py_res, py_t = time_travel(_vrp_py, instances, oracle)
            py_k, py_kt = time_kernel(_vrp_py, arrays)
            if _vrp_c is None:
                print(f"{name:>16} {py_t*1000:>13.1f} {'-':>12} {'-':>8} {py_kt*1000:>11.1f} {'-':>10} {'-':>8}")
                continue
            c_res, c_t = time_travel(_vrp_c, instances, oracle)
            c_k, c_kt = time_kernel(_vrp_c, arrays)
            for a, b in zip(py_res, c_res):
                assert (a is None) == (b is None)
                if a is not None:
                    assert a.cost == b.cost and a.stops == b.stops
            assert py_k == c_k
            print(f"{name:>16} {py_t*1000:>13.1f} {c_t*1000:>12.1f} {py_t/c_t:>7.1f}x "
                  f"{py_kt*1000:>11.1f} {c_kt*1000:>10.1f} {py_kt/c_kt:>7.1f}x")
    finally:
        tripgen.solve_stop_order = original


if __name__ == "__main__":
    main()
