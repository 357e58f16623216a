import random

import pytest

from ridepool.demand import make_request
from ridepool.fleet import OnboardPassenger, Vehicle
from ridepool.network import RoadNetwork, TravelTimeOracle, gen_grid


@pytest.fixture(scope="session")
def grid5():
    return gen_grid(5, 5, 30, 0)


@pytest.fixture(scope="session")
def grid5_oracle(grid5):
    return TravelTimeOracle(grid5)


@pytest.fixture(scope="session")
def grid20():
    return gen_grid(20, 20, 30, 0)


@pytest.fixture(scope="session")
def grid20_oracle(grid20):
    return TravelTimeOracle(grid20)


def line_network(n, edge_time=5, bidirectional=False):
    nodes = list(range(1, n + 1))
    edges = [(i, i + 1, edge_time) for i in range(1, n)]
    if bidirectional:
        edges += [(i + 1, i, edge_time) for i in range(1, n)]
    return RoadNetwork(nodes, edges)


def random_request(rng, oracle, rid, now=0, max_wait=300, max_delay=600, spread=60):
    nodes = sorted(oracle.network.nodes)
    while True:
        o, d = rng.choice(nodes), rng.choice(nodes)
        if o != d and oracle.shortest_time(o, d) is not None:
            break
    t = now + rng.randrange(spread)
    return make_request(rid, o, d, t, max_wait, max_delay, oracle)


def random_vehicle(rng, oracle, vid, capacity=4, n_onboard=0, now=0, max_delay=600):
    nodes = sorted(oracle.network.nodes)
    node = rng.choice(nodes)
    onboard = []
    for i in range(n_onboard):
        dest = rng.choice([n for n in nodes if n != node])
        direct = oracle.shortest_time(node, dest)
        onboard.append(
            OnboardPassenger(
                request_id=9000 + vid * 10 + i,
                destination=dest,
                t_latest_dropoff=now + direct + rng.randrange(60, max_delay),
            )
        )
    onboard.sort(key=lambda p: p.request_id)
    return Vehicle(id=vid, capacity=capacity, node=node, onboard=tuple(onboard))
