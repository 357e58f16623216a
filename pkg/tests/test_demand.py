import random

import pytest
from hypothesis import given, settings, strategies as st

from oracles import bellman_ford
from ridepool.demand import (
    RequestError,
    batch_by_epoch,
    load_requests_csv,
    make_request,
)
from ridepool.network import RoadNetwork, TravelTimeOracle


@pytest.fixture(scope="module")
def pair_oracle():
    net = RoadNetwork([1, 2], [(1, 2, 100), (2, 1, 100)])
    return TravelTimeOracle(net)


class TestMakeRequest:
    def test_window_derivation(self, pair_oracle):
        r = make_request(1, 1, 2, 0, 300, 600, pair_oracle)
        assert r.t_latest_pickup == 300
        assert r.t_ideal_arrival == 100
        assert r.t_latest_dropoff == 700

    def test_zero_slack(self, pair_oracle):
        r = make_request(1, 1, 2, 50, 0, 0, pair_oracle)
        assert r.t_latest_pickup == r.t_request == 50
        assert r.t_latest_dropoff == r.t_ideal_arrival == 150

    def test_origin_equals_destination_rejected(self, pair_oracle):
        with pytest.raises(RequestError):
            make_request(1, 1, 1, 0, 300, 600, pair_oracle)

    def test_unreachable_rejected(self):
        net = RoadNetwork([1, 2, 3], [(1, 2, 5)])
        oracle = TravelTimeOracle(net)
        with pytest.raises(RequestError):
            make_request(1, 2, 1, 0, 300, 600, oracle)

    def test_random_windows_match_independent_recomputation(self, grid20, grid20_oracle):
        rng = random.Random(13)
        nodes = sorted(grid20.nodes)
        for rid in range(100):
            o, d = rng.sample(nodes, 2)
            t = rng.randrange(1200)
            mw, md = rng.randrange(0, 600), rng.randrange(0, 900)
            r = make_request(rid, o, d, t, mw, md, grid20_oracle)
            direct = bellman_ford(nodes, grid20.edges, o)[d]
            assert r.t_latest_pickup == t + mw
            assert r.t_ideal_arrival == t + direct
            assert r.t_latest_dropoff == t + direct + md

    def test_window_monotonicity(self, pair_oracle):
        base = make_request(1, 1, 2, 0, 100, 100, pair_oracle)
        wider = make_request(1, 1, 2, 0, 150, 130, pair_oracle)
        assert wider.t_latest_pickup >= base.t_latest_pickup
        assert wider.t_latest_dropoff >= base.t_latest_dropoff


class TestLoadRequestsCsv:
    HEADER = "request_id,t_request_s,origin_node,dest_node\n"

    def test_well_formed_rows_sorted(self, tmp_path, pair_oracle):
        f = tmp_path / "r.csv"
        f.write_text(self.HEADER + "1,30,1,2\n2,10,2,1\n3,20,1,2\n")
        res = load_requests_csv(str(f), pair_oracle, 300, 600)
        assert [r.id for r in res.requests] == [2, 3, 1]
        assert res.n_skipped == 0

    def test_origin_equals_destination_skipped(self, tmp_path, pair_oracle):
        f = tmp_path / "r.csv"
        f.write_text(self.HEADER + "1,0,1,1\n2,0,1,2\n")
        res = load_requests_csv(str(f), pair_oracle, 300, 600)
        assert len(res.requests) == 1
        assert res.skipped["origin_equals_destination"] == 1

    def test_malformed_header_rejected(self, tmp_path, pair_oracle):
        f = tmp_path / "r.csv"
        f.write_text("alpha,beta\n1,2\n")
        with pytest.raises(RequestError):
            load_requests_csv(str(f), pair_oracle, 300, 600)

    def test_coordinate_schema_maps_to_nearest_node(self, tmp_path, grid5, grid5_oracle):
        header = "request_id,t_request_s,pickup_lat,pickup_lon,dropoff_lat,dropoff_lon\n"
        olat, olon = grid5.coords[0]
        dlat, dlon = grid5.coords[24]
        f = tmp_path / "r.csv"
        f.write_text(header + f"7,5,{olat},{olon},{dlat},{dlon}\n")
        res = load_requests_csv(str(f), grid5_oracle, 300, 600)
        assert len(res.requests) == 1
        assert res.requests[0].origin == 0
        assert res.requests[0].destination == 24

    def test_trip_time_p95(self, tmp_path, pair_oracle):
        f = tmp_path / "r.csv"
        f.write_text(self.HEADER + "".join(f"{i},{i},1,2\n" for i in range(10)))
        res = load_requests_csv(str(f), pair_oracle, 300, 600)
        assert res.trip_time_p95 == 100


class TestBatchByEpoch:
    def test_boundaries_at_sixty_seconds(self, pair_oracle):
        reqs = [
            make_request(1, 1, 2, 0, 300, 600, pair_oracle),
            make_request(2, 1, 2, 59, 300, 600, pair_oracle),
            make_request(3, 1, 2, 60, 300, 600, pair_oracle),
        ]
        batches = batch_by_epoch(reqs, 60, 120)
        assert [r.id for r in batches[0].requests] == [1, 2]
        assert [r.id for r in batches[1].requests] == [3]

    def test_empty_input(self):
        assert batch_by_epoch([], 60, 0) == []

    def test_partition_property(self, pair_oracle):
        rng = random.Random(5)
        reqs = [
            make_request(i, 1, 2, rng.randrange(3600), 300, 600, pair_oracle)
            for i in range(1000)
        ]
        batches = batch_by_epoch(reqs, 60, 3600)
        seen = {}
        for b in batches:
            for r in b.requests:
                assert r.id not in seen
                seen[r.id] = b.epoch
                assert b.epoch == r.t_request // 60
        assert len(seen) == 1000

    def test_bad_epoch_length(self):
        with pytest.raises(ValueError):
            batch_by_epoch([], 0, 60)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 10_000), max_size=40), st.integers(1, 600))
def test_batch_index_is_floor_division(times, epoch_length):
    net = RoadNetwork([1, 2], [(1, 2, 100), (2, 1, 100)])
    oracle = TravelTimeOracle(net)
    reqs = [make_request(i, 1, 2, t, 300, 600, oracle) for i, t in enumerate(times)]
    batches = batch_by_epoch(reqs, epoch_length, 0)
    placed = 0
    for b in batches:
        for r in b.requests:
            assert b.epoch == r.t_request // epoch_length
            placed += 1
    assert placed == len(times)
