import json
import os
from types import SimpleNamespace

import numpy as np
import pytest

from ridepool import feasfilter
from ridepool.report import TraceError, read_trace, report
from ridepool.sim import (
    BudgetSpec,
    ConfigError,
    DemandSpec,
    FilterSpec,
    FleetSpec,
    GridSpec,
    LimitsSpec,
    NetworkSpec,
    PartitionSpec,
    RandomDropConfig,
    RandomDropFilter,
    SimConfig,
    SyntheticDemandSpec,
    WindowSpec,
    aggregate_epochs,
    config_from_dict,
    load_config,
    run_simulation,
)


def small_config(tmp_path=None, **overrides):
    base = dict(
        network=NetworkSpec(grid=GridSpec(rows=10, cols=10, edge_time_s=30, seed=0)),
        requests=DemandSpec(synthetic=SyntheticDemandSpec(rate_per_epoch=8, seed=5)),
        fleet=FleetSpec(n_vehicles=8, capacity=4, seed=2),
        windows=WindowSpec(max_wait_s=300, max_delay_s=600),
        n_epochs=8,
        budget=BudgetSpec(mode="deterministic", nodes=2000),
        limits=LimitsSpec(max_vr_per_vehicle=10),
    )
    if tmp_path is not None:
        base["output_dir"] = str(tmp_path)
    base.update(overrides)
    return SimConfig(**base)


class TestScenarios:
    def test_single_vehicle_at_origin_perfect_service(self):
        cfg = SimConfig(
            network=NetworkSpec(grid=GridSpec(rows=3, cols=3, edge_time_s=30, seed=0)),
            requests=DemandSpec(synthetic=SyntheticDemandSpec(rate_per_epoch=0, seed=0)),
            fleet=FleetSpec(n_vehicles=1, capacity=4, seed=0),
            windows=WindowSpec(max_wait_s=300, max_delay_s=600),
            n_epochs=2,
        )
        res = run_simulation(cfg)
        # no synthetic demand: idle run, no service either way
        assert res.metrics.requests_total == 0
        assert res.metrics.service_rate == 0.0
        assert res.metrics.empty_travel_time_s == 0

    def test_request_at_vehicle_position_served_without_wait(self, tmp_path):
        # place the only vehicle deterministically, then request from its node
        from ridepool.fleet import place_fleet
        from ridepool.network import gen_grid

        net = gen_grid(3, 3, 30, 0)
        start = place_fleet(net, 1, 4, seed=0)[0].node
        dest = (start + 1) % 9 if (start + 1) % 9 != start else start + 3
        req_file = tmp_path / "requests.csv"
        req_file.write_text(
            "request_id,t_request_s,origin_node,dest_node\n"
            f"1,0,{start},{dest}\n"
        )
        cfg = SimConfig(
            network=NetworkSpec(grid=GridSpec(rows=3, cols=3, edge_time_s=30, seed=0)),
            requests=DemandSpec(file=str(req_file)),
            fleet=FleetSpec(n_vehicles=1, capacity=4, seed=0),
            windows=WindowSpec(max_wait_s=300, max_delay_s=600),
            n_epochs=2,
        )
        res = run_simulation(cfg)
        assert res.metrics.requests_served == 1
        assert res.metrics.service_rate == 1.0
        assert res.metrics.mean_wait_s == 0.0
        assert res.metrics.empty_travel_time_s == 0

    def test_no_vehicles_everything_expires(self):
        cfg = SimConfig(
            network=NetworkSpec(grid=GridSpec(rows=4, cols=4, edge_time_s=30, seed=0)),
            requests=DemandSpec(synthetic=SyntheticDemandSpec(rate_per_epoch=5, seed=1)),
            fleet=FleetSpec(n_vehicles=0, capacity=4, seed=0),
            windows=WindowSpec(max_wait_s=60, max_delay_s=120),
            n_epochs=6,
        )
        res = run_simulation(cfg)
        m = res.metrics
        assert m.requests_served == 0
        assert m.service_rate == 0.0
        # everything that could expire inside the horizon did
        assert m.expired == sum(r["expired"] for r in res.epoch_records)
        assert m.requests_total == m.expired + m.still_active

    def test_conservation_and_occupancy_reaggregation(self, tmp_path):
        cfg = small_config(tmp_path)
        res = run_simulation(cfg)
        m = res.metrics
        assert m.requests_total == m.requests_served + m.expired + m.still_active
        # re-aggregate from the written trace
        records = read_trace(res.trace_path)
        again = aggregate_epochs(records)
        assert again == m
        onboard = sum(r["onboard_seconds"] for r in records)
        veh_s = sum(r["vehicle_seconds"] for r in records)
        assert m.mean_occupancy == onboard / veh_s

    def test_budget_compliance(self, tmp_path):
        cfg = small_config(tmp_path)
        res = run_simulation(cfg)
        solver_budget = res.summary["constants"]["solver_node_budget"]
        quota = res.summary["constants"]["per_vehicle_call_quota"]
        tripgen_budget = res.summary["constants"]["tripgen_call_budget"]
        assert res.summary["constants"]["thirty_second_analog_nodes"] == 200_000
        for r in res.epoch_records:
            assert r["solver_nodes"] <= solver_budget
            assert r["vrp_calls"] <= quota * cfg.fleet.n_vehicles <= tripgen_budget


class TestDeterminism:
    def run_trace(self, tmp_path, name, **overrides):
        out = tmp_path / name
        cfg = small_config(out, **overrides)
        res = run_simulation(cfg)
        with open(res.trace_path, "rb") as fh:
            return fh.read()

    def test_identical_configs_identical_traces(self, tmp_path):
        a = self.run_trace(tmp_path, "a")
        b = self.run_trace(tmp_path, "b")
        assert a == b

    def test_worker_count_does_not_change_trace(self, tmp_path):
        base = self.run_trace(tmp_path, "w1", workers=1)
        for workers in (2, 8):
            other = self.run_trace(tmp_path, f"w{workers}", workers=workers)
            assert other == base

    def test_filter_threshold_zero_equals_disabled(self, tmp_path):
        params_path = str(tmp_path / "params.json")
        params = feasfilter.EmbeddingParams.init(8, 2, np.random.default_rng(0))
        params.save(params_path)
        disabled = self.run_trace(tmp_path, "disabled")
        gated = self.run_trace(
            tmp_path, "gated",
            filter=FilterSpec(enabled=True, threshold=0.0, params_file=params_path),
        )
        assert gated == disabled

    def test_partition_k1_equals_disabled(self, tmp_path):
        off = self.run_trace(tmp_path, "off")
        k1 = self.run_trace(tmp_path, "k1", partition=PartitionSpec(method="kway", k=1))
        assert k1 == off

    def test_drop_rate_zero_equals_baseline(self, tmp_path):
        base = self.run_trace(tmp_path, "base")
        dropped = self.run_trace(tmp_path, "crop", random_drop=RandomDropConfig(drop_rate=0.0, seed=9))
        assert dropped == base


class TestRandomDrop:
    def test_rate_one_blocks_all_pairs(self, tmp_path):
        res = run_simulation(small_config(
            tmp_path, random_drop=RandomDropConfig(drop_rate=1.0, seed=1)
        ))
        m = res.metrics
        assert m.cliques_skipped == m.gate_candidates > 0
        assert m.vrp_calls == 0  # only reused size-1 certificates remain

    def test_skip_fraction_binomial_bound(self):
        hook = RandomDropFilter(RandomDropConfig(drop_rate=0.5, seed=3))
        vehicle = SimpleNamespace(id=0)
        skipped = 0
        n = 10_000
        for i in range(n):
            requests = (SimpleNamespace(id=2 * i), SimpleNamespace(id=2 * i + 1))
            if hook.gate(vehicle, requests, now=0):
                skipped += 1
        assert 0.48 <= skipped / n <= 0.52

    def test_size_one_never_dropped(self):
        hook = RandomDropFilter(RandomDropConfig(drop_rate=1.0, seed=3))
        assert hook.gate(SimpleNamespace(id=0), (SimpleNamespace(id=1),), 0) is False

    def test_decision_is_order_independent(self):
        hook = RandomDropFilter(RandomDropConfig(drop_rate=0.5, seed=11))
        vehicle = SimpleNamespace(id=4)
        reqs = (SimpleNamespace(id=10), SimpleNamespace(id=11))
        first = hook.gate(vehicle, reqs, now=60)
        for _ in range(5):
            assert hook.gate(vehicle, reqs, now=60) == first


class TestConfigValidation:
    def base_doc(self):
        return {
            "network": {"grid": {"rows": 4, "cols": 4, "edge_time_s": 30, "seed": 0}},
            "requests": {"synthetic": {"rate_per_epoch": 2, "seed": 0}},
            "fleet": {"n_vehicles": 2, "capacity": 4, "seed": 0},
            "windows": {"max_wait_s": 300, "max_delay_s": 600},
            "n_epochs": 2,
        }

    def test_minimal_document_accepted(self):
        cfg = config_from_dict(self.base_doc())
        assert cfg.n_epochs == 2
        assert cfg.budget.nodes == 200_000

    def test_unknown_top_level_key_rejected(self):
        doc = self.base_doc()
        doc["typo_key"] = 1
        with pytest.raises(ConfigError, match="typo_key"):
            config_from_dict(doc)

    def test_unknown_nested_key_rejected(self):
        doc = self.base_doc()
        doc["fleet"]["color"] = "red"
        with pytest.raises(ConfigError, match="color"):
            config_from_dict(doc)

    def test_missing_mandatory_key_rejected(self):
        doc = self.base_doc()
        del doc["windows"]
        with pytest.raises(ConfigError, match="windows"):
            config_from_dict(doc)

    def test_realtime_budget_must_fit_epoch(self):
        doc = self.base_doc()
        doc["budget"] = {"mode": "realtime", "ms": 60_000}
        with pytest.raises(ConfigError, match="epoch"):
            config_from_dict(doc)

    def test_missing_file_reported(self, tmp_path):
        with pytest.raises(ConfigError, match="nope.json"):
            load_config(str(tmp_path / "nope.json"))

    def test_both_network_forms_rejected(self):
        doc = self.base_doc()
        doc["network"]["files"] = {"nodes": "x", "edges": "y"}
        with pytest.raises(ConfigError):
            config_from_dict(doc)


class TestReport:
    def test_reaggregation_equals_summary(self, tmp_path):
        out = tmp_path / "run"
        res = run_simulation(small_config(out))
        runs = report([res.trace_path], str(tmp_path / "rep"), labels=["run"])
        assert runs["run"] == res.metrics
        assert (tmp_path / "rep" / "summary.json").exists()
        assert (tmp_path / "rep" / "per_epoch.csv").exists()
        assert (tmp_path / "rep" / "comparison.csv").exists()

    def test_two_runs_comparison_rows(self, tmp_path):
        r1 = run_simulation(small_config(tmp_path / "a"))
        r2 = run_simulation(small_config(tmp_path / "b", fleet=FleetSpec(n_vehicles=4, capacity=4, seed=2)))
        report([r1.trace_path, r2.trace_path], str(tmp_path / "rep"), labels=["a", "b"])
        rows = (tmp_path / "rep" / "comparison.csv").read_text().strip().splitlines()
        assert len(rows) == 3  # header + 2 runs

    def test_empty_trace_rejected(self, tmp_path):
        empty = tmp_path / "empty.jsonl"
        empty.write_text("")
        with pytest.raises(TraceError, match="no epochs"):
            report([str(empty)], str(tmp_path / "rep"))


class TestPartitionedRuns:
    def test_kway_partitioned_run_completes_and_counts_cuts(self, tmp_path):
        res = run_simulation(small_config(
            tmp_path, partition=PartitionSpec(method="kway", k=4), workers=4,
        ))
        assert res.metrics.requests_total > 0
        assert any(r["blocks"] > 1 for r in res.epoch_records)

    def test_modularity_partitioned_run_completes(self, tmp_path):
        res = run_simulation(small_config(
            tmp_path, partition=PartitionSpec(method="modularity"),
        ))
        assert res.metrics.requests_total > 0

    def test_partitioned_trace_stable_across_workers(self, tmp_path):
        traces = []
        for workers in (1, 4):
            out = tmp_path / f"w{workers}"
            res = run_simulation(small_config(
                out, partition=PartitionSpec(method="kway", k=3), workers=workers,
            ))
            with open(res.trace_path, "rb") as fh:
                traces.append(fh.read())
        assert traces[0] == traces[1]


class TestAbortDiagnostics:
    def test_abort_writes_dump_with_epoch_index(self, tmp_path):
        from ridepool.fleet import Vehicle
        from ridepool.sim import SimulationAbort, _abort

        cfg = small_config(tmp_path)
        vehicles = [Vehicle(id=0, capacity=4, node=0)]
        with pytest.raises(SimulationAbort, match="epoch 3"):
            _abort(cfg, 3, "synthetic failure", vehicles, {7: None})
        dump = json.loads((tmp_path / "abort_epoch0003.json").read_text())
        assert dump["epoch"] == 3
        assert dump["reason"] == "synthetic failure"
        assert dump["pool"] == [7]
        assert dump["vehicles"][0]["id"] == 0


class TestRealtimeMode:
    def test_realtime_run_records_wall_usage(self, tmp_path):
        cfg = small_config(
            tmp_path,
            budget=BudgetSpec(mode="realtime", ms=2000),
            n_epochs=3,
        )
        res = run_simulation(cfg)
        assert res.metrics.requests_total > 0
        for r in res.epoch_records:
            assert "wall_ms" in r
            # generous ceiling: the budget plus scheduling slack
            assert r["wall_ms"] <= 2000 * 1.5 + 500
        assert res.summary["constants"]["budget_mode"] == "realtime"

    def test_deterministic_trace_has_no_wall_fields(self, tmp_path):
        res = run_simulation(small_config(tmp_path, n_epochs=2))
        assert all("wall_ms" not in r for r in res.epoch_records)


class TestSampleLoggingRun:
    def test_baseline_run_produces_trainable_log(self, tmp_path):
        log_path = str(tmp_path / "samples.jsonl")
        res = run_simulation(small_config(
            tmp_path / "run",
            filter=FilterSpec(enabled=False, sample_log=log_path),
        ))
        samples = feasfilter.read_samples(log_path)
        assert len(samples) == res.metrics.vrp_calls
        labels = {s.label for s in samples}
        assert labels == {0, 1}
