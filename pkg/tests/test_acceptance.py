"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s`. The bundled scenario is a
20x20 grid (30 s edges), 30 vehicles of capacity 4, 600 synthetic requests
over 20 one-minute epochs, deterministic budget 4000 nodes per epoch with
the vehicle-request cap at 12. The heavyweight criteria (6 and 7) run the
full pipeline across 5 demand seeds.
"""

import random
import time
from itertools import combinations

import numpy as np
import pytest

from conftest import random_request, random_vehicle
from oracles import (
    best_balanced_two_cut,
    brute_force_assignment,
    brute_force_travel,
    route_key,
)
from ridepool import feasfilter
from ridepool.assign import PROVED_OPTIMAL, solve_anytime, validate
from ridepool.partition import WeightedGraph, kway_partition, modularity, modularity_partition
from ridepool.report import read_trace, report
from ridepool.sim import (
    DEFAULT_NODE_BUDGET,
    BudgetSpec,
    DemandSpec,
    FilterSpec,
    FleetSpec,
    GridSpec,
    LimitsSpec,
    NetworkSpec,
    PartitionSpec,
    RandomDropConfig,
    SimConfig,
    SyntheticDemandSpec,
    WindowSpec,
    aggregate_epochs,
    run_simulation,
)
from ridepool.tripgen import travel
from test_assign import random_problem

BUNDLED_SEED = 100
FIVE_SEEDS = (100, 101, 102, 103, 104)


def bundled_config(seed, out=None, nodes=4000, **overrides):
    base = dict(
        network=NetworkSpec(grid=GridSpec(rows=20, cols=20, edge_time_s=30, seed=0)),
        requests=DemandSpec(synthetic=SyntheticDemandSpec(rate_per_epoch=30, seed=seed)),
        fleet=FleetSpec(n_vehicles=30, capacity=4, seed=3),
        windows=WindowSpec(max_wait_s=300, max_delay_s=600),
        n_epochs=20,
        budget=BudgetSpec(mode="deterministic", nodes=nodes),
        limits=LimitsSpec(max_vr_per_vehicle=12),
        output_dir=out,
    )
    base.update(overrides)
    return SimConfig(**base)


def trace_bytes(result):
    with open(result.trace_path, "rb") as fh:
        return fh.read()


@pytest.fixture(scope="session")
def accept_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="session")
def baseline_run(accept_dir):
    cfg = bundled_config(BUNDLED_SEED, out=str(accept_dir / "baseline"), workers=1)
    return run_simulation(cfg)


@pytest.fixture(scope="session")
def trained_filter(accept_dir):
    """Baseline run with sample logging, then offline training."""
    log_path = str(accept_dir / "samples.jsonl")
    cfg = bundled_config(
        BUNDLED_SEED, out=str(accept_dir / "logged"),
        filter=FilterSpec(enabled=False, sample_log=log_path),
    )
    run_simulation(cfg)
    samples = feasfilter.read_samples(log_path)
    rep = feasfilter.train(
        samples,
        feasfilter.TrainHyper(lr=0.1, batches=1500, batch_size=64, seed=0, rounds=3, dim=16),
    )
    params_path = str(accept_dir / "params.json")
    rep.params.save(params_path)
    return params_path, rep


def test_criterion_01_vrp_exactness(grid5_oracle):
    """travel == unpruned permutation oracle on 200 randomized instances."""
    rng = random.Random(99)
    t0 = time.monotonic()
    feasible = 0
    for trial in range(200):
        v = random_vehicle(rng, grid5_oracle, trial, capacity=4, n_onboard=rng.randrange(3))
        reqs = [
            random_request(
                rng, grid5_oracle, trial * 10 + i,
                max_wait=rng.randrange(0, 400), max_delay=rng.randrange(0, 700), spread=90,
            )
            for i in range(rng.randrange(1, 4))
        ]
        got = travel(v, reqs, 0, grid5_oracle)
        expect = brute_force_travel(v, reqs, 0, grid5_oracle)
        if expect is None:
            assert got is None
        else:
            assert got is not None
            assert got.cost == expect[0]
            assert route_key(got) == expect[1]
            feasible += 1
    wall = time.monotonic() - t0
    assert wall < 10.0
    print(f"\n[criterion 1] PASS: 200/200 instances exact ({feasible} feasible), {wall:.2f}s < 10s")


def test_criterion_02_ilp_exactness():
    """solve_anytime with unlimited budget == subset-enumeration optimum."""
    rng = random.Random(101)
    t0 = time.monotonic()
    for _ in range(100):
        p = random_problem(rng, max_edges=12, max_requests=6, max_vehicles=4)
        s = solve_anytime(p, budget=10**9)
        assert s.flag == PROVED_OPTIMAL
        assert validate(p, s) == []
        assert s.objective == brute_force_assignment(p)
    wall = time.monotonic() - t0
    assert wall < 30.0
    print(f"\n[criterion 2] PASS: 100/100 problems exact and valid, {wall:.2f}s < 30s")


def test_criterion_03_baseline_equivalence_switches(accept_dir, baseline_run):
    """filter(theta=0) == filter off; kway k=1 == partition off (bytewise)."""
    base = trace_bytes(baseline_run)

    params_path = str(accept_dir / "zero_params.json")
    feasfilter.EmbeddingParams.init(16, 3, np.random.default_rng(0)).save(params_path)
    gated = run_simulation(bundled_config(
        BUNDLED_SEED, out=str(accept_dir / "theta0"),
        filter=FilterSpec(enabled=True, threshold=0.0, params_file=params_path),
    ))
    assert trace_bytes(gated) == base

    k1 = run_simulation(bundled_config(
        BUNDLED_SEED, out=str(accept_dir / "k1"),
        partition=PartitionSpec(method="kway", k=1),
    ))
    assert trace_bytes(k1) == base
    print("\n[criterion 3] PASS: theta=0 and kway k=1 traces byte-identical to baseline")


def test_criterion_04_determinism_under_parallelism(accept_dir, baseline_run):
    """Worker counts 1, 2, 8 produce byte-identical traces."""
    base = trace_bytes(baseline_run)
    for workers in (2, 8):
        res = run_simulation(bundled_config(
            BUNDLED_SEED, out=str(accept_dir / f"workers{workers}"), workers=workers,
        ))
        assert trace_bytes(res) == base
    print("\n[criterion 4] PASS: traces for 1, 2, 8 workers byte-identical")


def test_criterion_05_gradient_correctness(grid20_oracle):
    """Analytic gradients match central differences on 2- and 3-request cliques."""
    from test_feasfilter import check_gradients

    scaling = feasfilter.FeatureScaling(max_wait=300, max_delay=600, trip_time_norm=600)
    rng = random.Random(5)
    checked = 0
    for n_requests in (2, 3, 2, 3):
        v = random_vehicle(rng, grid20_oracle, checked, n_onboard=rng.randrange(2))
        reqs = [random_request(rng, grid20_oracle, checked * 10 + i) for i in range(n_requests)]
        g = feasfilter.featurize(v, reqs, 0, grid20_oracle, scaling)
        samples = [feasfilter.CliqueSample(graph=g, label=checked % 2, epoch=0)]
        check_gradients(samples, d_p=5, rounds=3, seed=checked, step=1e-5, rel_tol=1e-4)
        checked += 1
    print(f"\n[criterion 5] PASS: {checked} randomized cliques, all gradients within 1e-4 of central differences")


def test_criterion_06_filter_usefulness(accept_dir, trained_filter):
    """At a ~0.5 skip rate the learned filter serves at least as many requests
    as random dropping, with <= 0.6x the baseline's travel-search calls."""
    params_path, train_report = trained_filter
    assert train_report.ranking_score > 0.6  # the model actually learned

    def skip_rate_at(theta):
        res = run_simulation(bundled_config(
            BUNDLED_SEED,
            filter=FilterSpec(enabled=True, threshold=theta, params_file=params_path),
        ))
        m = res.metrics
        return m.cliques_skipped / m.gate_candidates, m

    # calibrate theta on the training seed so the skip rate matches drop 0.5
    lo, hi = 0.0, 1.0
    theta = 0.45
    rate = None
    for _ in range(5):
        rate, _ = skip_rate_at(theta)
        if abs(rate - 0.5) <= 0.04:
            break
        if rate > 0.5:
            hi = theta
        else:
            lo = theta
        theta = (lo + hi) / 2
    assert rate is not None and abs(rate - 0.5) <= 0.05, f"calibration failed: {rate}"

    base_cache = {BUNDLED_SEED: aggregate_epochs(
        read_trace(str(accept_dir / "logged" / "trace.jsonl"))
    )}
    base_served, base_vrp = [], []
    filt_served, filt_vrp, filt_skip = [], [], []
    drop_served = []
    for seed in FIVE_SEEDS:
        base = base_cache.get(seed) or run_simulation(bundled_config(seed)).metrics
        filt = run_simulation(bundled_config(
            seed, filter=FilterSpec(enabled=True, threshold=theta, params_file=params_path),
        )).metrics
        drop = run_simulation(bundled_config(
            seed, random_drop=RandomDropConfig(drop_rate=0.5, seed=seed),
        )).metrics
        base_served.append(base.requests_served)
        base_vrp.append(base.vrp_calls)
        filt_served.append(filt.requests_served)
        filt_vrp.append(filt.vrp_calls)
        filt_skip.append(filt.cliques_skipped / filt.gate_candidates)
        drop_served.append(drop.requests_served)

    mean = lambda xs: sum(xs) / len(xs)
    assert 0.45 <= mean(filt_skip) <= 0.55, f"skip rate off target: {mean(filt_skip):.3f}"
    assert mean(filt_served) >= mean(drop_served), (filt_served, drop_served)
    assert mean(filt_vrp) <= 0.6 * mean(base_vrp), (filt_vrp, base_vrp)
    print(
        f"\n[criterion 6] PASS: theta={theta:.3f}, skip={mean(filt_skip):.3f}, "
        f"served filter {mean(filt_served):.1f} >= drop {mean(drop_served):.1f}, "
        f"vrp {mean(filt_vrp):.0f} <= 0.6x baseline {mean(base_vrp):.0f}"
    )


def test_criterion_07_partition_usefulness(accept_dir):
    """Under a tight trip-generation budget, kway k=4 uses no more travel-search
    calls than the unpartitioned run and keeps service within 5 points."""
    NODES = 1200  # unpartitioned trip generation must exhaust this nearly always
    un_rates, un_vrp = [], []
    kw_rates, kw_vrp = [], []
    for seed in FIVE_SEEDS:
        un = run_simulation(bundled_config(seed, nodes=NODES)).metrics
        kw = run_simulation(bundled_config(
            seed, nodes=NODES, partition=PartitionSpec(method="kway", k=4), workers=4,
        )).metrics
        assert un.tripgen_truncated_epochs >= 16, "budget not binding in >= 80% of epochs"
        un_rates.append(un.service_rate)
        un_vrp.append(un.vrp_calls)
        kw_rates.append(kw.service_rate)
        kw_vrp.append(kw.vrp_calls)

    mean = lambda xs: sum(xs) / len(xs)
    assert mean(kw_vrp) <= mean(un_vrp), (kw_vrp, un_vrp)
    assert mean(kw_rates) >= mean(un_rates) - 0.05, (kw_rates, un_rates)
    print(
        f"\n[criterion 7] PASS: vrp kway {mean(kw_vrp):.0f} <= unpartitioned {mean(un_vrp):.0f}, "
        f"service {mean(kw_rates):.3f} vs {mean(un_rates):.3f} (within 5 points)"
    )


def test_criterion_08_partition_quality():
    """Exhaustively verified kway optimum, hand-computed modularity, balance."""
    left, right = [0, 1, 2, 3], [4, 5, 6, 7]
    edges = (
        [(a, b, 1.0) for a, b in combinations(left, 2)]
        + [(a, b, 1.0) for a, b in combinations(right, 2)]
        + [(3, 4, 1.0)]
    )
    g = WeightedGraph.build(left + right, edges)
    part = kway_partition(g, 2, 0.05, seed=0)
    assert part.edge_cut == 1 == best_balanced_two_cut(g.nodes, g.edges)

    tri = WeightedGraph.build(
        range(6),
        [(a, b, 1.0) for a, b in combinations([0, 1, 2], 2)]
        + [(a, b, 1.0) for a, b in combinations([3, 4, 5], 2)],
    )
    mp = modularity_partition(tri, seed=0)
    assert mp.k == 2
    assert modularity(tri, mp) == 0.5

    rng = random.Random(8)
    for n in (12, 30, 57):
        nodes = list(range(n))
        redges = [(a, b, 1.0) for a, b in combinations(nodes, 2) if rng.random() < 0.2]
        rg = WeightedGraph.build(nodes, redges)
        for k in (2, 4):
            p = kway_partition(rg, k, 0.05, seed=n * k)
            assert p.imbalance <= 1.05 + 1e-9
    print("\n[criterion 8] PASS: kway cut=1 on twin cliques, modularity Q=0.5 on twin triangles, imbalance <= 1.05")


def test_criterion_09_metric_conservation_and_reaggregation(accept_dir, baseline_run):
    m = baseline_run.metrics
    assert m.requests_total == m.requests_served + m.expired + m.still_active
    records = read_trace(baseline_run.trace_path)
    assert aggregate_epochs(records) == m
    onboard = sum(r["onboard_seconds"] for r in records)
    veh_s = sum(r["vehicle_seconds"] for r in records)
    assert m.mean_occupancy == onboard / veh_s
    runs = report([baseline_run.trace_path], str(accept_dir / "report"), labels=["baseline"])
    assert runs["baseline"] == m
    print("\n[criterion 9] PASS: conservation, occupancy re-aggregation, and report totals exact")


def test_criterion_10_budget_compliance(baseline_run):
    constants = baseline_run.summary["constants"]
    assert constants["thirty_second_analog_nodes"] == DEFAULT_NODE_BUDGET == 200_000
    assert SimConfig.__dataclass_fields__["budget"].default.nodes == DEFAULT_NODE_BUDGET
    solver_budget = constants["solver_node_budget"]
    quota = constants["per_vehicle_call_quota"]
    assert constants["tripgen_call_budget"] + solver_budget <= 4000 + 1
    for r in baseline_run.epoch_records:
        assert r["solver_nodes"] <= solver_budget
        assert r["vrp_calls"] <= quota * 30
    print(
        f"\n[criterion 10] PASS: node budgets respected every epoch; "
        f"30s analog documented as {DEFAULT_NODE_BUDGET} nodes in run metadata"
    )
