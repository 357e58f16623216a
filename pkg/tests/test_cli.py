import csv
import json

from ridepool import feasfilter
from ridepool.cli import main


def run_cli(*argv):
    return main(list(argv))


class TestGenSynthetic:
    def test_empty_scenario_is_valid(self, tmp_path, capsys):
        out = tmp_path / "scen"
        code = run_cli("gen-synthetic", "--grid", "2", "2", "--requests", "0",
                       "--seed", "0", "--out", str(out))
        assert code == 0
        assert (out / "nodes.csv").exists()
        assert (out / "edges.csv").exists()
        rows = (out / "requests.csv").read_text().strip().splitlines()
        assert rows == ["request_id,t_request_s,origin_node,dest_node"]
        cfg = json.loads((out / "config.json").read_text())
        assert cfg["n_epochs"] == 20

    def test_full_round_trip(self, tmp_path, capsys):
        out = tmp_path / "scen"
        assert run_cli(
            "gen-synthetic", "--grid", "6", "6", "--requests", "30", "--seed", "3",
            "--out", str(out), "--epochs", "5", "--vehicles", "4",
        ) == 0
        assert run_cli("simulate", "--config", str(out / "config.json")) == 0
        trace = out / "run" / "trace.jsonl"
        assert trace.exists()
        rep = tmp_path / "rep"
        assert run_cli("report", "--traces", str(trace), "--out", str(rep)) == 0
        summary = json.loads((rep / "summary.json").read_text())
        assert len(summary) == 1
        (label, metrics), = summary.items()
        assert metrics["requests_total"] == 30

    def test_dump_flags_write_files(self, tmp_path):
        out = tmp_path / "scen"
        run_cli("gen-synthetic", "--grid", "4", "4", "--requests", "6", "--seed", "1",
                "--out", str(out), "--epochs", "2", "--vehicles", "2")
        assert run_cli("simulate", "--config", str(out / "config.json"),
                       "--dump-rv", "--dump-rtv", "--dump-ilp") == 0
        dumps = out / "run" / "dumps"
        assert (dumps / "rv_epoch0000.json").exists()
        assert (dumps / "rtv_epoch0000.json").exists()
        ilp = (dumps / "ilp_epoch0000.txt").read_text().strip().splitlines()
        assert ilp[-1].startswith("penalty ")


class TestSimulateErrors:
    def test_missing_config_names_file(self, tmp_path, capsys):
        code = run_cli("simulate", "--config", str(tmp_path / "missing.json"))
        assert code == 1
        assert "missing.json" in capsys.readouterr().err

    def test_invalid_config_exits_one(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"n_epochs": 2}))
        assert run_cli("simulate", "--config", str(bad)) == 1

    def test_unknown_flag_exits_one(self, capsys):
        assert run_cli("simulate", "--config", "x", "--bogus") == 1
        assert "usage" in capsys.readouterr().err.lower()

    def test_unknown_command_exits_one(self, capsys):
        assert run_cli("frobnicate") == 1


class TestTrainFilterCli:
    def test_trains_from_logged_samples(self, tmp_path, capsys):
        # synthesize a separable sample log directly
        log = tmp_path / "samples.jsonl"
        with open(log, "w") as fh:
            for i in range(40):
                label = i % 2
                v = 0.9 if label else 0.1
                rec = {
                    "epoch": 0,
                    "label": label,
                    "nodes": [[1.0, 1.0, 0.0, 1.0], [v, v, v, 0.0], [v, v, v, 0.0]],
                    "edges": [[0, 1, v], [0, 2, v], [1, 2, v]],
                }
                fh.write(json.dumps(rec) + "\n")
        out = tmp_path / "params.json"
        code = run_cli("train-filter", "--samples", str(log), "--out", str(out),
                       "--batches", "200", "--lr", "0.05", "--dim", "8", "--seed", "1")
        assert code == 0
        assert "ranking score" in capsys.readouterr().out
        params = feasfilter.EmbeddingParams.load(str(out))
        assert params.dim == 8

    def test_one_class_log_fails_cleanly(self, tmp_path, capsys):
        log = tmp_path / "one.jsonl"
        rec = {"epoch": 0, "label": 1, "nodes": [[0, 0, 0, 1], [1, 1, 1, 0]], "edges": [[0, 1, 0.5]]}
        log.write_text(json.dumps(rec) + "\n")
        assert run_cli("train-filter", "--samples", str(log), "--out", str(tmp_path / "p.json")) == 1


class TestPartitionBenchCli:
    def test_bench_emits_csv(self, tmp_path, capsys):
        dump = {
            "request_ids": [1, 2, 3, 4],
            "vehicle_ids": [0, 1],
            "rr_edges": [[1, 2], [3, 4]],
            "vr_edges": [[0, 1, 5], [0, 2, 7], [1, 3, 4], [1, 4, 2]],
        }
        rv_path = tmp_path / "rv.json"
        rv_path.write_text(json.dumps(dump))
        out_csv = tmp_path / "bench.csv"
        code = run_cli("partition-bench", "--rv", str(rv_path), "--k", "2",
                       "--methods", "kway,modularity", "--out", str(out_csv))
        assert code == 0
        with open(out_csv) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["k", "method", "edge_cut", "imbalance", "modularity", "ms"]
        methods = {r[1] for r in rows[1:]}
        assert methods == {"kway", "modularity"}

    def test_bad_method_exits_one(self, tmp_path, capsys):
        rv_path = tmp_path / "rv.json"
        rv_path.write_text(json.dumps({
            "request_ids": [1], "vehicle_ids": [0], "rr_edges": [], "vr_edges": [[0, 1, 1]],
        }))
        assert run_cli("partition-bench", "--rv", str(rv_path), "--methods", "magic") == 1
