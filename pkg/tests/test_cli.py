import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from anticip_mpc.cli import EXIT_INVALID_INPUT, EXIT_OK, main
from anticip_mpc.mpc import ExecutionTrace


def run_cli(*argv) -> int:
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Generated scenario shared by the command tests (short task for speed)."""
    out = tmp_path_factory.mktemp("ws")
    code = run_cli("gen-scenario", "--out", out, "--seed", 7, "--duration", "2.0")
    assert code == EXIT_OK
    return out


def strip_timing(data: dict) -> dict:
    data = dict(data)
    data.pop("total_wall_time", None)
    data["replans"] = [
        {k: v for k, v in r.items() if k not in ("wall_time",)} for r in data["replans"]
    ]
    return data


class TestGenScenario:
    def test_deterministic_bytes(self, tmp_path):
        for sub in ("a", "b"):
            assert run_cli("gen-scenario", "--out", tmp_path / sub, "--seed", 3) == EXIT_OK
        for name in ("scenario.json", "prediction.json", "robot.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_zero_duration_rejected(self, tmp_path):
        assert run_cli("gen-scenario", "--out", tmp_path, "--duration", "0") == EXIT_INVALID_INPUT

    def test_manifest_written(self, workspace):
        manifest = json.loads((workspace / "gen_scenario_manifest.json").read_text())
        assert manifest["command"] == "gen-scenario"
        assert manifest["seed"] == 7
        assert any(p.endswith("scenario.json") for p in manifest["outputs"])


class TestPlan:
    def test_generated_scenario_plans_without_edits(self, workspace, tmp_path):
        out = tmp_path / "plan"
        assert run_cli("plan", "--scenario", workspace / "scenario.json", "--out", out) == EXIT_OK
        plan = json.loads((out / "plan.json").read_text())
        assert len(plan["states"]) == 9  # 2 s task at dt 0.25
        rows = list(csv.reader((out / "plan.csv").open()))
        assert rows[0][0] == "time" and len(rows) == 10
        manifest = json.loads((out / "plan_manifest.json").read_text())
        assert len(manifest["inputs"]) == 1

    def test_missing_scenario_is_invalid_input(self, tmp_path):
        assert run_cli("plan", "--scenario", tmp_path / "nope.json", "--out", tmp_path) == 2


class TestSimulate:
    def test_replan_records(self, workspace, tmp_path):
        out = tmp_path / "sim"
        code = run_cli("simulate", "--scenario", workspace / "scenario.json", "--out", out)
        assert code == EXIT_OK
        trace = json.loads((out / "trace.json").read_text())
        assert len(trace["replans"]) == 4  # ceil(2.0 / 0.5)
        assert (out / "trace.csv").exists()

    def test_deterministic_up_to_wall_time(self, workspace, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run_cli("simulate", "--scenario", workspace / "scenario.json", "--out", out) == EXIT_OK
        ta = strip_timing(json.loads((a / "trace.json").read_text()))
        tb = strip_timing(json.loads((b / "trace.json").read_text()))
        assert ta == tb

    def test_degenerate_mpc_equals_plan(self, workspace, tmp_path):
        plan_out = tmp_path / "plan"
        sim_out = tmp_path / "sim"
        scenario = workspace / "scenario.json"
        assert run_cli("plan", "--scenario", scenario, "--out", plan_out) == EXIT_OK
        assert run_cli(
            "simulate", "--scenario", scenario, "--out", sim_out, "--horizon", 2.0, "--replan", 2.0
        ) == EXIT_OK
        plan = json.loads((plan_out / "plan.json").read_text())
        trace = ExecutionTrace.load_json(sim_out / "trace.json")
        assert np.array_equal(trace.states, np.asarray(plan["states"]))


@pytest.fixture(scope="module")
def traces(workspace, tmp_path_factory):
    outs = []
    for seed in (1, 2, 3):
        out = tmp_path_factory.mktemp(f"run{seed}")
        config = out / "override.json"
        config.write_text(json.dumps({"prediction": {"synthesize": {"seed": seed}}}))
        code = run_cli(
            "simulate", "--scenario", workspace / "scenario.json",
            "--config", config, "--out", out, "--no-warmup",
        )
        assert code == EXIT_OK
        outs.append(out / "trace.json")
    return outs


class TestEval:
    def test_reports_and_aggregate(self, traces, tmp_path):
        out = tmp_path / "eval"
        assert run_cli("eval", *traces, "--out", out) == EXIT_OK
        rows = list(csv.reader((out / "metrics.csv").open()))
        assert rows[0] == ["trace", "dst", "vis", "leg", "nom", "lat"]
        per_trace = np.array([[float(v) for v in row[1:]] for row in rows[1:4]])
        mean_row = np.array([float(v) for v in rows[4][1:]])
        std_row = np.array([float(v) for v in rows[5][1:]])
        assert rows[4][0] == "mean" and rows[5][0] == "std"
        np.testing.assert_allclose(mean_row, per_trace.mean(axis=0), atol=1e-6)
        np.testing.assert_allclose(std_row, per_trace.std(axis=0, ddof=1), atol=1e-6)

    def test_far_human_scores_full_separation(self, workspace, tmp_path):
        config = tmp_path / "far.json"
        rest = (np.array([[1.1, 0, 0.55], [1.1, 0, 0.3], [1.15, 0, 0.05], [0.95, 0.3, 0.25], [0.95, -0.3, 0.25]]) + 50.0).tolist()
        config.write_text(json.dumps({
            "weights": {"w_dist": 0.0, "w_vis": 0.0},
            "prediction": {"synthesize": {"rest_positions": rest, "reach_target": [50.75, 0.05, 0.30]}},
        }))
        sim_out = tmp_path / "sim"
        assert run_cli(
            "simulate", "--scenario", workspace / "scenario.json",
            "--config", config, "--out", sim_out, "--no-warmup",
        ) == EXIT_OK
        eval_out = tmp_path / "eval"
        assert run_cli("eval", sim_out / "trace.json", "--out", eval_out) == EXIT_OK
        report = json.loads((eval_out / "report_trace.json").read_text())
        assert report["dst"] == 1.0

    def test_bad_trace_rejected(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{}")
        assert run_cli("eval", bad, "--out", tmp_path) == EXIT_INVALID_INPUT


class TestBench:
    def test_summary_counts_requested_runs(self, workspace, tmp_path):
        out = tmp_path / "bench"
        code = run_cli(
            "bench", "--scenario", workspace / "scenario.json", "--out", out, "--n", 2
        )
        assert code == EXIT_OK
        summary = json.loads((out / "bench.json").read_text())
        assert summary["n_runs"] == 2
        assert summary["per_trajectory_mean_s"] > 0
        rows = list(csv.reader((out / "bench.csv").open()))
        assert len(rows) == 3  # header + one per requested run, warm-up excluded

    def test_worker_threads(self, workspace, tmp_path):
        out = tmp_path / "bench_mt"
        code = run_cli(
            "bench", "--scenario", workspace / "scenario.json", "--out", out,
            "--n", 2, "--threads", 2, "--no-warmup",
        )
        assert code == EXIT_OK
        assert json.loads((out / "bench.json").read_text())["threads"] == 2


class TestSolverFailureExit:
    def test_plan_reports_exit_code_3(self, workspace, tmp_path, monkeypatch):
        from anticip_mpc.errors import SolverError
        import anticip_mpc.cli as cli_mod

        def boom(*args, **kwargs):
            raise SolverError("synthetic failure")

        monkeypatch.setattr(cli_mod, "solve", boom)
        out = tmp_path / "plan"
        code = run_cli("plan", "--scenario", workspace / "scenario.json", "--out", out)
        assert code == 3
        diag = json.loads((out / "plan_diagnostics.json").read_text())
        assert "synthetic failure" in diag["error"]


class TestTopLevel:
    def test_schema_prints_json(self, capsys):
        assert run_cli("--schema") == EXIT_OK
        data = json.loads(capsys.readouterr().out)
        assert data["schema_version"] == 1
        assert "scenario" in data and "trajectory_csv_columns" in data

    def test_no_command_shows_help(self, capsys):
        assert run_cli() == EXIT_INVALID_INPUT

    def test_console_entry_point(self):
        proc = subprocess.run(
            [sys.executable, "-m", "anticip_mpc.cli", "--version"],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0
        assert "anticip-mpc" in proc.stdout

    def test_log_env_var_enables_debug(self, workspace):
        import os

        env = dict(os.environ, ANTICIP_MPC_LOG="DEBUG")
        proc = subprocess.run(
            [
                sys.executable, "-m", "anticip_mpc.cli", "simulate",
                "--scenario", str(workspace / "scenario.json"),
                "--out", str(workspace / "logrun"), "--no-warmup",
            ],
            capture_output=True,
            text=True,
            env=env,
        )
        assert proc.returncode == 0
        assert "replan t=" in proc.stderr
