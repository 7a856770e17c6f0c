"""Command-line interface: scenario generation, planning, simulation, metrics.

Commands: gen-scenario, plan, simulate, eval, bench. Every command writes a
run manifest (resolved config, input hashes, seed, outputs) next to its
outputs so runs can be reproduced. Exit codes: 0 success, 2 invalid input,
3 solver failure. ANTICIP_MPC_LOG sets the log level.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .errors import InvalidInputError, SolverError
from .kinematics import default_robot_model, fk_batch, save_robot_model
from .metrics import FOV_HALF_ANGLE, SEPARATION_THRESHOLD, MetricsReport, evaluate_trace
from .mpc import (
    ExecutionTrace,
    MpcConfig,
    Scenario,
    _human_means_at,
    build_problem,
    load_scenario,
    run_mpc,
    scenario_from_dict,
)
from .prediction import ReachConfig, save_prediction, synthesize_reach
from .solver import SolveResult, solve

log = logging.getLogger("anticip_mpc")

SCHEMA_VERSION = 1
EXIT_OK = 0
EXIT_INVALID_INPUT = 2
EXIT_SOLVER_FAILURE = 3


# ---------------------------------------------------------------------------
# manifests and helpers


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: Path, command: str, config: dict, inputs, outputs, seed) -> Path:
    manifest = {
        "artifact_version": __version__,
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "seed": seed,
        "config": config,
        "inputs": {str(p): _sha256(Path(p)) for p in inputs if Path(p).is_file()},
        "outputs": [str(p) for p in outputs],
    }
    path = out_dir / f"{command.replace('-', '_')}_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _json_dump(data: dict, path: Path) -> None:
    path.write_text(json.dumps(data, sort_keys=True) + "\n")


def _deep_update(base: dict, overlay: dict) -> dict:
    out = dict(base)
    for key, val in overlay.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_update(out[key], val)
        else:
            out[key] = val
    return out


def _load_scenario_with_overlay(path: str, config_path) -> Scenario:
    scenario_path = Path(path)
    try:
        data = json.loads(scenario_path.read_text())
    except FileNotFoundError as exc:
        raise InvalidInputError(str(exc)) from exc
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"scenario {path}: {exc}") from exc
    if config_path:
        try:
            overlay = json.loads(Path(config_path).read_text())
        except (FileNotFoundError, json.JSONDecodeError) as exc:
            raise InvalidInputError(f"config {config_path}: {exc}") from exc
        data = _deep_update(data, overlay)
    return scenario_from_dict(data, scenario_path.parent)


# ---------------------------------------------------------------------------
# default desk-scale scenario


DEFAULT_WEIGHTS = {
    "w_dist": 2.0,
    "w_vis": 0.05,
    "w_leg": 1.0,
    "w_nom": 4.0,
    "w_smooth": 0.05,
    "w_goal": 4.0,
}

_START_Q = [0.7, 0.8, 0.0, 1.0, 0.0, 0.6, 0.0]
_GOAL_Q = [-0.7, 0.8, 0.0, 1.0, 0.0, 0.6, 0.0]


def default_reach_config(seed: int, duration: float, dt: float) -> dict:
    """Synthetic human seated across the robot, reaching into its workspace."""
    return {
        "joint_names": ["head", "torso", "pelvis", "l_hand", "r_hand"],
        "head_index": 0,
        "rest_positions": [
            [1.10, 0.00, 0.55],
            [1.10, 0.00, 0.30],
            [1.15, 0.00, 0.05],
            [0.95, 0.30, 0.25],
            [0.95, -0.30, 0.25],
        ],
        "reach_joint": 4,
        "reach_target": [0.75, 0.05, 0.30],
        "duration": duration,
        "dt": dt,
        "t0": 0.0,
        "base_cov": 2.5e-3,  # ~5 cm std, typical short-horizon pose-prediction spread
        "growth_rate": 0.4,
        "jitter": 0.004,
        "seed": seed,
    }


def default_scenario_dict(
    seed: int = 0,
    duration: float = 5.0,
    dt: float = 0.25,
    horizon: float = 1.25,
    replan: float = 0.5,
    robot_model: str = "robot.json",
) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "robot_model": robot_model,
        "start_q": _START_Q,
        "goal_q": _GOAL_Q,
        "goal_pose": "derive",
        "gaze_object": [0.75, 0.05, 0.30],
        "legibility": {
            "goals": [[0.622, -0.524, 0.323], [0.70, -0.30, 0.30]],
            "goal_index": 0,
        },
        "nominal": "derive",
        "weights": dict(DEFAULT_WEIGHTS),
        "mpc": {
            "dt": dt,
            "horizon": horizon,
            "replan_period": replan,
            "task_duration": duration,
            "goal_position_tol": 0.01,
        },
        "prediction": {"synthesize": default_reach_config(seed, duration + horizon, dt)},
        "ground_truth": None,
        "seed": seed,
    }


# ---------------------------------------------------------------------------
# commands


def cmd_gen_scenario(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.duration <= 0:
        raise InvalidInputError("--duration must be positive")

    robot_path = out / "robot.json"
    save_robot_model(default_robot_model(), robot_path)

    data = default_scenario_dict(
        seed=args.seed,
        duration=args.duration,
        dt=args.dt,
        horizon=args.horizon,
        replan=args.replan,
    )
    if args.config:
        data = _deep_update(data, json.loads(Path(args.config).read_text()))

    pred = synthesize_reach(ReachConfig.from_dict(data["prediction"]["synthesize"]))
    pred_path = out / "prediction.json"
    save_prediction(pred, pred_path)

    scenario_path = out / "scenario.json"
    _json_dump(data, scenario_path)
    load_scenario(scenario_path)  # round-trip validation before declaring success

    write_manifest(out, "gen-scenario", data, [], [robot_path, pred_path, scenario_path], args.seed)
    print(f"wrote {scenario_path}")
    return EXIT_OK


def _plan_csv(path: Path, scenario: Scenario, result: SolveResult) -> None:
    model = scenario.model
    fk = fk_batch(model, result.states)
    eef = fk.positions[:, model.eef_frame]
    tracked = fk.positions[:, list(model.tracked_frames)]
    human = _human_means_at(
        scenario.ground_truth if scenario.ground_truth is not None else scenario.prediction,
        len(result.states),
        scenario.mpc.dt,
    )
    dists = np.linalg.norm(tracked[:, None, :, :] - human[:, :, None, :], axis=-1)
    min_d = dists.reshape(len(result.states), -1).min(axis=1)
    n = result.states.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time"] + [f"q{i}" for i in range(n)] + ["eef_x", "eef_y", "eef_z", "min_human_dist"])
        for i in range(len(result.states)):
            row = [f"{i * scenario.mpc.dt:.6f}"]
            row += [f"{v:.9f}" for v in result.states[i]]
            row += [f"{v:.9f}" for v in eef[i]]
            row += [f"{min_d[i]:.9f}"]
            writer.writerow(row)


def cmd_plan(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scenario = _load_scenario_with_overlay(args.scenario, args.config)
    n_knots = scenario.mpc.task_steps + 1
    try:
        problem = build_problem(scenario, 0.0, n_knots, scenario.start_q)
        result = solve(problem, None, scenario.solver)
    except SolverError as exc:
        _json_dump({"error": str(exc), "command": "plan"}, out / "plan_diagnostics.json")
        log.error("solver failed: %s", exc)
        return EXIT_SOLVER_FAILURE

    plan_json = out / "plan.json"
    _json_dump({"schema_version": SCHEMA_VERSION, **result.to_dict()}, plan_json)
    plan_csv = out / "plan.csv"
    _plan_csv(plan_csv, scenario, result)
    write_manifest(
        out, "plan", {"scenario": str(args.scenario)}, [args.scenario], [plan_json, plan_csv], args.seed
    )
    print(f"plan: cost={result.total_cost:.4f} converged={result.converged} wall={result.wall_time:.3f}s")
    return EXIT_OK


def _apply_mpc_overrides(scenario: Scenario, args) -> Scenario:
    mpc = scenario.mpc.to_dict()
    if getattr(args, "horizon", None) is not None:
        mpc["horizon"] = args.horizon
    if getattr(args, "replan", None) is not None:
        mpc["replan_period"] = args.replan
    scenario.mpc = MpcConfig(**mpc)
    return scenario


def _simulate_once(scenario: Scenario, warmup: bool) -> ExecutionTrace:
    if warmup:
        problem = build_problem(scenario, 0.0, scenario.mpc.horizon_knots, scenario.start_q)
        solve(problem, None, scenario.solver)  # discarded: pays one-time cache costs
    return run_mpc(scenario)


def cmd_simulate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scenario = _apply_mpc_overrides(_load_scenario_with_overlay(args.scenario, args.config), args)
    try:
        trace = _simulate_once(scenario, args.warmup)
    except SolverError as exc:
        _json_dump({"error": str(exc), "command": "simulate"}, out / "simulate_diagnostics.json")
        log.error("solver failed: %s", exc)
        return EXIT_SOLVER_FAILURE

    trace_json = out / "trace.json"
    trace.save_json(trace_json)
    trace_csv = out / "trace.csv"
    trace.save_csv(trace_csv)
    write_manifest(
        out,
        "simulate",
        {"scenario": str(args.scenario), "warmup": args.warmup, "mpc": scenario.mpc.to_dict()},
        [args.scenario],
        [trace_json, trace_csv],
        args.seed,
    )
    lat = sum(trace.replan_wall_times())
    print(f"simulate: {len(trace.replans)} replans, planning time {lat:.3f}s, goal_reached={trace.goal_reached}")
    return EXIT_OK


def cmd_eval(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports: list[MetricsReport] = []
    outputs = []
    for trace_path in args.traces:
        try:
            trace = ExecutionTrace.load_json(trace_path)
        except (FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
            raise InvalidInputError(f"trace {trace_path}: {exc}") from exc
        report = evaluate_trace(
            trace, threshold=args.threshold, fov_half_angle=args.fov, against=args.against
        )
        reports.append(report)
        report_path = out / f"report_{Path(trace_path).stem}.json"
        report.save_json(report_path)
        outputs.append(report_path)

    csv_path = out / "metrics.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trace"] + MetricsReport.csv_header)
        for trace_path, report in zip(args.traces, reports):
            writer.writerow([Path(trace_path).stem] + report.csv_row())
        if len(reports) > 1:
            vals = np.array([[getattr(r, k) for k in MetricsReport.csv_header] for r in reports])
            writer.writerow(["mean"] + [f"{v:.6f}" for v in vals.mean(axis=0)])
            writer.writerow(["std"] + [f"{v:.6f}" for v in vals.std(axis=0, ddof=1)])
    outputs.append(csv_path)

    write_manifest(
        out,
        "eval",
        {"threshold": args.threshold, "fov_half_angle": args.fov, "against": args.against},
        list(args.traces),
        outputs,
        args.seed,
    )
    for report in reports:
        print(
            f"dst={report.dst:.3f} vis={report.vis:.3f} leg={report.leg:.3f} "
            f"nom={report.nom:.3f} lat={report.lat:.3f}s"
        )
    return EXIT_OK


def _bench_scenario(base: Scenario, scenario_data: dict, base_dir: Path, run_seed: int) -> Scenario:
    """Re-seed the synthesized human for one benchmark run."""
    if base.synthesis is None:
        return base
    data = _deep_update(scenario_data, {"prediction": {"synthesize": {"seed": run_seed}}, "seed": run_seed})
    return scenario_from_dict(data, base_dir)


def cmd_bench(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scenario_path = Path(args.scenario)
    base = _load_scenario_with_overlay(args.scenario, args.config)
    scenario_data = json.loads(scenario_path.read_text())
    if args.config:
        scenario_data = _deep_update(scenario_data, json.loads(Path(args.config).read_text()))
    if base.synthesis is None:
        log.warning("scenario prediction is not synthesized; bench runs will share one human motion")

    if args.warmup:
        _simulate_once(_bench_scenario(base, scenario_data, scenario_path.parent, args.seed), warmup=False)

    def one_run(i: int) -> ExecutionTrace:
        scenario = _bench_scenario(base, scenario_data, scenario_path.parent, args.seed + i)
        return run_mpc(scenario)

    t0 = time.perf_counter()
    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            traces = list(pool.map(one_run, range(args.n)))
    else:
        traces = [one_run(i) for i in range(args.n)]
    bench_wall = time.perf_counter() - t0

    per_traj = np.array([sum(t.replan_wall_times()) for t in traces])
    per_replan = np.concatenate([t.replan_wall_times() for t in traces])
    summary = {
        "schema_version": SCHEMA_VERSION,
        "n_runs": args.n,
        "warmup": args.warmup,
        "threads": args.threads,
        "per_trajectory_mean_s": float(per_traj.mean()),
        "per_trajectory_std_s": float(per_traj.std(ddof=1)) if args.n > 1 else 0.0,
        "per_replan_mean_s": float(per_replan.mean()),
        "per_replan_std_s": float(per_replan.std(ddof=1)) if len(per_replan) > 1 else 0.0,
        "replans_per_run": [len(t.replans) for t in traces],
        "bench_wall_s": bench_wall,
    }
    summary_path = out / "bench.json"
    _json_dump(summary, summary_path)
    csv_path = out / "bench.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run", "planning_time_s", "replans"])
        for i, t in enumerate(traces):
            writer.writerow([i, f"{sum(t.replan_wall_times()):.6f}", len(t.replans)])
    write_manifest(
        out, "bench", {"n": args.n, "scenario": str(args.scenario)}, [args.scenario],
        [summary_path, csv_path], args.seed,
    )
    print(
        f"bench: {args.n} runs, per-trajectory {summary['per_trajectory_mean_s']:.3f}s "
        f"(std {summary['per_trajectory_std_s']:.3f}), per-replan {summary['per_replan_mean_s'] * 1e3:.1f}ms"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


_SCHEMAS = {
    "schema_version": SCHEMA_VERSION,
    "scenario": {
        "robot_model": "path or inline model dict",
        "start_q": "[rad] * n_joints",
        "goal_q": "[rad] * n_joints",
        "goal_pose": "'derive' | {position: [m]*3, orientation: [w,x,y,z]}",
        "gaze_object": "[m]*3",
        "legibility": {"goals": "[[m]*3, ...]", "goal_index": "int"},
        "nominal": "'derive' | [[m]*3, ...]",
        "weights": {k: "float >= 0" for k in DEFAULT_WEIGHTS},
        "mpc": {
            "dt": "s", "horizon": "s", "replan_period": "s",
            "task_duration": "s", "goal_position_tol": "m",
        },
        "solver": {
            "max_inner_iters": "int", "max_outer_iters": "int", "cost_tol": "float",
            "grad_tol": "float", "constraint_tol": "float", "init_penalty": "float",
            "penalty_scale": "float",
        },
        "prediction": "path | inline prediction | {synthesize: {...}}",
        "ground_truth": "null | same as prediction",
        "seed": "int",
    },
    "robot_model": {
        "n_joints": "int",
        "joints": "[{axis: [unit 3-vec], offset: [m]*3}, ...]",
        "base_pose": {"position": "[m]*3", "orientation": "[w,x,y,z]"},
        "tracked_frames": "[frame indices]",
        "eef_frame": "int (last frame)",
        "velocity_bounds": {"lower": "[rad/s]*n", "upper": "[rad/s]*n"},
    },
    "prediction": {
        "joint_names": "[str]",
        "head_index": "int",
        "dt": "s",
        "t0": "s",
        "frames": "[[{mean: [m]*3, cov: 3x3}, ...] per timestep]",
    },
    "trace": "see ExecutionTrace.to_dict: executed states, eef path, human motion, per-replan records",
    "metrics_report": {"dst": "[0,1]", "vis": "[0,1]", "leg": "(0,1)", "nom": "m^2", "lat": "s"},
    "trajectory_csv_columns": ["time", "q0..qn", "eef_x", "eef_y", "eef_z", "min_human_dist"],
}


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="JSON overlay merged onto the scenario")
    parser.add_argument("--seed", type=int, default=0, help="base random seed")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--threads", type=int, default=1, help="parallel workers for batch commands")
    warm = parser.add_mutually_exclusive_group()
    warm.add_argument("--warmup", dest="warmup", action="store_true", default=True)
    warm.add_argument("--no-warmup", dest="warmup", action="store_false")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="anticip-mpc",
        description="Anticipatory NMPC motion planning for manipulators near humans",
    )
    parser.add_argument("--version", action="version", version=f"anticip-mpc {__version__}")
    parser.add_argument("--schema", action="store_true", help="print output schemas and exit")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("gen-scenario", help="write a seeded scenario with a synthetic human")
    _add_common(p)
    p.add_argument("--duration", type=float, default=5.0, help="task duration, seconds")
    p.add_argument("--dt", type=float, default=0.25)
    p.add_argument("--horizon", type=float, default=1.25)
    p.add_argument("--replan", type=float, default=0.5)
    p.set_defaults(func=cmd_gen_scenario)

    p = sub.add_parser("plan", help="one-shot fixed-horizon solve over the full task")
    _add_common(p)
    p.add_argument("--scenario", required=True)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", help="receding-horizon run producing an execution trace")
    _add_common(p)
    p.add_argument("--scenario", required=True)
    p.add_argument("--horizon", type=float, default=None, help="override horizon, seconds")
    p.add_argument("--replan", type=float, default=None, help="override replan period, seconds")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("eval", help="compute the five metrics from trace files")
    _add_common(p)
    p.add_argument("traces", nargs="+", help="trace JSON files")
    p.add_argument("--threshold", type=float, default=SEPARATION_THRESHOLD, help="separation threshold, m")
    p.add_argument("--fov", type=float, default=FOV_HALF_ANGLE, help="field-of-view half angle, rad")
    p.add_argument("--against", choices=["truth", "predicted"], default="truth")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="seeded latency benchmark over N simulations")
    _add_common(p)
    p.add_argument("--scenario", required=True)
    p.add_argument("--n", type=int, default=20, help="number of seeded runs")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    level = os.environ.get("ANTICIP_MPC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(message)s")

    parser = build_parser()
    args = parser.parse_args(argv)
    if args.schema:
        print(json.dumps(_SCHEMAS, indent=2))
        return EXIT_OK
    if not getattr(args, "command", None):
        parser.print_help()
        return EXIT_INVALID_INPUT
    try:
        return args.func(args)
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID_INPUT
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER_FAILURE


if __name__ == "__main__":
    sys.exit(main())
