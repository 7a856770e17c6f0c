"""Receding-horizon planning loop and scenario definitions.

Each replan slices the human prediction over the lookahead window, assembles
per-knot cost contexts, solves the fixed-horizon problem warm-started from
the previous plan, then executes a prefix under simulated position control
(the executed motion tracks the plan exactly). The executed human follows
the prediction means unless the scenario supplies a separate ground truth.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .costs import CostWeights, GoalSpec, KnotContext, LegibilityContext
from .errors import InvalidInputError
from .kinematics import (
    RobotModel,
    fk_batch,
    forward_kinematics,
    load_robot_model,
    model_from_dict,
)
from .prediction import (
    HumanPrediction,
    ReachConfig,
    load_prediction,
    prediction_from_dict,
    slice_horizon,
    slice_horizon_arrays,
    synthesize_reach,
)
from .solver import SolverConfig, SolveResult, TrajectoryProblem, solve

log = logging.getLogger("anticip_mpc")

Array = np.ndarray

_GRID_TOL = 1e-9
ORIENT_GOAL_TOL = 1e-3


def _as_steps(value: float, dt: float, name: str) -> int:
    steps = value / dt
    if abs(steps - round(steps)) > 1e-6:
        raise InvalidInputError(f"{name}={value} must be an integer multiple of dt={dt}")
    return int(round(steps))


@dataclass(frozen=True)
class MpcConfig:
    """Timing of the receding-horizon loop (seconds)."""

    dt: float = 0.25
    horizon: float = 1.25
    replan_period: float = 0.5
    task_duration: float = 5.0
    goal_position_tol: float = 0.01

    def __post_init__(self):
        if self.dt <= 0 or self.task_duration <= 0:
            raise InvalidInputError("dt and task_duration must be positive")
        _as_steps(self.horizon, self.dt, "horizon")
        _as_steps(self.replan_period, self.dt, "replan_period")
        _as_steps(self.task_duration, self.dt, "task_duration")
        if self.horizon < self.replan_period - _GRID_TOL:
            raise InvalidInputError("horizon must be at least the replan period")
        if self.goal_position_tol <= 0:
            raise InvalidInputError("goal_position_tol must be positive")

    @property
    def horizon_knots(self) -> int:
        return _as_steps(self.horizon, self.dt, "horizon") + 1

    @property
    def replan_steps(self) -> int:
        return _as_steps(self.replan_period, self.dt, "replan_period")

    @property
    def task_steps(self) -> int:
        return _as_steps(self.task_duration, self.dt, "task_duration")

    def to_dict(self) -> dict:
        return {
            "dt": self.dt,
            "horizon": self.horizon,
            "replan_period": self.replan_period,
            "task_duration": self.task_duration,
            "goal_position_tol": self.goal_position_tol,
        }


@dataclass
class Scenario:
    """Fully resolved planning task: robot, goals, weights, human data."""

    model: RobotModel
    start_q: Array
    goal_q: Array
    goal: GoalSpec
    gaze_object: Array
    legibility_goals: Array  # (G, 3)
    legibility_goal_index: int
    weights: CostWeights
    mpc: MpcConfig
    prediction: HumanPrediction
    nominal: Optional[Array] = None  # explicit eef path; None derives one
    ground_truth: Optional[HumanPrediction] = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    synthesis: Optional[ReachConfig] = None  # kept for re-seeded benchmark runs
    seed: int = 0

    def __post_init__(self):
        n = self.model.n_joints
        self.start_q = np.asarray(self.start_q, dtype=float).reshape(-1)
        self.goal_q = np.asarray(self.goal_q, dtype=float).reshape(-1)
        if self.start_q.shape != (n,) or self.goal_q.shape != (n,):
            raise InvalidInputError("start_q and goal_q must match the robot joint count")
        self.gaze_object = np.asarray(self.gaze_object, dtype=float).reshape(3)
        self.legibility_goals = np.atleast_2d(np.asarray(self.legibility_goals, dtype=float))
        if not 0 <= int(self.legibility_goal_index) < self.legibility_goals.shape[0]:
            raise InvalidInputError("legibility_goal_index out of range")
        if self.nominal is not None:
            self.nominal = np.atleast_2d(np.asarray(self.nominal, dtype=float))
            if self.nominal.shape[1] != 3:
                raise InvalidInputError("explicit nominal trajectory must be (T, 3)")
            if self.nominal.shape[0] < self.mpc.task_steps + 1:
                raise InvalidInputError(
                    f"explicit nominal trajectory needs >= {self.mpc.task_steps + 1} points"
                )


def derive_nominal(model: RobotModel, start_q, goal_q, n_steps: int) -> Array:
    """End-effector positions of the linear joint-space interpolation."""
    start_q = np.asarray(start_q, dtype=float).reshape(-1)
    goal_q = np.asarray(goal_q, dtype=float).reshape(-1)
    if start_q.shape != goal_q.shape or start_q.shape != (model.n_joints,):
        raise InvalidInputError("start and goal joint vectors must match the robot")
    alphas = np.linspace(0.0, 1.0, n_steps + 1)
    qs = start_q[None, :] + alphas[:, None] * (goal_q - start_q)[None, :]
    return fk_batch(model, qs).positions[:, model.eef_frame].copy()


def warm_start_shift(controls: Array, steps_executed: int, n_controls: int, lower, upper) -> Array:
    """Shift a previous plan's controls, pad with the final control, clamp."""
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    if steps_executed < 0 or steps_executed > controls.shape[0]:
        raise InvalidInputError("steps_executed must lie within the previous plan")
    remaining = controls[steps_executed:]
    pad_src = remaining[-1] if len(remaining) else controls[-1]
    if len(remaining) >= n_controls:
        out = remaining[:n_controls].copy()
    else:
        pad = np.tile(pad_src, (n_controls - len(remaining), 1))
        out = np.vstack([remaining, pad])
    return np.clip(out, lower, upper)


def build_knot_contexts(
    scenario: Scenario,
    nominal: Array,
    legibility: LegibilityContext,
    t_start: float,
    n_knots: int,
) -> list[KnotContext]:
    """Per-knot contexts for a window starting at t_start.

    The nominal path is indexed by absolute time and clamped to its final
    point; human frames come from the prediction slice at the knot times.
    """
    cfg = scenario.mpc
    frames = slice_horizon(scenario.prediction, t_start, n_knots, cfg.dt)
    contexts = []
    for i in range(n_knots):
        t = t_start + i * cfg.dt
        idx = min(int(round(t / cfg.dt)), len(nominal) - 1)
        contexts.append(
            KnotContext(
                human_frame=tuple(frames[i]),
                gaze_object=scenario.gaze_object,
                nominal=nominal[idx],
                legibility=legibility,
                goal=scenario.goal,
                weights=scenario.weights,
                t=t,
                head_index=scenario.prediction.head_index,
            )
        )
    return contexts


def task_legibility_context(scenario: Scenario) -> LegibilityContext:
    """Legibility context with the start point fixed at the task-start eef."""
    start_eef = forward_kinematics(scenario.model, scenario.start_q).eef_pose.position
    return LegibilityContext(
        start=start_eef,
        goals=scenario.legibility_goals,
        goal_index=scenario.legibility_goal_index,
    )


def resolve_nominal(scenario: Scenario) -> Array:
    if scenario.nominal is not None:
        return scenario.nominal
    return derive_nominal(scenario.model, scenario.start_q, scenario.goal_q, scenario.mpc.task_steps)


def build_problem(
    scenario: Scenario,
    t_start: float,
    n_knots: int,
    x0,
    nominal: Optional[Array] = None,
    legibility: Optional[LegibilityContext] = None,
) -> TrajectoryProblem:
    nominal = resolve_nominal(scenario) if nominal is None else nominal
    legibility = task_legibility_context(scenario) if legibility is None else legibility
    contexts = build_knot_contexts(scenario, nominal, legibility, t_start, n_knots)
    return TrajectoryProblem.from_contexts(
        scenario.model, n_knots, scenario.mpc.dt, x0, contexts, q_goal=scenario.goal_q
    )


@dataclass
class ReplanRecord:
    t_plan: float
    wall_time: float  # prediction slicing + problem assembly + solve
    result: SolveResult

    def to_dict(self) -> dict:
        return {"t_plan": self.t_plan, "wall_time": self.wall_time, **self.result.to_dict()}


@dataclass
class ExecutionTrace:
    """Executed motion at every dt plus per-replan diagnostics."""

    times: Array  # (T+1,)
    states: Array  # (T+1, n)
    eef_positions: Array  # (T+1, 3)
    eef_quats: Array  # (T+1, 4)
    tracked_positions: Array  # (T+1, R, 3) origins of the tracked robot frames
    human_true: Array  # (T+1, H, 3) executed human motion
    human_pred: Array  # (T+1, H, 3) prediction means at the executed times
    min_human_dist: Array  # (T+1,) min over (human joint, tracked frame)
    head_index: int
    nominal: Array  # (T+1, 3) nominal eef positions aligned to the grid
    gaze_object: Array
    legibility_start: Array
    legibility_goals: Array
    legibility_goal_index: int
    goal_position: Array
    goal_orientation: Array
    replans: list
    total_wall_time: float
    goal_reached: bool
    dt: float
    seed: int = 0

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    def replan_wall_times(self) -> list[float]:
        return [r.wall_time for r in self.replans]

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "dt": self.dt,
            "seed": self.seed,
            "times": self.times.tolist(),
            "states": self.states.tolist(),
            "eef_positions": self.eef_positions.tolist(),
            "eef_quats": self.eef_quats.tolist(),
            "tracked_positions": self.tracked_positions.tolist(),
            "human_true": self.human_true.tolist(),
            "human_pred": self.human_pred.tolist(),
            "min_human_dist": self.min_human_dist.tolist(),
            "head_index": self.head_index,
            "nominal": self.nominal.tolist(),
            "gaze_object": self.gaze_object.tolist(),
            "legibility_start": self.legibility_start.tolist(),
            "legibility_goals": self.legibility_goals.tolist(),
            "legibility_goal_index": self.legibility_goal_index,
            "goal_position": self.goal_position.tolist(),
            "goal_orientation": self.goal_orientation.tolist(),
            "goal_reached": self.goal_reached,
            "total_wall_time": self.total_wall_time,
            "replans": [r.to_dict() for r in self.replans],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExecutionTrace":
        replans = [
            ReplanRecord(
                t_plan=r["t_plan"],
                wall_time=r["wall_time"],
                result=SolveResult(
                    states=np.asarray(r["states"], dtype=float),
                    controls=np.asarray(r["controls"], dtype=float),
                    total_cost=r["total_cost"],
                    iterations=r["iterations"],
                    outer_iterations=r["outer_iterations"],
                    converged=r["converged"],
                    max_bound_violation=r["max_bound_violation"],
                    grad_inf=r["grad_inf"],
                    wall_time=r["wall_time"],
                ),
            )
            for r in data["replans"]
        ]
        return cls(
            times=np.asarray(data["times"], dtype=float),
            states=np.asarray(data["states"], dtype=float),
            eef_positions=np.asarray(data["eef_positions"], dtype=float),
            eef_quats=np.asarray(data["eef_quats"], dtype=float),
            tracked_positions=np.asarray(data["tracked_positions"], dtype=float),
            human_true=np.asarray(data["human_true"], dtype=float),
            human_pred=np.asarray(data["human_pred"], dtype=float),
            min_human_dist=np.asarray(data["min_human_dist"], dtype=float),
            head_index=int(data["head_index"]),
            nominal=np.asarray(data["nominal"], dtype=float),
            gaze_object=np.asarray(data["gaze_object"], dtype=float),
            legibility_start=np.asarray(data["legibility_start"], dtype=float),
            legibility_goals=np.asarray(data["legibility_goals"], dtype=float),
            legibility_goal_index=int(data["legibility_goal_index"]),
            goal_position=np.asarray(data["goal_position"], dtype=float),
            goal_orientation=np.asarray(data["goal_orientation"], dtype=float),
            replans=replans,
            total_wall_time=float(data["total_wall_time"]),
            goal_reached=bool(data["goal_reached"]),
            dt=float(data["dt"]),
            seed=int(data.get("seed", 0)),
        )

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def load_json(cls, path) -> "ExecutionTrace":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save_csv(self, path) -> None:
        """One row per dt: time, q..., eef xyz, min human distance."""
        n = self.states.shape[1]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["time"] + [f"q{i}" for i in range(n)] + ["eef_x", "eef_y", "eef_z", "min_human_dist"]
            )
            for i in range(len(self.times)):
                row = [f"{self.times[i]:.6f}"]
                row += [f"{v:.9f}" for v in self.states[i]]
                row += [f"{v:.9f}" for v in self.eef_positions[i]]
                row += [f"{self.min_human_dist[i]:.9f}"]
                writer.writerow(row)


def _human_means_at(pred: HumanPrediction, n_points: int, dt: float) -> Array:
    # executed-motion grid starts at t=0 regardless of where the prediction begins
    means, _ = slice_horizon_arrays(pred, max(0.0, pred.t0), n_points, dt)
    return means


def run_mpc(scenario: Scenario, solver_config: Optional[SolverConfig] = None) -> ExecutionTrace:
    """Run the receding-horizon loop and return the executed trace.

    Stops at the task duration or once the end effector is inside the goal
    position tolerance with orientation error below 1e-3.
    """
    cfg = scenario.mpc
    model = scenario.model
    sconf = solver_config or scenario.solver
    n_steps = cfg.task_steps
    n_knots = cfg.horizon_knots
    replan_steps = cfg.replan_steps

    legibility = task_legibility_context(scenario)
    nominal = resolve_nominal(scenario)

    executed = [scenario.start_q.copy()]
    replans: list[ReplanRecord] = []
    prev_controls: Optional[Array] = None
    x = scenario.start_q.copy()
    step = 0
    goal_reached = False

    t0_wall = time.perf_counter()
    while step < n_steps and not goal_reached:
        t_now = step * cfg.dt
        t_plan = time.perf_counter()
        problem = build_problem(scenario, t_now, n_knots, x, nominal, legibility)
        if prev_controls is None:
            init = None
        else:
            init = warm_start_shift(
                prev_controls, replan_steps, n_knots - 1, model.vel_lower, model.vel_upper
            )
        result = solve(problem, init, sconf)
        wall = time.perf_counter() - t_plan
        replans.append(ReplanRecord(t_plan=t_now, wall_time=wall, result=result))
        log.debug(
            "replan t=%.2f: cost=%.4g iters=%d converged=%s wall=%.1f ms",
            t_now, result.total_cost, result.iterations, result.converged, 1e3 * wall,
        )

        n_exec = min(replan_steps, n_steps - step)
        for i in range(1, n_exec + 1):
            executed.append(result.states[i].copy())
        x = result.states[n_exec].copy()
        prev_controls = result.controls
        step += n_exec

        pose = forward_kinematics(model, x).eef_pose
        pos_err = float(np.linalg.norm(pose.position - scenario.goal.position))
        dq = float(np.dot(pose.orientation, scenario.goal.orientation))
        if pos_err < cfg.goal_position_tol and 1.0 - dq * dq < ORIENT_GOAL_TOL:
            goal_reached = True

    states = np.asarray(executed)
    T1 = states.shape[0]
    fk = fk_batch(model, states)
    tracked = fk.positions[:, list(model.tracked_frames)]
    gt = scenario.ground_truth if scenario.ground_truth is not None else scenario.prediction
    human_true = _human_means_at(gt, T1, cfg.dt)
    human_pred = _human_means_at(scenario.prediction, T1, cfg.dt)
    dists = np.linalg.norm(tracked[:, None, :, :] - human_true[:, :, None, :], axis=-1)
    total_wall = time.perf_counter() - t0_wall

    return ExecutionTrace(
        times=np.arange(T1) * cfg.dt,
        states=states,
        eef_positions=fk.positions[:, model.eef_frame].copy(),
        eef_quats=fk.eef_quats.copy(),
        tracked_positions=tracked.copy(),
        human_true=human_true,
        human_pred=human_pred,
        min_human_dist=dists.reshape(T1, -1).min(axis=1),
        head_index=scenario.prediction.head_index,
        nominal=nominal[: T1] if len(nominal) >= T1 else _pad_nominal(nominal, T1),
        gaze_object=scenario.gaze_object,
        legibility_start=legibility.start,
        legibility_goals=legibility.goals,
        legibility_goal_index=legibility.goal_index,
        goal_position=scenario.goal.position,
        goal_orientation=scenario.goal.orientation,
        replans=replans,
        total_wall_time=total_wall,
        goal_reached=goal_reached,
        dt=cfg.dt,
        seed=scenario.seed,
    )


def _pad_nominal(nominal: Array, n_points: int) -> Array:
    pad = np.tile(nominal[-1], (n_points - len(nominal), 1))
    return np.vstack([nominal, pad])


# ---------------------------------------------------------------------------
# scenario file I/O


def _resolve(base: Path, ref: str) -> Path:
    p = Path(ref)
    return p if p.is_absolute() else base / p


def _load_human_source(entry, base: Path) -> tuple[HumanPrediction, Optional[ReachConfig]]:
    if isinstance(entry, str):
        return load_prediction(_resolve(base, entry)), None
    if isinstance(entry, dict) and "synthesize" in entry:
        config = ReachConfig.from_dict(entry["synthesize"])
        return synthesize_reach(config), config
    if isinstance(entry, dict):
        return prediction_from_dict(entry), None
    raise InvalidInputError("prediction must be a file path, inline dict, or {'synthesize': ...}")


def scenario_from_dict(data: dict, base: Path) -> Scenario:
    try:
        model_entry = data["robot_model"]
        model = (
            load_robot_model(_resolve(base, model_entry))
            if isinstance(model_entry, str)
            else model_from_dict(model_entry)
        )
        prediction, synthesis = _load_human_source(data["prediction"], base)
        ground_truth = None
        if data.get("ground_truth") is not None:
            ground_truth, _ = _load_human_source(data["ground_truth"], base)
        goal_q = np.asarray(data["goal_q"], dtype=float)
        goal_entry = data.get("goal_pose", "derive")
        if goal_entry == "derive":
            pose = forward_kinematics(model, goal_q).eef_pose
            goal = GoalSpec(pose.position, pose.orientation)
        else:
            goal = GoalSpec(
                np.asarray(goal_entry["position"], dtype=float),
                np.asarray(goal_entry["orientation"], dtype=float),
            )
        nominal_entry = data.get("nominal", "derive")
        nominal = None if nominal_entry in ("derive", None) else np.asarray(nominal_entry, dtype=float)
        return Scenario(
            model=model,
            start_q=np.asarray(data["start_q"], dtype=float),
            goal_q=goal_q,
            goal=goal,
            gaze_object=np.asarray(data["gaze_object"], dtype=float),
            legibility_goals=np.asarray(data["legibility"]["goals"], dtype=float),
            legibility_goal_index=int(data["legibility"]["goal_index"]),
            weights=CostWeights.from_dict(data["weights"]),
            mpc=MpcConfig(**data.get("mpc", {})),
            prediction=prediction,
            nominal=nominal,
            ground_truth=ground_truth,
            solver=SolverConfig.from_dict(data.get("solver", {})),
            synthesis=synthesis,
            seed=int(data.get("seed", 0)),
        )
    except KeyError as exc:
        raise InvalidInputError(f"scenario missing required key: {exc}") from exc


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"scenario {path}: {exc}") from exc
    except FileNotFoundError as exc:
        raise InvalidInputError(str(exc)) from exc
    return scenario_from_dict(data, path.parent)
