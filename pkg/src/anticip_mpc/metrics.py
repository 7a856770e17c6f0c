"""Evaluation metrics over executed traces.

Five scalars: separation fraction, end-effector visibility fraction, mean
goal-inference probability, summed squared deviation from the nominal path,
and planning latency. Distances and gaze angles are computed against the
trace's ground-truth human by default; pass against="predicted" to score
against the prediction means instead.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import InvalidInputError
from .mpc import ExecutionTrace

log = logging.getLogger("anticip_mpc")

Array = np.ndarray

SEPARATION_THRESHOLD = 0.2  # meters
FOV_HALF_ANGLE = np.pi / 3.0  # radians; central + paracentral human vision


def _human_motion(trace: ExecutionTrace, human: Optional[Array], against: str = "truth") -> Array:
    if human is None:
        human = trace.human_pred if against == "predicted" else trace.human_true
    human = np.asarray(human, dtype=float)
    if human.ndim != 3 or human.shape[0] != len(trace.times) or human.shape[2] != 3:
        raise InvalidInputError(
            f"human motion shape {human.shape} is misaligned with the trace grid ({len(trace.times)} steps)"
        )
    return human


def separation_metric(
    trace: ExecutionTrace,
    human: Optional[Array] = None,
    threshold: float = SEPARATION_THRESHOLD,
    against: str = "truth",
) -> float:
    """Fraction of timesteps with every human-robot joint pair farther than threshold."""
    human = _human_motion(trace, human, against)
    d = np.linalg.norm(trace.tracked_positions[:, None, :, :] - human[:, :, None, :], axis=-1)
    min_d = d.reshape(len(trace.times), -1).min(axis=1)
    return float(np.mean(min_d > threshold))


def visibility_metric(
    trace: ExecutionTrace,
    human: Optional[Array] = None,
    gaze_object: Optional[Array] = None,
    fov_half_angle: float = FOV_HALF_ANGLE,
    against: str = "truth",
) -> float:
    """Fraction of timesteps with the end effector inside the gaze cone."""
    human = _human_motion(trace, human, against)
    obj = trace.gaze_object if gaze_object is None else np.asarray(gaze_object, dtype=float)
    head = human[:, trace.head_index]
    a = obj[None, :] - head
    b = trace.eef_positions - head
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    if np.any(na < 1e-9) or np.any(nb < 1e-9):
        raise InvalidInputError("degenerate gaze ray while evaluating visibility")
    cosang = np.clip(np.sum(a * b, axis=1) / (na * nb), -1.0, 1.0)
    return float(np.mean(np.arccos(cosang) <= fov_half_angle))


def goal_inference_probabilities(
    eef_path: Array, start: Array, goals: Array, goal_index: int
) -> Array:
    """P(true goal | path so far) per timestep, accumulated-path-length form.

    Uses the squared path length as the trajectory cost and squared
    straight-line distances as cost-to-go; exponents are max-shifted before
    normalization over the candidate goals.
    """
    eef_path = np.atleast_2d(np.asarray(eef_path, dtype=float))
    goals = np.atleast_2d(np.asarray(goals, dtype=float))
    if goals.shape[0] < 1:
        raise InvalidInputError("goal set must be nonempty")
    seg = np.linalg.norm(np.diff(eef_path, axis=0), axis=1)
    path_len = np.concatenate([[0.0], np.cumsum(seg)])
    d_traj = path_len**2  # (T,)
    vq = np.sum((goals[None, :, :] - eef_path[:, None, :]) ** 2, axis=-1)  # (T, G)
    vs = np.sum((goals - np.asarray(start, dtype=float)) ** 2, axis=-1)  # (G,)
    logits = -d_traj[:, None] - vq + vs[None, :]
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=1, keepdims=True)
    return probs[:, goal_index]


def legibility_metric(trace: ExecutionTrace) -> float:
    """Mean inferred probability of the true goal along the executed path."""
    if len(trace.times) < 2:
        raise InvalidInputError("legibility metric needs at least 2 trace points")
    probs = goal_inference_probabilities(
        trace.eef_positions,
        trace.legibility_start,
        trace.legibility_goals,
        trace.legibility_goal_index,
    )
    return float(np.mean(probs))


def nominal_metric(trace: ExecutionTrace, nominal: Optional[Array] = None) -> float:
    """Sum of squared distances between actual and nominal eef positions."""
    nominal = trace.nominal if nominal is None else np.atleast_2d(np.asarray(nominal, dtype=float))
    actual = trace.eef_positions
    if len(nominal) != len(actual):
        log.warning(
            "nominal length %d != trace length %d; clamping to the shorter grid",
            len(nominal), len(actual),
        )
        if len(nominal) < len(actual):
            pad = np.tile(nominal[-1], (len(actual) - len(nominal), 1))
            nominal = np.vstack([nominal, pad])
        else:
            nominal = nominal[: len(actual)]
    return float(np.sum((actual - nominal) ** 2))


def latency_metric(trace: ExecutionTrace) -> tuple[float, list[float]]:
    """Total planning wall time of the trajectory plus per-replan times."""
    per_replan = trace.replan_wall_times()
    if not per_replan:
        raise InvalidInputError("trace has no replan timing records")
    return float(sum(per_replan)), per_replan


@dataclass
class MetricsReport:
    dst: float
    vis: float
    leg: float
    nom: float
    lat: float
    per_replan: list
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("dst", "vis"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidInputError(f"{name} must lie in [0, 1], got {v}")
        if not 0.0 < self.leg < 1.0:
            raise InvalidInputError(f"leg must lie in (0, 1), got {self.leg}")
        if self.lat < 0:
            raise InvalidInputError("lat must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "dst": self.dst,
            "vis": self.vis,
            "leg": self.leg,
            "nom": self.nom,
            "lat": self.lat,
            "per_replan": list(self.per_replan),
            "config": dict(self.config),
        }

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")

    csv_header = ["dst", "vis", "leg", "nom", "lat"]

    def csv_row(self) -> list:
        return [f"{getattr(self, k):.6f}" for k in self.csv_header]


def evaluate_trace(
    trace: ExecutionTrace,
    threshold: float = SEPARATION_THRESHOLD,
    fov_half_angle: float = FOV_HALF_ANGLE,
    against: str = "truth",
) -> MetricsReport:
    """All five metrics of one executed trace."""
    if against not in ("truth", "predicted"):
        raise InvalidInputError("against must be 'truth' or 'predicted'")
    lat, per_replan = latency_metric(trace)
    return MetricsReport(
        dst=separation_metric(trace, threshold=threshold, against=against),
        vis=visibility_metric(trace, fov_half_angle=fov_half_angle, against=against),
        leg=legibility_metric(trace),
        nom=nominal_metric(trace),
        lat=lat,
        per_replan=per_replan,
        config={
            "threshold": threshold,
            "fov_half_angle": fov_half_angle,
            "against": against,
        },
    )
