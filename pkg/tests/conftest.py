import numpy as np
import pytest

from anticip_mpc import (
    CostWeights,
    GoalSpec,
    KnotContext,
    LegibilityContext,
    RobotModel,
    default_robot_model,
    forward_kinematics,
)
from anticip_mpc.prediction import HumanJointGaussian


@pytest.fixture
def planar_model() -> RobotModel:
    """2-joint planar arm: both axes +z, unit link offsets along x."""
    return RobotModel(
        axes=np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]]),
        offsets=np.array([[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]),
        base_position=np.zeros(3),
        base_orientation=np.array([1.0, 0.0, 0.0, 0.0]),
        tracked_frames=(1, 2),
        eef_frame=2,
        vel_lower=-2.0 * np.ones(2),
        vel_upper=2.0 * np.ones(2),
    )


@pytest.fixture
def seven_dof() -> RobotModel:
    return default_robot_model()


def random_chain(rng: np.random.Generator, n_joints: int) -> RobotModel:
    axes = rng.normal(size=(n_joints, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    offsets = rng.uniform(-0.3, 0.3, size=(n_joints, 3))
    quat = rng.normal(size=4)
    quat /= np.linalg.norm(quat)
    return RobotModel(
        axes=axes,
        offsets=offsets,
        base_position=rng.uniform(-0.5, 0.5, size=3),
        base_orientation=quat,
        tracked_frames=tuple(range(1, n_joints + 1)),
        eef_frame=n_joints,
        vel_lower=-(1.0 + rng.uniform(0, 1, n_joints)),
        vel_upper=1.0 + rng.uniform(0, 1, n_joints),
    )


def random_spd(rng: np.random.Generator, scale: float = 0.1) -> np.ndarray:
    a = rng.normal(size=(3, 3)) * scale
    return a @ a.T + (0.2 * scale) ** 2 * np.eye(3)


def random_context(
    rng: np.random.Generator,
    model: RobotModel,
    q: np.ndarray,
    weights: CostWeights | None = None,
    n_human: int = 3,
    n_goals: int = 3,
    goal_index: int | None = None,
) -> KnotContext:
    """Generic randomized knot context, resampled away from cost kinks."""
    eef = forward_kinematics(model, q).eef_pose.position
    while True:
        human = tuple(
            HumanJointGaussian(eef + rng.uniform(-0.8, 0.8, 3), random_spd(rng))
            for _ in range(n_human)
        )
        head = human[0].mean
        gaze = head + rng.uniform(-0.8, 0.8, 3)
        a = gaze - head
        b = eef - head
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na < 0.05 or nb < 0.05:
            continue
        sin_theta = np.linalg.norm(np.cross(a / na, b / nb))
        if sin_theta < 0.05:
            continue  # too close to the gaze-angle kink for finite differences
        nominal = eef + rng.uniform(-0.5, 0.5, 3)
        goal_p = eef + rng.uniform(-0.5, 0.5, 3)
        if np.linalg.norm(nominal - eef) < 0.02 or np.linalg.norm(goal_p - eef) < 0.02:
            continue
        quat = rng.normal(size=4)
        quat /= np.linalg.norm(quat)
        goals = eef + rng.uniform(-0.7, 0.7, (n_goals, 3))
        start = eef + rng.uniform(-0.5, 0.5, 3)
        if weights is None:
            weights = CostWeights(*rng.uniform(0.1, 2.0, 6))
        gi = int(rng.integers(n_goals)) if goal_index is None else goal_index
        return KnotContext(
            human_frame=human,
            gaze_object=gaze,
            nominal=nominal,
            legibility=LegibilityContext(start=start, goals=goals, goal_index=gi),
            goal=GoalSpec(goal_p, quat),
            weights=weights,
            t=float(rng.uniform(0, 5)),
            head_index=0,
        )
