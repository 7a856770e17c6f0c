"""Serial-chain forward kinematics and positional Jacobians.

The robot is a chain of revolute joints. Joint ``j`` rotates about a fixed
axis expressed in its parent frame and is followed by a fixed translation to
the next frame, so a robot with ``n`` joints has ``n + 1`` frames: frame 0 is
the base, frame ``j`` (``j >= 1``) is the origin of joint ``j``, and the last
frame is the end effector. All quaternions use (w, x, y, z) ordering.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import InvalidInputError

Array = np.ndarray

_UNIT_TOL = 1e-9


# ---------------------------------------------------------------------------
# quaternion / rotation helpers


def quat_normalize(q: Array) -> Array:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise InvalidInputError("cannot normalize a zero quaternion")
    return q / n


def quat_to_matrix(q: Array) -> Array:
    """Rotation matrix of a unit quaternion (w, x, y, z)."""
    w, x, y, z = np.asarray(q, dtype=float)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_matrix(R: Array) -> Array:
    """Unit quaternions (w, x, y, z) for a batch of rotation matrices.

    Accepts shape (..., 3, 3) and returns (..., 4). The branch with the
    largest squared component is used for numerical stability; the sign is
    canonicalized so w >= 0.
    """
    R = np.asarray(R, dtype=float)
    r00, r01, r02 = R[..., 0, 0], R[..., 0, 1], R[..., 0, 2]
    r10, r11, r12 = R[..., 1, 0], R[..., 1, 1], R[..., 1, 2]
    r20, r21, r22 = R[..., 2, 0], R[..., 2, 1], R[..., 2, 2]

    # 4 * (w^2, x^2, y^2, z^2), clipped so sqrt never sees negatives
    tw = np.maximum(1.0 + r00 + r11 + r22, 0.0)
    tx = np.maximum(1.0 + r00 - r11 - r22, 0.0)
    ty = np.maximum(1.0 - r00 + r11 - r22, 0.0)
    tz = np.maximum(1.0 - r00 - r11 + r22, 0.0)

    sw = 2.0 * np.sqrt(tw)
    sx = 2.0 * np.sqrt(tx)
    sy = 2.0 * np.sqrt(ty)
    sz = 2.0 * np.sqrt(tz)
    safe = lambda s: np.where(s > 0, s, 1.0)  # noqa: E731  (dead lanes masked below)

    cand = np.stack(
        [
            np.stack([sw / 4, (r21 - r12) / safe(sw), (r02 - r20) / safe(sw), (r10 - r01) / safe(sw)], axis=-1),
            np.stack([(r21 - r12) / safe(sx), sx / 4, (r01 + r10) / safe(sx), (r02 + r20) / safe(sx)], axis=-1),
            np.stack([(r02 - r20) / safe(sy), (r01 + r10) / safe(sy), sy / 4, (r12 + r21) / safe(sy)], axis=-1),
            np.stack([(r10 - r01) / safe(sz), (r02 + r20) / safe(sz), (r12 + r21) / safe(sz), sz / 4], axis=-1),
        ],
        axis=-2,
    )  # (..., 4 branches, 4)
    branch = np.argmax(np.stack([tw, tx, ty, tz], axis=-1), axis=-1)
    q = np.take_along_axis(cand, branch[..., None, None], axis=-2)[..., 0, :]
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    q = np.where(q[..., :1] < 0, -q, q)
    return q


def rotation_about_axis(axis: Array, angles: Array) -> Array:
    """Rodrigues rotation matrices (..., 3, 3) about a fixed unit axis."""
    a = np.asarray(axis, dtype=float)
    th = np.asarray(angles, dtype=float)
    K = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    aa = np.outer(a, a)
    c = np.cos(th)[..., None, None]
    s = np.sin(th)[..., None, None]
    return c * np.eye(3) + s * K + (1 - c) * aa


# ---------------------------------------------------------------------------
# model and poses


@dataclass(frozen=True)
class EefPose:
    """End-effector position (meters) and orientation (unit quaternion)."""

    position: Array
    orientation: Array

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "orientation", np.asarray(self.orientation, dtype=float))
        if self.position.shape != (3,) or not np.all(np.isfinite(self.position)):
            raise InvalidInputError("EefPose position must be a finite 3-vector")
        if self.orientation.shape != (4,) or abs(np.linalg.norm(self.orientation) - 1.0) > _UNIT_TOL:
            raise InvalidInputError("EefPose orientation must be a unit quaternion (w, x, y, z)")


@dataclass(frozen=True)
class RobotModel:
    """Axis-offset serial chain with velocity bounds and tracked frames.

    tracked_frames lists the frame indices whose origins count as robot
    joints in the human-separation cost; eef_frame must be the last frame.
    """

    axes: Array  # (n, 3) unit rotation axes in the parent frame
    offsets: Array  # (n, 3) translation to the next frame, meters
    base_position: Array
    base_orientation: Array  # unit quaternion (w, x, y, z)
    tracked_frames: tuple
    eef_frame: int
    vel_lower: Array  # rad/s
    vel_upper: Array

    def __post_init__(self):
        axes = np.atleast_2d(np.asarray(self.axes, dtype=float))
        offsets = np.atleast_2d(np.asarray(self.offsets, dtype=float))
        n = axes.shape[0]
        if axes.shape != (n, 3) or offsets.shape != (n, 3) or n < 1:
            raise InvalidInputError("axes and offsets must both have shape (n_joints, 3)")
        norms = np.linalg.norm(axes, axis=1)
        if np.any(np.abs(norms - 1.0) > _UNIT_TOL):
            raise InvalidInputError("all rotation axes must be unit length")
        lo = np.asarray(self.vel_lower, dtype=float).reshape(-1)
        hi = np.asarray(self.vel_upper, dtype=float).reshape(-1)
        if lo.shape != (n,) or hi.shape != (n,) or not np.all(lo < hi):
            raise InvalidInputError("velocity bounds must satisfy lower < upper elementwise")
        base_p = np.asarray(self.base_position, dtype=float).reshape(3)
        base_q = np.asarray(self.base_orientation, dtype=float).reshape(4)
        if abs(np.linalg.norm(base_q) - 1.0) > _UNIT_TOL:
            raise InvalidInputError("base orientation must be a unit quaternion")
        tracked = tuple(int(f) for f in self.tracked_frames)
        if not tracked or any(f < 0 or f > n for f in tracked):
            raise InvalidInputError("tracked_frames must be valid frame indices")
        if int(self.eef_frame) != n:
            raise InvalidInputError("eef_frame must be the last frame of the chain")
        for name, val in (
            ("axes", axes),
            ("offsets", offsets),
            ("base_position", base_p),
            ("base_orientation", base_q),
            ("vel_lower", lo),
            ("vel_upper", hi),
        ):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "tracked_frames", tracked)
        object.__setattr__(self, "eef_frame", int(self.eef_frame))
        # per-joint Rodrigues terms, precomputed once for the FK hot path
        skews = np.zeros((n, 3, 3))
        skews[:, 0, 1] = -axes[:, 2]
        skews[:, 0, 2] = axes[:, 1]
        skews[:, 1, 0] = axes[:, 2]
        skews[:, 1, 2] = -axes[:, 0]
        skews[:, 2, 0] = -axes[:, 1]
        skews[:, 2, 1] = axes[:, 0]
        outers = axes[:, :, None] * axes[:, None, :]
        object.__setattr__(self, "_rot_skew", skews)
        object.__setattr__(self, "_rot_outer", outers)
        object.__setattr__(self, "_base_rotation", quat_to_matrix(base_q))

    @property
    def n_joints(self) -> int:
        return self.axes.shape[0]

    @property
    def n_frames(self) -> int:
        return self.axes.shape[0] + 1


@dataclass(frozen=True)
class FkResult:
    frame_positions: Array  # (n_frames, 3)
    eef_pose: EefPose


@dataclass
class BatchFk:
    """Forward kinematics of a batch of configurations (internal hot path)."""

    positions: Array  # (B, n_frames, 3)
    joint_axes_world: Array  # (B, n, 3)
    eef_rotations: Array  # (B, 3, 3)

    @cached_property
    def eef_quats(self) -> Array:  # (B, 4), computed only when asked for
        return quat_from_matrix(self.eef_rotations)


def _check_q(model: RobotModel, q) -> Array:
    q = np.asarray(q, dtype=float).reshape(-1)
    if q.shape != (model.n_joints,):
        raise InvalidInputError(f"joint vector has length {q.shape[0]}, expected {model.n_joints}")
    if not np.all(np.isfinite(q)):
        raise InvalidInputError("joint vector must be finite")
    return q


def fk_batch(model: RobotModel, qs: Array) -> BatchFk:
    """Vectorized FK over a batch of joint vectors, shape (B, n_joints)."""
    qs = np.asarray(qs, dtype=float)
    B, n = qs.shape
    R = np.broadcast_to(model._base_rotation, (B, 3, 3)).copy()
    p = np.broadcast_to(model.base_position, (B, 3)).copy()
    positions = np.empty((B, n + 1, 3))
    axes_world = np.empty((B, n, 3))
    positions[:, 0] = p
    eye = np.eye(3)
    skews = model._rot_skew
    outers = model._rot_outer
    c = np.cos(qs)[:, :, None, None]
    s = np.sin(qs)[:, :, None, None]
    for j in range(n):
        axes_world[:, j] = R @ model.axes[j]
        Rj = c[:, j] * eye + s[:, j] * skews[j] + (1.0 - c[:, j]) * outers[j]
        R = R @ Rj
        p = p + R @ model.offsets[j]
        positions[:, j + 1] = p
    return BatchFk(positions, axes_world, R)


def forward_kinematics(model: RobotModel, q) -> FkResult:
    """Frame origins in base coordinates plus the end-effector pose."""
    q = _check_q(model, q)
    fk = fk_batch(model, q[None, :])
    pose = EefPose(fk.positions[0, model.eef_frame], fk.eef_quats[0])
    return FkResult(fk.positions[0], pose)


def position_jacobians(fk: BatchFk, frames) -> Array:
    """Positional Jacobians (B, len(frames), 3, n) from a batched FK result.

    Column j of frame f is axis_j x (p_f - p_j) for j < f and zero otherwise.
    """
    frames = np.asarray(frames, dtype=int)
    n = fk.joint_axes_world.shape[1]
    lever = fk.positions[:, frames][:, :, None, :] - fk.positions[:, None, :n, :]
    cols = np.cross(fk.joint_axes_world[:, None, :, :], lever)  # (B, F, n, 3)
    mask = np.arange(n)[None, :] < frames[:, None]  # (F, n)
    cols = cols * mask[None, :, :, None]
    return np.swapaxes(cols, 2, 3)  # (B, F, 3, n)


def position_jacobian(model: RobotModel, q, frame: int) -> Array:
    """d(frame origin)/dq, a 3 x n_joints matrix."""
    q = _check_q(model, q)
    if not 0 <= int(frame) < model.n_frames:
        raise InvalidInputError(f"frame index {frame} out of range [0, {model.n_frames})")
    fk = fk_batch(model, q[None, :])
    return position_jacobians(fk, [int(frame)])[0, 0]


# ---------------------------------------------------------------------------
# model file I/O and the shipped default


def model_to_dict(model: RobotModel) -> dict:
    return {
        "n_joints": model.n_joints,
        "joints": [
            {"axis": model.axes[j].tolist(), "offset": model.offsets[j].tolist()}
            for j in range(model.n_joints)
        ],
        "base_pose": {
            "position": model.base_position.tolist(),
            "orientation": model.base_orientation.tolist(),
        },
        "tracked_frames": list(model.tracked_frames),
        "eef_frame": model.eef_frame,
        "velocity_bounds": {
            "lower": model.vel_lower.tolist(),
            "upper": model.vel_upper.tolist(),
        },
    }


def model_from_dict(data: dict) -> RobotModel:
    try:
        joints = data["joints"]
        if int(data["n_joints"]) != len(joints):
            raise InvalidInputError("n_joints does not match the joints list")
        return RobotModel(
            axes=np.array([j["axis"] for j in joints], dtype=float),
            offsets=np.array([j["offset"] for j in joints], dtype=float),
            base_position=np.asarray(data["base_pose"]["position"], dtype=float),
            base_orientation=np.asarray(data["base_pose"]["orientation"], dtype=float),
            tracked_frames=tuple(data["tracked_frames"]),
            eef_frame=int(data["eef_frame"]),
            vel_lower=np.asarray(data["velocity_bounds"]["lower"], dtype=float),
            vel_upper=np.asarray(data["velocity_bounds"]["upper"], dtype=float),
        )
    except (KeyError, TypeError) as exc:
        raise InvalidInputError(f"malformed robot model: {exc}") from exc


def load_robot_model(path) -> RobotModel:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"robot model {path}: {exc}") from exc
    return model_from_dict(data)


def save_robot_model(model: RobotModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2, sort_keys=True) + "\n")


def default_robot_model() -> RobotModel:
    """Generic 7-joint research arm used by benchmarks and generated scenarios.

    Alternating z/y axes with link offsets giving roughly 0.9 m of reach.
    """
    z = [0.0, 0.0, 1.0]
    y = [0.0, 1.0, 0.0]
    axes = np.array([z, y, z, y, z, y, z])
    offsets = np.array(
        [
            [0.0, 0.0, 0.333],
            [0.0, 0.0, 0.18],
            [0.0825, 0.0, 0.21],
            [-0.0825, 0.0, 0.18],
            [0.0, 0.0, 0.21],
            [0.088, 0.0, 0.107],
            [0.0, 0.0, 0.103],
        ]
    )
    return RobotModel(
        axes=axes,
        offsets=offsets,
        base_position=np.zeros(3),
        base_orientation=np.array([1.0, 0.0, 0.0, 0.0]),
        tracked_frames=tuple(range(1, 8)),
        eef_frame=7,
        vel_lower=-2.0 * np.ones(7),
        vel_upper=2.0 * np.ones(7),
    )
