"""Stochastic human-trajectory predictions: ingestion, slicing, synthesis.

A prediction is a per-joint Gaussian (mean + covariance) at each timestep on
a fixed grid. Predictions normally come from an external pose-prediction
network via JSON files; :func:`synthesize_reach` produces deterministic
desk-scale substitutes.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInputError

Array = np.ndarray

_SYM_TOL = 1e-9
_EIG_FLOOR = 1e-9


def _check_covariance(cov: Array, where: str = "") -> Array:
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (3, 3) or not np.all(np.isfinite(cov)):
        raise InvalidInputError(f"covariance{where} must be a finite 3x3 matrix")
    if np.max(np.abs(cov - cov.T)) > _SYM_TOL:
        raise InvalidInputError(f"covariance{where} is not symmetric")
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise InvalidInputError(f"covariance{where} is not positive definite") from None
    return cov


@dataclass(frozen=True)
class HumanJointGaussian:
    """Gaussian estimate of one human joint position, meters."""

    mean: Array
    cov: Array

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        if mean.shape != (3,) or not np.all(np.isfinite(mean)):
            raise InvalidInputError("mean must be a finite 3-vector")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", _check_covariance(self.cov))


@dataclass(frozen=True)
class HumanPrediction:
    """Per-joint Gaussian trajectories on a fixed time grid.

    means has shape (T, H, 3) and covs (T, H, 3, 3); the grid is
    t0, t0 + dt, ..., t0 + (T - 1) dt.
    """

    joint_names: tuple
    head_index: int
    means: Array
    covs: Array
    dt: float
    t0: float = 0.0

    def __post_init__(self):
        means = np.asarray(self.means, dtype=float)
        covs = np.asarray(self.covs, dtype=float)
        if means.ndim != 3 or means.shape[2] != 3 or means.shape[0] < 1:
            raise InvalidInputError("means must have shape (T, H, 3) with T >= 1")
        T, H = means.shape[:2]
        if covs.shape != (T, H, 3, 3):
            raise InvalidInputError("covs must have shape (T, H, 3, 3) matching means")
        if len(self.joint_names) != H:
            raise InvalidInputError("joint_names length must match the joint count")
        if not 0 <= int(self.head_index) < H:
            raise InvalidInputError("head_index out of range")
        if not self.dt > 0:
            raise InvalidInputError("dt must be positive")
        for t in range(T):
            for h in range(H):
                _check_covariance(covs[t, h], f" at frame {t}, joint {h}")
        means.setflags(write=False)
        covs.setflags(write=False)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covs", covs)
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        object.__setattr__(self, "head_index", int(self.head_index))
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "t0", float(self.t0))

    @property
    def n_frames(self) -> int:
        return self.means.shape[0]

    @property
    def n_joints(self) -> int:
        return self.means.shape[1]

    @property
    def t_end(self) -> float:
        return self.t0 + (self.n_frames - 1) * self.dt

    def frame(self, idx: int) -> list[HumanJointGaussian]:
        return [HumanJointGaussian(self.means[idx, h], self.covs[idx, h]) for h in range(self.n_joints)]

    @property
    def frames(self) -> list[list[HumanJointGaussian]]:
        """Per-timestep lists of joint Gaussians (built from the array storage)."""
        return [self.frame(t) for t in range(self.n_frames)]


def _floor_pd(cov: Array) -> Array:
    """Symmetrize and clamp eigenvalues so the matrix stays PD."""
    cov = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(cov)
    if vals[0] >= _EIG_FLOOR:
        return cov
    vals = np.maximum(vals, _EIG_FLOOR)
    cov = (vecs * vals) @ vecs.T
    return 0.5 * (cov + cov.T)


def slice_horizon(
    pred: HumanPrediction,
    t_start: float,
    n_knots: int,
    dt: float,
    hold_growth: float = 1.5,
) -> list[list[HumanJointGaussian]]:
    """Serve n_knots frames at t_start, t_start + dt, ... from a prediction.

    Off-grid times interpolate means and covariances linearly (covariances
    re-symmetrized and eigenvalue-floored). Times past the last frame hold
    the last mean and inflate its covariance by hold_growth per overrun grid
    step (fractional overruns use a fractional exponent).
    """
    means, covs = slice_horizon_arrays(pred, t_start, n_knots, dt, hold_growth)
    return [
        [HumanJointGaussian(means[k, h], covs[k, h]) for h in range(pred.n_joints)]
        for k in range(n_knots)
    ]


def slice_horizon_arrays(
    pred: HumanPrediction,
    t_start: float,
    n_knots: int,
    dt: float,
    hold_growth: float = 1.5,
) -> tuple[Array, Array]:
    if n_knots < 1 or dt <= 0:
        raise InvalidInputError("n_knots must be >= 1 and dt > 0")
    if hold_growth < 1.0:
        raise InvalidInputError("hold_growth must be >= 1")
    rel0 = (t_start - pred.t0) / pred.dt
    if rel0 < -1e-9:
        raise InvalidInputError(f"t_start={t_start} precedes the prediction start {pred.t0}")
    T = pred.n_frames
    H = pred.n_joints
    out_means = np.empty((n_knots, H, 3))
    out_covs = np.empty((n_knots, H, 3, 3))
    for k in range(n_knots):
        s = rel0 + k * dt / pred.dt
        snapped = round(s)
        if abs(s - snapped) < 1e-9 and 0 <= snapped <= T - 1:
            out_means[k] = pred.means[snapped]
            out_covs[k] = pred.covs[snapped]
        elif s <= T - 1:
            i0 = int(np.floor(s))
            w = s - i0
            out_means[k] = (1 - w) * pred.means[i0] + w * pred.means[i0 + 1]
            for h in range(H):
                c = (1 - w) * pred.covs[i0, h] + w * pred.covs[i0 + 1, h]
                out_covs[k, h] = _floor_pd(c)
        else:
            factor = hold_growth ** (s - (T - 1))
            out_means[k] = pred.means[-1]
            out_covs[k] = pred.covs[-1] * factor
    return out_means, out_covs


# ---------------------------------------------------------------------------
# synthetic reaching motion


_DEFAULT_JOINTS = ("head", "torso", "pelvis", "l_hand", "r_hand")
_DEFAULT_REST = np.array(
    [
        [0.80, 0.00, 0.55],
        [0.85, 0.00, 0.35],
        [0.90, 0.00, 0.10],
        [0.70, 0.25, 0.25],
        [0.70, -0.25, 0.25],
    ]
)


@dataclass
class ReachConfig:
    """Parameters for a deterministic synthetic human reach."""

    joint_names: tuple = _DEFAULT_JOINTS
    head_index: int = 0
    rest_positions: Array = field(default_factory=lambda: _DEFAULT_REST.copy())
    reach_joint: int = 4
    reach_target: Array = field(default_factory=lambda: np.array([0.55, 0.15, 0.35]))
    duration: float = 5.0
    settle: float = 0.0  # extra seconds held at the target after the reach
    dt: float = 0.25
    t0: float = 0.0
    base_cov: float = 1e-4  # isotropic variance at zero lookahead, m^2
    growth_rate: float = 0.4  # relative covariance growth per second of lookahead
    jitter: float = 0.004  # quasi-static joint perturbation scale, meters
    seed: int = 0

    @classmethod
    def from_dict(cls, data: dict) -> "ReachConfig":
        kwargs = dict(data)
        if "joint_names" in kwargs:
            kwargs["joint_names"] = tuple(kwargs["joint_names"])
        for key in ("rest_positions", "reach_target"):
            if key in kwargs:
                kwargs[key] = np.asarray(kwargs[key], dtype=float)
        unknown = set(kwargs) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise InvalidInputError(f"unknown synthesis parameters: {sorted(unknown)}")
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return {
            "joint_names": list(self.joint_names),
            "head_index": self.head_index,
            "rest_positions": np.asarray(self.rest_positions, dtype=float).tolist(),
            "reach_joint": self.reach_joint,
            "reach_target": np.asarray(self.reach_target, dtype=float).tolist(),
            "duration": self.duration,
            "settle": self.settle,
            "dt": self.dt,
            "t0": self.t0,
            "base_cov": self.base_cov,
            "growth_rate": self.growth_rate,
            "jitter": self.jitter,
            "seed": self.seed,
        }


def minimum_jerk_profile(tau: Array) -> Array:
    """Normalized minimum-jerk position profile on [0, 1]."""
    tau = np.clip(tau, 0.0, 1.0)
    return tau**3 * (10.0 - 15.0 * tau + 6.0 * tau**2)


def synthesize_reach(config: ReachConfig) -> HumanPrediction:
    """Deterministic (seeded) human reach: one joint follows a minimum-jerk
    path to the target, the others stay quasi-static with small seeded
    perturbations; covariance grows linearly with lookahead."""
    if config.duration <= 0:
        raise InvalidInputError("reach duration must be positive")
    if config.base_cov <= 0:
        raise InvalidInputError("base_cov must be positive")
    rest = np.asarray(config.rest_positions, dtype=float)
    H = rest.shape[0]
    if rest.shape != (H, 3) or len(config.joint_names) != H:
        raise InvalidInputError("rest_positions must be (H, 3) matching joint_names")
    if not 0 <= config.reach_joint < H:
        raise InvalidInputError("reach_joint out of range")
    target = np.asarray(config.reach_target, dtype=float).reshape(3)

    total = config.duration + max(config.settle, 0.0)
    T = int(round(total / config.dt)) + 1
    times = np.arange(T) * config.dt

    rng = np.random.default_rng(config.seed)
    noise = rng.standard_normal((T, H, 3))
    # 3-tap moving average keeps the jitter quasi-static rather than white
    smooth = noise.copy()
    smooth[1:-1] = (noise[:-2] + noise[1:-1] + noise[2:]) / 3.0
    means = rest[None, :, :] + config.jitter * smooth

    s = minimum_jerk_profile(times / config.duration)
    means[:, config.reach_joint, :] = rest[config.reach_joint] + s[:, None] * (target - rest[config.reach_joint])

    scale = config.base_cov * (1.0 + config.growth_rate * times)  # (T,)
    covs = scale[:, None, None, None] * np.eye(3)[None, None, :, :]
    covs = np.broadcast_to(covs, (T, H, 3, 3)).copy()

    return HumanPrediction(
        joint_names=tuple(config.joint_names),
        head_index=config.head_index,
        means=means,
        covs=covs,
        dt=config.dt,
        t0=config.t0,
    )


# ---------------------------------------------------------------------------
# file I/O


def load_prediction(path) -> HumanPrediction:
    """Load and validate a prediction JSON file."""
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"prediction {path}: {exc}") from exc
    return prediction_from_dict(data)


def prediction_from_dict(data: dict) -> HumanPrediction:
    try:
        joint_names = tuple(data["joint_names"])
        frames = data["frames"]
        head_index = int(data["head_index"])
        dt = float(data["dt"])
        t0 = float(data.get("t0", 0.0))
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInputError(f"malformed prediction: {exc}") from exc
    if not frames:
        raise InvalidInputError("prediction has no frames")
    H = len(joint_names)
    T = len(frames)
    means = np.empty((T, H, 3))
    covs = np.empty((T, H, 3, 3))
    for t, frame in enumerate(frames):
        if len(frame) != H:
            raise InvalidInputError(
                f"frame {t} has {len(frame)} joints, expected {H} (ragged prediction)"
            )
        for h, entry in enumerate(frame):
            try:
                means[t, h] = np.asarray(entry["mean"], dtype=float)
                covs[t, h] = np.asarray(entry["cov"], dtype=float)
            except (KeyError, TypeError, ValueError) as exc:
                raise InvalidInputError(f"frame {t}, joint {h}: {exc}") from exc
    return HumanPrediction(joint_names, head_index, means, covs, dt, t0)


def prediction_to_dict(pred: HumanPrediction) -> dict:
    return {
        "joint_names": list(pred.joint_names),
        "head_index": pred.head_index,
        "dt": pred.dt,
        "t0": pred.t0,
        "frames": [
            [
                {"mean": pred.means[t, h].tolist(), "cov": pred.covs[t, h].tolist()}
                for h in range(pred.n_joints)
            ]
            for t in range(pred.n_frames)
        ],
    }


def save_prediction(pred: HumanPrediction, path) -> None:
    Path(path).write_text(json.dumps(prediction_to_dict(pred), sort_keys=True) + "\n")


def prediction_means_csv(pred: HumanPrediction, path) -> None:
    """Write the mean trajectories as CSV for plotting."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["time"]
        for name in pred.joint_names:
            header += [f"{name}_x", f"{name}_y", f"{name}_z"]
        writer.writerow(header)
        for t in range(pred.n_frames):
            row = [f"{pred.t0 + t * pred.dt:.6f}"]
            row += [f"{v:.9f}" for v in pred.means[t].reshape(-1)]
            writer.writerow(row)
