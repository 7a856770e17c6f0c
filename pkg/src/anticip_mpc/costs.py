"""Per-knot cost terms and their weighted combination.

Six terms are combined into one knot cost: human separation (inverse
Mahalanobis distance), end-effector visibility (gaze angle over head
uncertainty), motion legibility (goal-inference probability), deviation from
a nominal end-effector path, control smoothness, and goal-pose error. Each
exposes value, gradient and a positive-semidefinite Gauss-Newton curvature
block with respect to the joint state x and control u at one knot.

:class:`KnotCostEvaluator` evaluates whole trajectories with batched
kinematics; it is the solver's hot path and must agree with the scalar
functions, which the test suite checks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidInputError
from .kinematics import (
    BatchFk,
    EefPose,
    RobotModel,
    _check_q,
    fk_batch,
    position_jacobians,
    quat_normalize,
    quat_to_matrix,
)
from .prediction import HumanJointGaussian

Array = np.ndarray

DIST_EPS = 1e-6  # Mahalanobis denominator regularizer; the raw formula is singular at contact
HESS_FLOOR = 1e-8
_CURV_GUARD = 1e-3  # scale guard when curvature is a gradient outer product
_ORIENT_FD_H = 1e-6
_TINY = 1e-12


@dataclass(frozen=True)
class CostWeights:
    """Nonnegative weights of the six knot-cost terms."""

    w_dist: float = 0.0
    w_vis: float = 0.0
    w_leg: float = 0.0
    w_nom: float = 0.0
    w_smooth: float = 0.0
    w_goal: float = 0.0

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            v = float(getattr(self, name))
            if not np.isfinite(v) or v < 0:
                raise InvalidInputError(f"{name} must be finite and >= 0, got {v}")
            object.__setattr__(self, name, v)

    @classmethod
    def from_dict(cls, data: dict) -> "CostWeights":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidInputError(f"unknown weight keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}

    def scaled(self, a: float) -> "CostWeights":
        return CostWeights(**{k: a * v for k, v in self.to_dict().items()})


@dataclass(frozen=True)
class LegibilityContext:
    """Task-start end-effector position, candidate goals, and the true goal."""

    start: Array  # 3-vector, fixed at task start across replans
    goals: Array  # (G, 3) candidate goal positions
    goal_index: int

    def __post_init__(self):
        start = np.asarray(self.start, dtype=float).reshape(3)
        goals = np.atleast_2d(np.asarray(self.goals, dtype=float))
        if goals.shape[0] < 1 or goals.shape[1] != 3:
            raise InvalidInputError("goals must be a nonempty (G, 3) array")
        if not np.all(np.isfinite(start)) or not np.all(np.isfinite(goals)):
            raise InvalidInputError("legibility context must be finite")
        if not 0 <= int(self.goal_index) < goals.shape[0]:
            raise InvalidInputError("goal_index out of range")
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "goals", goals)
        object.__setattr__(self, "goal_index", int(self.goal_index))


@dataclass(frozen=True)
class GoalSpec:
    """Target end-effector position and orientation."""

    position: Array
    orientation: Array  # unit quaternion (w, x, y, z)

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(3)
        q = np.asarray(self.orientation, dtype=float).reshape(4)
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            raise InvalidInputError("goal orientation must be a unit quaternion")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", q)


@dataclass(frozen=True)
class KnotContext:
    """Everything the knot cost needs besides the robot state and control."""

    human_frame: tuple  # HumanJointGaussian per human joint (may be empty)
    gaze_object: Array  # 3-vector the human is assumed to look at
    nominal: Array  # nominal end-effector position at this knot's time
    legibility: LegibilityContext
    goal: GoalSpec
    weights: CostWeights
    t: float
    head_index: int = 0

    def __post_init__(self):
        frame = tuple(self.human_frame)
        for g in frame:
            if not isinstance(g, HumanJointGaussian):
                raise InvalidInputError("human_frame entries must be HumanJointGaussian")
        if frame and not 0 <= int(self.head_index) < len(frame):
            raise InvalidInputError("head_index out of range")
        object.__setattr__(self, "human_frame", frame)
        object.__setattr__(self, "gaze_object", np.asarray(self.gaze_object, dtype=float).reshape(3))
        object.__setattr__(self, "nominal", np.asarray(self.nominal, dtype=float).reshape(3))
        object.__setattr__(self, "head_index", int(self.head_index))
        object.__setattr__(self, "t", float(self.t))


# ---------------------------------------------------------------------------
# scalar cost terms


def distance_cost(model: RobotModel, q, human_frame: Sequence[HumanJointGaussian]) -> float:
    """Inverse covariance-scaled separation, summed over human/robot joint pairs.

    sum_h sum_r 1 / (d_hr^T Sigma_h^-1 d_hr + eps) with d_hr the offset between
    human joint h and tracked robot frame r. Larger separation, smaller cost.
    """
    q = _check_q(model, q)
    fk = fk_batch(model, q[None, :])
    frames = fk.positions[0, list(model.tracked_frames)]  # (R, 3)
    total = 0.0
    for g in human_frame:
        d = frames - g.mean  # (R, 3)
        m = np.einsum("ri,ij,rj->r", d, np.linalg.inv(g.cov), d)
        total += float(np.sum(1.0 / (m + DIST_EPS)))
    return total


def head_position_stddev(head: HumanJointGaussian) -> float:
    """Rotation-invariant scalar spread of the head estimate, sqrt(tr(cov)/3)."""
    return float(np.sqrt(np.trace(head.cov) / 3.0))


def visibility_cost(model: RobotModel, q, head: HumanJointGaussian, gaze_object) -> float:
    """Angle at the head between the gazed object and the end effector,
    divided by the head-position standard deviation."""
    q = _check_q(model, q)
    fk = fk_batch(model, q[None, :])
    p_eef = fk.positions[0, model.eef_frame]
    return _visibility_angle(np.asarray(gaze_object, dtype=float), head.mean, p_eef) / head_position_stddev(head)


def _visibility_angle(gaze_object: Array, head_mean: Array, p_eef: Array) -> float:
    a = gaze_object - head_mean
    b = p_eef - head_mean
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na < 1e-9 or nb < 1e-9:
        raise InvalidInputError("degenerate gaze ray: object or end effector coincides with the head")
    t = np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0)
    return float(np.arccos(t))


def legibility_cost(eef_position, ctx: LegibilityContext) -> float:
    """One minus the inferred probability of the true goal given the current
    end-effector position, using squared-distance path costs. Exponents are
    shifted by their maximum before exponentiation, so distant goals cannot
    overflow; the normalized ratio is shift-invariant."""
    probs = goal_probabilities(np.asarray(eef_position, dtype=float).reshape(3), ctx)
    return float(1.0 - probs[ctx.goal_index])


def goal_probabilities(eef_position: Array, ctx: LegibilityContext) -> Array:
    """P(G | position) over all candidate goals; sums to one."""
    logits = _legibility_logits(eef_position[None, :], ctx.goals[None, :, :], ctx.start[None, :])[0]
    shifted = logits - np.max(logits)
    e = np.exp(shifted)
    return e / np.sum(e)


def _legibility_logits(eef: Array, goals: Array, start: Array) -> Array:
    """(N, G) logits ||G - S||^2 - ||G - Q||^2."""
    vs = np.sum((goals - start[:, None, :]) ** 2, axis=-1)
    vq = np.sum((goals - eef[:, None, :]) ** 2, axis=-1)
    return vs - vq


def nominal_cost(eef_position, nominal) -> float:
    """Euclidean distance between actual and nominal end-effector positions."""
    return float(np.linalg.norm(np.asarray(eef_position, dtype=float) - np.asarray(nominal, dtype=float)))


def smoothness_cost(u) -> float:
    """Squared magnitude of the joint-velocity control."""
    u = np.asarray(u, dtype=float)
    return float(np.dot(u, u))


def goal_pose_cost(eef: EefPose, goal: GoalSpec) -> float:
    """Position distance plus the orientation term 1 - <q_goal, q_eef>^2.

    The orientation term lies in [0, 1] and is invariant under negating
    either quaternion.
    """
    dq = float(np.dot(quat_normalize(eef.orientation), goal.orientation))
    return float(np.linalg.norm(goal.position - eef.position)) + 1.0 - dq * dq


@dataclass(frozen=True)
class KnotCostResult:
    value: float
    grad_x: Array
    grad_u: Array
    hess_xx: Array
    hess_uu: Array


def total_knot_cost(model: RobotModel, q, u, ctx: KnotContext) -> KnotCostResult:
    """Weighted sum of the six terms with gradient and Gauss-Newton curvature.

    Cartesian terms are chained through positional Jacobians; the goal
    orientation term is differentiated by central finite differences. Pass
    u=None at a terminal knot (no control there).
    """
    q = _check_q(model, q)
    n = model.n_joints
    ev = KnotCostEvaluator(model, [ctx])
    value = float(ev.state_values(q[None, :])[0])
    gx, hxx = ev.state_derivatives(q[None, :])
    gx, hxx = gx[0], hxx[0]
    if u is None:
        gu = np.zeros(n)
        huu = HESS_FLOOR * np.eye(n)
    else:
        u = np.asarray(u, dtype=float).reshape(-1)
        if u.shape != (n,):
            raise InvalidInputError(f"control has length {u.shape[0]}, expected {n}")
        w = ctx.weights.w_smooth
        value += w * float(np.dot(u, u))
        gu = 2.0 * w * u
        huu = (2.0 * w + HESS_FLOOR) * np.eye(n)
    return KnotCostResult(value, gx, gu, hxx, huu)


# ---------------------------------------------------------------------------
# batched trajectory evaluator (solver hot path)


class KnotCostEvaluator:
    """Evaluates the knot cost over whole trajectories with batched FK.

    All contexts must share one CostWeights, one head index, and one goal
    set size; human frames, gaze, nominal points and times vary per knot.
    """

    def __init__(self, model: RobotModel, contexts: Sequence[KnotContext]):
        contexts = list(contexts)
        if not contexts:
            raise InvalidInputError("need at least one knot context")
        self.model = model
        self.contexts = contexts
        w = contexts[0].weights
        if any(c.weights != w for c in contexts):
            raise InvalidInputError("all knot contexts must share the same weights")
        self.weights = w
        N = len(contexts)
        self.n_knots = N

        H = len(contexts[0].human_frame)
        if any(len(c.human_frame) != H for c in contexts):
            raise InvalidInputError("all knot contexts must have the same human joint count")
        self.n_human = H
        if H > 0:
            head = contexts[0].head_index
            if any(c.head_index != head for c in contexts):
                raise InvalidInputError("all knot contexts must share one head index")
            self.head_index = head
            self.mu = np.array([[g.mean for g in c.human_frame] for c in contexts])  # (N, H, 3)
            covs = np.array([[g.cov for g in c.human_frame] for c in contexts])
            self.cov_inv = np.linalg.inv(covs)
            self.sigma_head = np.sqrt(np.trace(covs[:, head], axis1=1, axis2=2) / 3.0)  # (N,)
        elif w.w_dist > 0 or w.w_vis > 0:
            raise InvalidInputError("human-centric weights require human frames in every context")

        self.gaze = np.array([c.gaze_object for c in contexts])  # (N, 3)
        self.nominal = np.array([c.nominal for c in contexts])  # (N, 3)

        G = contexts[0].legibility.goals.shape[0]
        gi = contexts[0].legibility.goal_index
        if any(c.legibility.goals.shape[0] != G or c.legibility.goal_index != gi for c in contexts):
            raise InvalidInputError("all knot contexts must share the legibility goal layout")
        self.goal_index = gi
        self.goals = np.array([c.legibility.goals for c in contexts])  # (N, G, 3)
        self.leg_start = np.array([c.legibility.start for c in contexts])  # (N, 3)

        self.goal_p = np.array([c.goal.position for c in contexts])  # (N, 3)
        self.goal_q = np.array([c.goal.orientation for c in contexts])  # (N, 4)
        # orientation error via <q1,q2>^2 = (tr(R1^T R2) + 1) / 4, no quaternion
        # extraction needed in the hot path
        self.goal_R = np.array([quat_to_matrix(c.goal.orientation) for c in contexts])  # (N, 3, 3)

        tracked = np.asarray(model.tracked_frames, dtype=int)
        self._jframes = np.concatenate([tracked, [model.eef_frame]])
        self._n_tracked = len(tracked)
        self._tracked = tracked

    # -- values ------------------------------------------------------------

    def value(self, xs: Array, us: Optional[Array] = None) -> float:
        total = float(np.sum(self.state_values(xs)))
        if us is not None and len(us) > 0 and self.weights.w_smooth > 0:
            total += self.weights.w_smooth * float(np.sum(us * us))
        return total

    def state_values(self, xs: Array) -> Array:
        """Per-knot state-dependent cost (everything except smoothness)."""
        xs = np.asarray(xs, dtype=float)
        fk = fk_batch(self.model, xs)
        return self._state_values_from_fk(fk)

    def _state_values_from_fk(self, fk: BatchFk) -> Array:
        w = self.weights
        N = fk.positions.shape[0]
        vals = np.zeros(N)
        p_eef = fk.positions[:, self.model.eef_frame]

        if w.w_dist > 0 and self.n_human > 0:
            d = fk.positions[:, self._tracked][:, None, :, :] - self.mu[:, :, None, :]  # (N,H,R,3)
            sd = np.einsum("nhij,nhrj->nhri", self.cov_inv, d)
            m = np.einsum("nhri,nhri->nhr", d, sd)
            vals += w.w_dist * np.sum(1.0 / (m + DIST_EPS), axis=(1, 2))

        if w.w_vis > 0:
            theta, _, _ = self._visibility_terms(p_eef)
            vals += w.w_vis * theta / self.sigma_head

        if w.w_leg > 0:
            probs = self._goal_probs(p_eef)
            vals += w.w_leg * (1.0 - probs[:, self.goal_index])

        if w.w_nom > 0:
            vals += w.w_nom * np.linalg.norm(p_eef - self.nominal, axis=1)

        if w.w_goal > 0:
            vals += w.w_goal * (
                np.linalg.norm(p_eef - self.goal_p, axis=1) + self._orientation_error(fk.eef_rotations)
            )

        return vals

    def _orientation_error(self, eef_rotations: Array) -> Array:
        dot_sq = 0.25 * (np.einsum("nij,nij->n", self.goal_R, eef_rotations) + 1.0)
        return 1.0 - dot_sq

    def _visibility_terms(self, p_eef: Array):
        """Angles plus the pieces the gradient needs."""
        a = self.gaze - self.mu[:, self.head_index]  # (N, 3)
        b = p_eef - self.mu[:, self.head_index]
        na = np.linalg.norm(a, axis=1)
        nb = np.linalg.norm(b, axis=1)
        if np.any(na < 1e-9) or np.any(nb < 1e-9):
            raise InvalidInputError("degenerate gaze ray: object or end effector coincides with the head")
        ahat = a / na[:, None]
        bhat = b / nb[:, None]
        t = np.clip(np.sum(ahat * bhat, axis=1), -1.0, 1.0)
        theta = np.arccos(t)
        # grad of theta wrt p_eef: -(ahat - t bhat) / (|b| sin theta); zero at the kink
        u_perp = ahat - t[:, None] * bhat
        sin_theta = np.linalg.norm(u_perp, axis=1)
        ok = sin_theta > 1e-9
        g = np.zeros_like(b)
        g[ok] = -u_perp[ok] / (nb[ok] * sin_theta[ok])[:, None]
        return theta, g, nb

    def _goal_probs(self, p_eef: Array) -> Array:
        logits = _legibility_logits(p_eef, self.goals, self.leg_start)
        shifted = logits - np.max(logits, axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / np.sum(e, axis=1, keepdims=True)

    # -- derivatives ---------------------------------------------------------

    def state_derivatives(self, xs: Array) -> tuple[Array, Array]:
        """Gradient (N, n) and PSD curvature (N, n, n) of the per-knot state cost."""
        xs = np.asarray(xs, dtype=float)
        N, n = xs.shape
        w = self.weights
        fk = fk_batch(self.model, xs)
        J = position_jacobians(fk, self._jframes)
        Jt = J[:, : self._n_tracked]  # (N, R, 3, n)
        Je = J[:, -1]  # (N, 3, n)
        p_eef = fk.positions[:, self.model.eef_frame]

        gx = np.zeros((N, n))
        hxx = np.tile(HESS_FLOOR * np.eye(n), (N, 1, 1))

        if w.w_dist > 0 and self.n_human > 0:
            d = fk.positions[:, self._tracked][:, None, :, :] - self.mu[:, :, None, :]
            sd = np.einsum("nhij,nhrj->nhri", self.cov_inv, d)
            m = np.einsum("nhri,nhri->nhr", d, sd)
            denom = m + DIST_EPS
            v = np.einsum("nhri,nria->nhra", sd, Jt)  # (N, H, R, n)
            gx += w.w_dist * np.einsum("nhr,nhra->na", -2.0 / denom**2, v)
            # curvature with the sign of the off-axis part flipped positive:
            # 8 v v^T / denom^3 + 2 J^T S^-1 J / denom^2. Keeping the full
            # magnitude of both pieces stops line-search overshoot against the
            # proximity barrier, which otherwise stalls the inner loop
            hxx += w.w_dist * np.einsum("nhr,nhra,nhrb->nab", 8.0 / denom**3, v, v)
            w_off = np.einsum("nhr,nhij->nrij", 2.0 / denom**2, self.cov_inv)
            hxx += w.w_dist * np.einsum("nria,nrij,nrjb->nab", Jt, w_off, Jt)

        if w.w_vis > 0:
            theta, g_p, _ = self._visibility_terms(p_eef)
            g_p = g_p / self.sigma_head[:, None]
            c_vis = theta / self.sigma_head
            gx += w.w_vis * np.einsum("ni,nia->na", g_p, Je)
            hp = g_p[:, :, None] * g_p[:, None, :] / (2.0 * np.maximum(c_vis, _CURV_GUARD))[:, None, None]
            hxx += w.w_vis * np.einsum("nia,nij,njb->nab", Je, hp, Je)

        if w.w_leg > 0:
            probs = self._goal_probs(p_eef)
            p_r = probs[:, self.goal_index]
            mean_goal = np.einsum("ng,ngi->ni", probs, self.goals)
            g_p = -2.0 * p_r[:, None] * (self.goals[:, self.goal_index] - mean_goal)
            c_leg = 1.0 - p_r
            gx += w.w_leg * np.einsum("ni,nia->na", g_p, Je)
            hp = g_p[:, :, None] * g_p[:, None, :] / (2.0 * np.maximum(c_leg, _CURV_GUARD))[:, None, None]
            hxx += w.w_leg * np.einsum("nia,nij,njb->nab", Je, hp, Je)

        if w.w_nom > 0:
            gp, hp = _norm_grad_curv(p_eef - self.nominal)
            gx += w.w_nom * np.einsum("ni,nia->na", gp, Je)
            hxx += w.w_nom * np.einsum("nia,nij,njb->nab", Je, hp, Je)

        if w.w_goal > 0:
            gp, hp = _norm_grad_curv(p_eef - self.goal_p)
            gx += w.w_goal * np.einsum("ni,nia->na", gp, Je)
            hxx += w.w_goal * np.einsum("nia,nij,njb->nab", Je, hp, Je)
            o_val, g_or = self._orientation_terms(xs, fk)
            gx += w.w_goal * g_or
            h_or = g_or[:, :, None] * g_or[:, None, :] / (2.0 * np.maximum(o_val, _CURV_GUARD))[:, None, None]
            hxx += w.w_goal * h_or

        return gx, hxx

    def _orientation_terms(self, xs: Array, fk: BatchFk) -> tuple[Array, Array]:
        """Orientation error 1 - <q_goal, q_eef>^2 and its central-difference
        gradient w.r.t. the joint vector, one batched FK call for all knots."""
        N, n = xs.shape
        h = _ORIENT_FD_H
        o_val = self._orientation_error(fk.eef_rotations)

        pert = np.repeat(xs[:, None, :], 2 * n, axis=1)
        eye = np.eye(n)
        pert[:, :n, :] += h * eye
        pert[:, n:, :] -= h * eye
        rots = fk_batch(self.model, pert.reshape(N * 2 * n, n)).eef_rotations.reshape(N, 2 * n, 3, 3)
        dot_sq = 0.25 * (np.einsum("nij,nkij->nk", self.goal_R, rots) + 1.0)
        o_pert = 1.0 - dot_sq
        g = (o_pert[:, :n] - o_pert[:, n:]) / (2.0 * h)
        return o_val, g

    def control_derivatives(self, us: Array) -> tuple[Array, Array]:
        """Gradient (M, n) and curvature (M, n, n) of the control cost."""
        us = np.asarray(us, dtype=float)
        M, n = us.shape
        w = self.weights.w_smooth
        gu = 2.0 * w * us
        huu = np.tile((2.0 * w + HESS_FLOOR) * np.eye(n), (M, 1, 1))
        return gu, huu


def _norm_grad_curv(r: Array) -> tuple[Array, Array]:
    """Gradient and PSD curvature of ||r|| w.r.t. r, batched over rows.

    The exact Hessian (I - rhat rhat^T)/||r|| is already PSD; the norm in the
    denominator is floored to keep curvature bounded near zero."""
    nr = np.linalg.norm(r, axis=1)
    safe = np.maximum(nr, _TINY)
    rhat = r / safe[:, None]
    g = np.where(nr[:, None] > _TINY, rhat, 0.0)
    hp = (np.eye(3)[None] - rhat[:, :, None] * rhat[:, None, :]) / np.maximum(nr, _CURV_GUARD)[:, None, None]
    return g, hp
