"""Augmented-Lagrangian iLQR for fixed-horizon joint-velocity planning.

The problem is a single-integrator chain x_{t+1} = x_t + u_t dt with a fixed
initial state, per-knot nonlinear costs, and box bounds on the controls. An
inner iLQR loop (Riccati-style backward pass on local quadratic models plus a
line-searched forward rollout) minimizes the augmented objective; an outer
loop updates multipliers and the quadratic penalty until the bounds hold.

Bound constraints use the standard projection form: each bound contributes
(max(0, lambda + rho c)^2 - lambda^2) / (2 rho) to the objective, where c is
the signed violation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional, Protocol, Sequence

import numpy as np

from .costs import KnotContext, KnotCostEvaluator
from .errors import InvalidInputError, SolverError
from .kinematics import RobotModel

Array = np.ndarray

_REG_MIN = 1e-6
_REG_CAP = 1e6
_ARMIJO = 1e-4
_N_ALPHAS = 11  # alpha in {1, 1/2, ..., 2^-10}


@dataclass
class SolverConfig:
    max_inner_iters: int = 50
    max_outer_iters: int = 6
    cost_tol: float = 1e-4
    grad_tol: float = 1e-5
    constraint_tol: float = 1e-4
    init_penalty: float = 1.0
    penalty_scale: float = 10.0
    reg_cap: float = 1e6

    @classmethod
    def from_dict(cls, data: dict) -> "SolverConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidInputError(f"unknown solver config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}


class TrajectoryCost(Protocol):
    """Cost interface the solver optimizes against."""

    def value(self, xs: Array, us: Optional[Array] = None) -> float: ...

    def state_values(self, xs: Array) -> Array: ...

    def state_derivatives(self, xs: Array) -> tuple[Array, Array]: ...

    def control_derivatives(self, us: Array) -> tuple[Array, Array]: ...


@dataclass
class QuadraticCost:
    """Tracking cost sum (x - ref)^T Q (x - ref) + u^T R u, mostly for tests."""

    Q: Array
    R: Array
    x_ref: Array  # (N, n) or (n,)
    Qf: Optional[Array] = None  # terminal weight; defaults to Q

    def _ref(self, idx) -> Array:
        ref = np.asarray(self.x_ref, dtype=float)
        return ref[idx] if ref.ndim == 2 else ref

    def value(self, xs, us=None) -> float:
        e = xs - (self.x_ref if np.ndim(self.x_ref) == 2 else self.x_ref[None, :])
        Qf = self.Q if self.Qf is None else self.Qf
        total = float(np.einsum("ni,ij,nj->", e[:-1], self.Q, e[:-1]))
        total += float(e[-1] @ Qf @ e[-1])
        if us is not None and len(us) > 0:
            total += float(np.einsum("ni,ij,nj->", us, self.R, us))
        return total

    def state_values(self, xs) -> Array:
        e = xs - (self.x_ref if np.ndim(self.x_ref) == 2 else self.x_ref[None, :])
        Qf = self.Q if self.Qf is None else self.Qf
        vals = np.einsum("ni,ij,nj->n", e, self.Q, e)
        vals[-1] = e[-1] @ Qf @ e[-1]
        return vals

    def state_derivatives(self, xs) -> tuple[Array, Array]:
        N, n = xs.shape
        e = xs - (self.x_ref if np.ndim(self.x_ref) == 2 else self.x_ref[None, :])
        Qf = self.Q if self.Qf is None else self.Qf
        gx = 2.0 * e @ self.Q
        gx[-1] = 2.0 * Qf @ e[-1]
        hxx = np.tile(2.0 * self.Q, (N, 1, 1))
        hxx[-1] = 2.0 * Qf
        return gx, hxx

    def control_derivatives(self, us) -> tuple[Array, Array]:
        M = us.shape[0]
        return 2.0 * us @ self.R, np.tile(2.0 * self.R, (M, 1, 1))


@dataclass
class TrajectoryProblem:
    """Fixed-horizon problem: start state, knot costs, control box bounds."""

    n_knots: int
    dt: float
    x0: Array
    cost: TrajectoryCost
    u_lower: Array
    u_upper: Array
    model: Optional[RobotModel] = None
    knot_contexts: Optional[list] = None
    q_goal: Optional[Array] = None  # joint-space goal for the linear warm start

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        self.u_lower = np.asarray(self.u_lower, dtype=float).reshape(-1)
        self.u_upper = np.asarray(self.u_upper, dtype=float).reshape(-1)
        if self.n_knots < 2:
            raise InvalidInputError("n_knots must be >= 2")
        if not self.dt > 0:
            raise InvalidInputError("dt must be positive")
        n = self.x0.shape[0]
        if self.u_lower.shape != (n,) or self.u_upper.shape != (n,):
            raise InvalidInputError("control bounds must match the state dimension")
        if not np.all(self.u_lower < self.u_upper):
            raise InvalidInputError("control bounds must satisfy lower < upper")
        if self.q_goal is not None:
            self.q_goal = np.asarray(self.q_goal, dtype=float).reshape(-1)
            if self.q_goal.shape != (n,):
                raise InvalidInputError("q_goal must match the state dimension")
        if self.knot_contexts is not None and len(self.knot_contexts) != self.n_knots:
            raise InvalidInputError("knot_contexts length must equal n_knots")

    @property
    def n_dims(self) -> int:
        return self.x0.shape[0]

    @classmethod
    def from_contexts(
        cls,
        model: RobotModel,
        n_knots: int,
        dt: float,
        x0,
        contexts: Sequence[KnotContext],
        q_goal=None,
    ) -> "TrajectoryProblem":
        contexts = list(contexts)
        if len(contexts) != n_knots:
            raise InvalidInputError("need one knot context per knot")
        return cls(
            n_knots=n_knots,
            dt=dt,
            x0=x0,
            cost=KnotCostEvaluator(model, contexts),
            u_lower=model.vel_lower,
            u_upper=model.vel_upper,
            model=model,
            knot_contexts=contexts,
            q_goal=q_goal,
        )


@dataclass
class SolveResult:
    states: Array  # (N, n)
    controls: Array  # (N-1, n)
    total_cost: float
    iterations: int
    outer_iterations: int
    converged: bool
    max_bound_violation: float
    grad_inf: float
    wall_time: float

    def to_dict(self) -> dict:
        return {
            "states": self.states.tolist(),
            "controls": self.controls.tolist(),
            "total_cost": self.total_cost,
            "iterations": self.iterations,
            "outer_iterations": self.outer_iterations,
            "converged": self.converged,
            "max_bound_violation": self.max_bound_violation,
            "grad_inf": self.grad_inf,
            "wall_time": self.wall_time,
        }


def rollout(problem: TrajectoryProblem, controls: Array) -> Array:
    """Integrate x_{t+1} = x_t + u_t dt from the fixed start state."""
    controls = np.asarray(controls, dtype=float)
    if controls.shape != (problem.n_knots - 1, problem.n_dims):
        raise InvalidInputError(
            f"controls must have shape ({problem.n_knots - 1}, {problem.n_dims}), got {controls.shape}"
        )
    states = np.empty((problem.n_knots, problem.n_dims))
    states[0] = problem.x0
    # step-by-step so the stored states reproduce the update law bit-for-bit
    for t in range(problem.n_knots - 1):
        states[t + 1] = states[t] + controls[t] * problem.dt
    return states


def linear_warm_start(problem: TrajectoryProblem) -> Array:
    """Constant-velocity line toward the joint-space goal, clamped into bounds."""
    M = problem.n_knots - 1
    if problem.q_goal is None:
        return np.zeros((M, problem.n_dims))
    u = (problem.q_goal - problem.x0) / (M * problem.dt)
    us = np.tile(u, (M, 1))
    return np.clip(us, problem.u_lower, problem.u_upper)


# ---------------------------------------------------------------------------
# augmented-Lagrangian bookkeeping


def bound_violations(problem: TrajectoryProblem, us: Array) -> Array:
    """Signed violations c, shape (2, M, n): [0] = u - upper, [1] = lower - u."""
    return np.stack([us - problem.u_upper, problem.u_lower - us])


def max_bound_violation(problem: TrajectoryProblem, us: Array) -> float:
    return float(max(0.0, np.max(bound_violations(problem, us))))


def al_update(
    duals: Array,
    penalty: float,
    violations: Array,
    prev_max_violation: Optional[float] = None,
    config: Optional[SolverConfig] = None,
) -> tuple[Array, float]:
    """First-order multiplier update with conditional penalty growth.

    duals' = max(0, duals + penalty * c) per bound; the penalty is scaled up
    only when the worst violation failed to shrink by at least 4x since the
    previous outer iteration (and is still above tolerance).
    """
    config = config or SolverConfig()
    if penalty <= 0:
        raise InvalidInputError("penalty must be positive")
    duals = np.maximum(0.0, duals + penalty * violations)
    max_viol = float(max(0.0, np.max(violations))) if violations.size else 0.0
    if max_viol > config.constraint_tol and (
        prev_max_violation is not None and max_viol > prev_max_violation / 4.0
    ):
        penalty = penalty * config.penalty_scale
    return duals, penalty


def _al_objective(problem, cost_value: float, us: Array, duals: Array, penalty: float) -> float:
    if penalty <= 0:
        return cost_value
    c = bound_violations(problem, us)
    proj = np.maximum(0.0, duals + penalty * c)
    return cost_value + float(np.sum(proj**2 - duals**2)) / (2.0 * penalty)


def _al_control_terms(problem, us: Array, duals: Array, penalty: float) -> tuple[Array, Array]:
    """Gradient (M, n) and diagonal curvature (M, n) of the bound penalty."""
    c = bound_violations(problem, us)
    proj = np.maximum(0.0, duals + penalty * c)
    grad = proj[0] - proj[1]
    curv = penalty * ((proj[0] > 0).astype(float) + (proj[1] > 0).astype(float))
    return grad, curv


# ---------------------------------------------------------------------------
# iLQR passes


@dataclass
class BackwardPassResult:
    k: Array  # (M, n) feedforward steps
    K: Array  # (M, n, n) feedback gains
    expected_decrease: float  # model decrease at a full step, >= 0
    grad_inf: float  # infinity norm of the control gradient along the trajectory
    reg_used: float


@dataclass
class ForwardPassResult:
    states: Array
    controls: Array
    cost: float
    step_length: float  # 0.0 when no step was accepted
    accepted: bool


@dataclass
class _Derivs:
    gx: Array
    gu: Array
    hxx: Array
    huu: Array


def _assemble_derivs(problem, xs, us, duals, penalty) -> _Derivs:
    gx, hxx = problem.cost.state_derivatives(xs)
    gu, huu = problem.cost.control_derivatives(us)
    if penalty > 0:
        g_al, c_al = _al_control_terms(problem, us, duals, penalty)
        gu = gu + g_al
        huu = huu + c_al[:, :, None] * np.eye(problem.n_dims)[None]
    return _Derivs(gx, gu, hxx, huu)


def backward_pass(
    problem: TrajectoryProblem,
    states: Array,
    controls: Array,
    duals: Optional[Array] = None,
    penalty: float = 0.0,
    reg: float = 0.0,
    derivs: Optional[_Derivs] = None,
) -> BackwardPassResult:
    """Riccati-style sweep producing affine feedback gains.

    Q_uu blocks are Levenberg-Marquardt shifted until they factorize: the
    shift starts at zero, jumps to 1e-6 on the first failure and grows by 10x
    per failure; exceeding the cap aborts with a SolverError.
    """
    if derivs is None:
        M = problem.n_knots - 1
        if duals is None:
            duals = np.zeros((2, M, problem.n_dims))
        derivs = _assemble_derivs(problem, states, controls, duals, penalty)

    n = problem.n_dims
    M = problem.n_knots - 1
    dt = problem.dt
    eye = np.eye(n)

    while True:
        k = np.empty((M, n))
        K = np.empty((M, n, n))
        vx = derivs.gx[-1].copy()
        vxx = derivs.hxx[-1].copy()
        d1 = 0.0
        d2 = 0.0
        grad_inf = 0.0
        failed = False
        for t in range(M - 1, -1, -1):
            # A = I, B = dt * I for the single-integrator chain
            qx = derivs.gx[t] + vx
            qu = derivs.gu[t] + dt * vx
            qxx = derivs.hxx[t] + vxx
            qux = dt * vxx
            quu = derivs.huu[t] + dt * dt * vxx + reg * eye
            try:
                chol = np.linalg.cholesky(0.5 * (quu + quu.T))
            except np.linalg.LinAlgError:
                failed = True
                break
            rhs = np.column_stack([qu, qux])
            sol = np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))
            k[t] = -sol[:, 0]
            K[t] = -sol[:, 1:]
            d1 += float(qu @ k[t])
            d2 += float(k[t] @ quu @ k[t])
            grad_inf = max(grad_inf, float(np.max(np.abs(qu))))
            vx = qx + K[t].T @ quu @ k[t] + K[t].T @ qu + qux.T @ k[t]
            vxx = qxx + K[t].T @ quu @ K[t] + K[t].T @ qux + qux.T @ K[t]
            vxx = 0.5 * (vxx + vxx.T)
        if not failed:
            return BackwardPassResult(k, K, max(0.0, -(d1 + 0.5 * d2)), grad_inf, reg)
        reg = _REG_MIN if reg == 0.0 else reg * 10.0
        if reg > _REG_CAP:
            raise SolverError(
                f"backward pass regularization exceeded cap {_REG_CAP:g}; "
                "the local model cannot be made positive definite"
            )


def forward_pass(
    problem: TrajectoryProblem,
    states: Array,
    controls: Array,
    gains: BackwardPassResult,
    duals: Optional[Array] = None,
    penalty: float = 0.0,
    incumbent_cost: Optional[float] = None,
) -> ForwardPassResult:
    """Line-searched rollout of the affine policy.

    Tries alpha in {1, 1/2, ..., 2^-10} and accepts the first candidate whose
    actual decrease is at least 1e-4 * alpha * expected_decrease. Returns the
    incumbent with accepted=False when no step qualifies.
    """
    M = problem.n_knots - 1
    if duals is None:
        duals = np.zeros((2, M, problem.n_dims))
    if incumbent_cost is None:
        incumbent_cost = _al_objective(problem, problem.cost.value(states, controls), controls, duals, penalty)

    dt = problem.dt
    for alpha in 2.0 ** -np.arange(_N_ALPHAS):
        xs_new = np.empty_like(states)
        us_new = np.empty_like(controls)
        x = states[0]
        xs_new[0] = x
        for t in range(M):
            u = controls[t] + alpha * gains.k[t] + gains.K[t] @ (x - states[t])
            us_new[t] = u
            x = x + u * dt
            xs_new[t + 1] = x
        if not np.all(np.isfinite(xs_new)):
            continue
        cost_new = _al_objective(problem, problem.cost.value(xs_new, us_new), us_new, duals, penalty)
        if incumbent_cost - cost_new >= _ARMIJO * alpha * gains.expected_decrease:
            return ForwardPassResult(xs_new, us_new, cost_new, float(alpha), True)
    return ForwardPassResult(states, controls, incumbent_cost, 0.0, False)


# ---------------------------------------------------------------------------
# outer solve


def solve(
    problem: TrajectoryProblem,
    initial_controls: Optional[Array] = None,
    config: Optional[SolverConfig] = None,
) -> SolveResult:
    """AL-iLQR solve of the fixed-horizon problem.

    Without initial_controls the warm start is the clamped joint-space line
    toward the problem's goal. Accepted iterate costs are non-increasing at
    fixed duals/penalty; on convergence the bound violation is below the
    constraint tolerance and either the relative cost change or the control
    gradient is below its tolerance. Hitting the iteration caps returns the
    best iterate with converged=False.
    """
    t_start = time.perf_counter()
    config = config or SolverConfig()
    M = problem.n_knots - 1
    n = problem.n_dims

    if initial_controls is None:
        us = linear_warm_start(problem)
    else:
        us = np.asarray(initial_controls, dtype=float).copy()
        if us.shape != (M, n):
            raise InvalidInputError(f"initial controls must have shape ({M}, {n})")
    xs = rollout(problem, us)

    true_cost = problem.cost.value(xs, us)
    if not np.isfinite(true_cost):
        raise SolverError(f"warm start has non-finite cost {true_cost}")

    duals = np.zeros((2, M, n))
    penalty = config.init_penalty
    reg = 0.0
    total_iters = 0
    outer_done = 0
    prev_viol = max_bound_violation(problem, us)  # warm-start baseline for the shrink test
    converged = False
    grad_inf = np.inf

    for _ in range(config.max_outer_iters):
        outer_done += 1
        J = _al_objective(problem, problem.cost.value(xs, us), us, duals, penalty)
        inner_converged = False
        derivs = None
        for _ in range(config.max_inner_iters):
            total_iters += 1
            if derivs is None:
                derivs = _assemble_derivs(problem, xs, us, duals, penalty)
            bp = backward_pass(problem, xs, us, duals, penalty, reg=reg, derivs=derivs)
            reg = bp.reg_used
            grad_inf = bp.grad_inf
            if bp.grad_inf < config.grad_tol:
                inner_converged = True
                break
            fp = forward_pass(problem, xs, us, bp, duals, penalty, incumbent_cost=J)
            if fp.accepted:
                dJ = J - fp.cost
                xs, us, J = fp.states, fp.controls, fp.cost
                derivs = None
                if fp.step_length >= 2.0**-5:
                    reg = 0.0 if reg <= _REG_MIN else reg / 10.0
                else:
                    # deep backtracking means the local model overshoots
                    reg = _REG_MIN if reg == 0.0 else reg * 10.0
                if abs(dJ) / max(1.0, abs(J)) < config.cost_tol:
                    inner_converged = True
                    break
            else:
                reg = _REG_MIN if reg == 0.0 else reg * 10.0
                if reg > config.reg_cap:
                    raise SolverError(
                        "line search stalled and regularization exceeded its cap; "
                        f"best cost {J:.6g}"
                    )
        viol = max_bound_violation(problem, us)
        if inner_converged and viol < config.constraint_tol:
            converged = True
            break
        duals, penalty = al_update(duals, penalty, bound_violations(problem, us), prev_viol, config)
        prev_viol = viol

    return SolveResult(
        states=xs,
        controls=us,
        total_cost=problem.cost.value(xs, us),
        iterations=total_iters,
        outer_iterations=outer_done,
        converged=converged,
        max_bound_violation=max_bound_violation(problem, us),
        grad_inf=float(grad_inf),
        wall_time=time.perf_counter() - t_start,
    )
