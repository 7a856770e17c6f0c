"""Real-time anticipatory motion planning for manipulators near humans.

Weighted human- and task-centric costs (separation, visibility, legibility,
nominal deviation, smoothness, goal pose) optimized by an augmented-Lagrangian
iLQR solver inside a receding-horizon loop, with evaluation metrics and a CLI.
"""

from .costs import (
    CostWeights,
    GoalSpec,
    KnotContext,
    KnotCostEvaluator,
    LegibilityContext,
    distance_cost,
    goal_pose_cost,
    goal_probabilities,
    legibility_cost,
    nominal_cost,
    smoothness_cost,
    total_knot_cost,
    visibility_cost,
)
from .errors import InvalidInputError, SolverError
from .kinematics import (
    EefPose,
    RobotModel,
    default_robot_model,
    forward_kinematics,
    load_robot_model,
    position_jacobian,
    save_robot_model,
)
from .metrics import (
    MetricsReport,
    evaluate_trace,
    latency_metric,
    legibility_metric,
    nominal_metric,
    separation_metric,
    visibility_metric,
)
from .mpc import (
    ExecutionTrace,
    MpcConfig,
    Scenario,
    build_knot_contexts,
    build_problem,
    derive_nominal,
    load_scenario,
    run_mpc,
    warm_start_shift,
)
from .prediction import (
    HumanJointGaussian,
    HumanPrediction,
    ReachConfig,
    load_prediction,
    save_prediction,
    slice_horizon,
    synthesize_reach,
)
from .solver import (
    QuadraticCost,
    SolveResult,
    SolverConfig,
    TrajectoryProblem,
    al_update,
    backward_pass,
    forward_pass,
    rollout,
    solve,
)

__version__ = "0.1.0"
