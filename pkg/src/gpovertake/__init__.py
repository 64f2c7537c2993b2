"""Sparse-GP opponent prediction and two-stage QP overtaking planner.

Library layout:
  track      arc-length raceline, Frenet transforms, synthetic tracks
  qp         ADMM-style box-constrained QP solver with active-set polish
  gp         dense and variational sparse GP regression on scalar inputs
  selection  inducing-guided curation of opponent observations
  predictor  forward simulation and collision-interval detection
  seed       key points, quintic seed fit, differential-flatness references
  mpc        Frenet-frame linear MPC and the per-cycle planner
  sim        closed-loop kinematic simulator and episode metrics
  scenario   JSON scenario schema and validation
  cli        run / sweep / predict-bench / validate-config commands
"""

from .track import (
    FrenetPose,
    Raceline,
    TrackPoint,
    load_raceline,
    make_circle,
    make_oval_chicane,
    make_raceline,
    make_s_curve,
    make_straight,
    save_raceline,
    wrap_angle,
)
from .qp import QpProblem, QpSettings, QpSolution, solve_qp
from .gp import (
    DenseGpModel,
    Posterior,
    RbfKernel,
    SgpModel,
    fit_dense_gp,
    fit_sgp,
    make_dense_gp,
    make_sgp,
    predict,
    predict_dense,
    predictive_distance,
)
from .selection import Observation, ObservationBuffer, SelectionConfig, select
from .predictor import (
    CollisionInterval,
    OpponentEstimate,
    PredictorConfig,
    find_collision_interval,
    forward_simulate,
    opponent_lateral,
)
from .seed import (
    FlatReferences,
    KeyPointSet,
    QuinticTraj,
    choose_key_points,
    extract_flat_references,
    fit_quintic,
    flat_outputs,
    interpolate_rough,
)
from .mpc import (
    Corridor,
    MpcConfig,
    MpcSolution,
    OvertakePlanner,
    PlannerConfig,
    WorldSnapshot,
    build_corridor,
    linearize_dynamics,
)
from .sim import (
    EpisodeConfig,
    EpisodeResult,
    VehicleParams,
    VehicleState,
    compute_success_rate,
    run_episode,
    step_vehicle,
)
from .scenario import Scenario, load_scenario

__version__ = "0.1.0"
