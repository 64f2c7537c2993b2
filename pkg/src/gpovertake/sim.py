"""Closed-loop kinematic racing simulator.

The ego runs the planning pipeline (racing / trailing / overtake via MPC);
the opponent tracks the racing line with pure pursuit at a scaled reference
speed, optionally wandering laterally with a seeded Ornstein-Uhlenbeck
offset.  Episodes are fully deterministic functions of (seed, config), with
the exception of measured wall-clock compute times, which are reported
separately and excluded from the deterministic metrics summary.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import gp, mpc, predictor, selection
from .track import Raceline, FrenetPose, wrap_angle

OUTCOME_OVERTAKE = "overtake"
OUTCOME_CRASH = "crash"
OUTCOME_TIMEOUT = "timeout"


@dataclass
class VehicleParams:
    wheelbase: float = 0.33
    width: float = 0.27
    length: float = 0.50
    v_max: float = 5.5
    a_min: float = -6.0
    a_max: float = 4.0
    delta_max: float = 0.40
    delta_rate_max: float = 3.2


@dataclass
class VehicleState:
    x: float
    y: float
    psi: float
    v: float


@dataclass
class EpisodeConfig:
    s_max: float = 0.5            # opponent-to-ego speed ratio in [0, 1]
    dt: float = 0.01
    max_time: float = 90.0
    seed: int = 0
    planner_hz: float = 20.0
    perception_every: int = 2     # sim steps between opponent observations
    obs_noise_std: float = 0.03
    opp_noise_std: float = 0.08   # OU lateral wander of the opponent
    opp_noise_tau: float = 1.0
    start_gap_factor: float = 3.0  # initial gap in multiples of s_c
    rejoin_tol: float = 0.1
    bootstrap_period: float = 2.0
    bootstrap_min_obs: int = 30
    min_fit_points: int = 2
    sgp_m: int = 40
    sgp_iters: int = 200
    sgp_refit_iters: int = 80
    opponent: bool = True

    def __post_init__(self):
        if not 0.0 <= self.s_max <= 1.0:
            raise ValueError("s_max must lie in [0, 1]")
        if self.dt <= 0 or self.max_time <= 0 or self.planner_hz <= 0:
            raise ValueError("dt, max_time and planner_hz must be positive")


@dataclass
class EpisodeResult:
    outcome: str
    length: float = 0.0           # overtake path length [m]
    duration: float = 0.0         # overtake duration [s]
    jerk_avg: float = 0.0         # mean |da|/dt over the maneuver [m/s^3]
    steer_rate_avg: float = 0.0   # mean |ddelta|/dt over the maneuver [rad/s]
    sim_time: float = 0.0
    ego_laps: int = 0
    opp_laps: int = 0
    bound_violation: bool = False
    footprint_overlap: bool = False
    compute_mean_ms: float = 0.0
    compute_std_ms: float = 0.0
    seed: int = 0


@dataclass
class EpisodeLog:
    records: list = field(default_factory=list)
    maneuver_x: np.ndarray = None
    maneuver_y: np.ndarray = None
    plan_times_ms: list = field(default_factory=list)

    def write_jsonl(self, path):
        with open(path, "w") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec) + "\n")


def step_vehicle(state: VehicleState, v_cmd, delta_cmd, delta_prev, dt, p: VehicleParams):
    """One RK4 step of the kinematic bicycle with actuator limiting.

    The steering command is range- and rate-limited against ``delta_prev``;
    the speed command maps to a bounded constant acceleration over the step.
    Returns (new_state, a_applied, delta_applied).
    """
    delta_cmd = min(max(delta_cmd, -p.delta_max), p.delta_max)
    max_step = p.delta_rate_max * dt
    delta = min(max(delta_cmd, delta_prev - max_step), delta_prev + max_step)
    v_cmd = min(max(v_cmd, 0.0), p.v_max)
    a = (v_cmd - state.v) / dt
    a = min(max(a, p.a_min), p.a_max)

    tan_d = math.tan(delta) / p.wheelbase

    def rhs(psi, v):
        return math.cos(psi) * v, math.sin(psi) * v, v * tan_d

    x, y, psi, v = state.x, state.y, state.psi, state.v
    k1 = rhs(psi, v)
    k2 = rhs(psi + 0.5 * dt * k1[2], v + 0.5 * dt * a)
    k3 = rhs(psi + 0.5 * dt * k2[2], v + 0.5 * dt * a)
    k4 = rhs(psi + dt * k3[2], v + dt * a)
    new = VehicleState(
        x=x + dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
        y=y + dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]),
        psi=psi + dt / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2]),
        v=min(max(v + dt * a, 0.0), p.v_max),
    )
    return new, a, delta


class OrnsteinUhlenbeck:
    """Mean-reverting lateral offset with stationary std ``std``."""

    def __init__(self, std, tau, rng):
        self.std = std
        self.tau = tau
        self.rng = rng
        self.value = 0.0

    def step(self, dt):
        if self.std <= 0.0:
            return 0.0
        decay = math.exp(-dt / self.tau)
        self.value = self.value * decay + self.std * math.sqrt(1.0 - decay * decay) * self.rng.standard_normal()
        return self.value


def pure_pursuit(state: VehicleState, raceline: Raceline, s_now, lateral_offset=0.0, lookahead=None, wheelbase=0.33):
    """Steering toward a lookahead point on the (laterally shifted) raceline."""
    la = lookahead if lookahead is not None else max(0.5, 0.5 * state.v)
    tp = raceline.sample(s_now + la)
    tx = tp.x - lateral_offset * math.sin(tp.psi)
    ty = tp.y + lateral_offset * math.cos(tp.psi)
    alpha = wrap_angle(math.atan2(ty - state.y, tx - state.x) - state.psi)
    return math.atan2(2.0 * wheelbase * math.sin(alpha), la)


def opponent_policy(state: VehicleState, raceline: Raceline, s_now, s_max, lateral_offset, wheelbase):
    """Pure-pursuit line tracking at the scaled reference speed."""
    v_cmd = s_max * raceline.sample(s_now).v_ref
    delta_cmd = pure_pursuit(state, raceline, s_now, lateral_offset, wheelbase=wheelbase)
    return v_cmd, delta_cmd


def footprints_overlap(state_a: VehicleState, pa: VehicleParams, state_b: VehicleState, pb: VehicleParams, inflation=0.02):
    """Oriented-rectangle overlap test (separating axes); footprints centered
    half a wheelbase ahead of the rear-axle reference point."""

    def corners(st, p):
        cx = st.x + 0.5 * p.wheelbase * math.cos(st.psi)
        cy = st.y + 0.5 * p.wheelbase * math.sin(st.psi)
        hl = 0.5 * p.length + 0.5 * inflation
        hw = 0.5 * p.width + 0.5 * inflation
        c, s = math.cos(st.psi), math.sin(st.psi)
        pts = []
        for dx, dy in ((hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw)):
            pts.append((cx + dx * c - dy * s, cy + dx * s + dy * c))
        return np.asarray(pts)

    ca, cb = corners(state_a, pa), corners(state_b, pb)
    for rect in (ca, cb):
        for i in range(4):
            ex = rect[(i + 1) % 4, 0] - rect[i, 0]
            ey = rect[(i + 1) % 4, 1] - rect[i, 1]
            ax, ay = -ey, ex
            pa_proj = ca @ (ax, ay)
            pb_proj = cb @ (ax, ay)
            if pa_proj.max() < pb_proj.min() or pb_proj.max() < pa_proj.min():
                return False
    return True


@dataclass
class _Agent:
    state: VehicleState
    params: VehicleParams
    pose: FrenetPose
    s_unwrapped: float
    delta: float = 0.0
    accel: float = 0.0
    laps: int = 0

    def project(self, raceline):
        prev_s = self.pose.s
        self.pose = raceline.cartesian_to_frenet(
            self.state.x, self.state.y, self.state.psi, hint_s=prev_s, window=5.0
        )
        ds = self.pose.s - prev_s
        if ds < -0.5 * raceline.total_length:
            ds += raceline.total_length
            self.laps += 1
        elif ds > 0.5 * raceline.total_length:
            ds -= raceline.total_length
        self.s_unwrapped += ds


def _make_agent(raceline, s0, v0, params):
    tp = raceline.sample(s0)
    state = VehicleState(x=tp.x, y=tp.y, psi=tp.psi, v=v0)
    return _Agent(state=state, params=params, pose=FrenetPose(s=s0 % raceline.total_length, n=0.0, theta=0.0), s_unwrapped=s0)


def run_episode(
    raceline: Raceline,
    cfg: EpisodeConfig,
    vehicle: VehicleParams | None = None,
    mpc_cfg: mpc.MpcConfig | None = None,
    pred_cfg: predictor.PredictorConfig | None = None,
    plan_cfg: mpc.PlannerConfig | None = None,
    sel_cfg_d: selection.SelectionConfig | None = None,
    sel_cfg_v: selection.SelectionConfig | None = None,
    log_detail: bool = True,
):
    """Run one closed-loop episode; returns (EpisodeResult, EpisodeLog)."""
    vehicle = vehicle or VehicleParams()
    mpc_cfg = mpc_cfg or mpc.MpcConfig(wheelbase=vehicle.wheelbase, v_max=vehicle.v_max, delta_max=vehicle.delta_max)
    pred_cfg = pred_cfg or predictor.PredictorConfig(s_c=1.5 * vehicle.length, v_max=vehicle.v_max)
    plan_cfg = plan_cfg or mpc.PlannerConfig(trailing_gap=2.0 * pred_cfg.s_c)
    track_len = raceline.total_length
    if sel_cfg_d is None:
        half = float(np.max(raceline.d_left))
        sel_cfg_d = selection.SelectionConfig(
            delta_s=2.0 * raceline.mean_spacing, y_min=-half, y_max=half, track_length=track_len
        )
    if sel_cfg_v is None:
        sel_cfg_v = selection.SelectionConfig(
            delta_s=2.0 * raceline.mean_spacing, y_min=0.0, y_max=1.2 * vehicle.v_max, track_length=track_len
        )

    rng = np.random.default_rng(cfg.seed)
    planner = mpc.OvertakePlanner(raceline, mpc_cfg, pred_cfg, plan_cfg)

    start_gap = cfg.start_gap_factor * pred_cfg.s_c
    ego = _make_agent(raceline, 0.0, 0.5 * float(raceline.sample(0.0).v_ref), vehicle)
    opp = None
    ou = None
    if cfg.opponent:
        opp = _make_agent(raceline, start_gap, cfg.s_max * float(raceline.sample(start_gap).v_ref), vehicle)
        ou = OrnsteinUhlenbeck(cfg.opp_noise_std, cfg.opp_noise_tau, rng)

    buf_d = selection.ObservationBuffer(sel_cfg_d)
    buf_v = selection.ObservationBuffer(sel_cfg_v)
    incoming_d: list = []
    incoming_v: list = []
    estimate = None
    last_maintenance = 0.0
    opp_laps_at_update = 0

    steps_per_plan = max(1, int(round(1.0 / (cfg.planner_hz * cfg.dt))))
    n_steps = int(round(cfg.max_time / cfg.dt))

    plan = mpc.PlanResult(mode="racing", v_cmd=float(raceline.sample(0.0).v_ref))
    log = EpisodeLog()
    plan_times = log.plan_times_ms

    maneuver_started = False
    t_maneuver = 0.0
    man_x: list = []
    man_y: list = []
    man_a: list = []
    man_delta: list = []

    outcome = OUTCOME_TIMEOUT
    bound_violation = False
    overlap = False
    t = 0.0

    def refit_models():
        nonlocal estimate
        xs_d, ys_d = buf_d.arrays()
        xs_v, ys_v = buf_v.arrays()
        if xs_d.size < cfg.min_fit_points or xs_v.size < cfg.min_fit_points:
            return
        if float(np.ptp(xs_d)) == 0.0 or float(np.ptp(xs_v)) == 0.0:
            return
        kwargs = {}
        if estimate is not None:
            iters = cfg.sgp_refit_iters
            init_d = dict(z=estimate.sgp_d.z, lengthscale=estimate.sgp_d.kernel.lengthscale,
                          signal_variance=estimate.sgp_d.kernel.signal_variance,
                          noise_variance=estimate.sgp_d.noise_variance)
            init_v = dict(z=estimate.sgp_v.z, lengthscale=estimate.sgp_v.kernel.lengthscale,
                          signal_variance=estimate.sgp_v.kernel.signal_variance,
                          noise_variance=estimate.sgp_v.noise_variance)
            if estimate.sgp_d.num_inducing != min(cfg.sgp_m, xs_d.size):
                init_d = None
            if estimate.sgp_v.num_inducing != min(cfg.sgp_m, xs_v.size):
                init_v = None
        else:
            iters = cfg.sgp_iters
            init_d = init_v = None
        try:
            sgp_d = gp.fit_sgp(xs_d, ys_d, cfg.sgp_m, iters=iters, seed=cfg.seed, init=init_d)
            sgp_v = gp.fit_sgp(xs_v, ys_v, cfg.sgp_m, iters=iters, seed=cfg.seed, init=init_v)
        except gp.GpFitError:
            return
        estimate = predictor.OpponentEstimate(sgp_d=sgp_d, sgp_v=sgp_v, last_update_lap=opp.laps)

    for step in range(n_steps):
        t = step * cfg.dt

        # Perception: noisy opponent observations at a fixed divisor of sim rate.
        if opp is not None and step % cfg.perception_every == 0:
            s_meas = (opp.pose.s + rng.normal(0.0, cfg.obs_noise_std)) % track_len
            d_meas = opp.pose.n + rng.normal(0.0, cfg.obs_noise_std)
            v_meas = opp.state.v + rng.normal(0.0, cfg.obs_noise_std)
            incoming_d.append(selection.Observation(x=s_meas, y=d_meas, t=t, lap=opp.laps))
            incoming_v.append(selection.Observation(x=s_meas, y=v_meas, t=t, lap=opp.laps))

        # Buffer maintenance: once per opponent lap, plus a bootstrap pass
        # while no model exists yet (covers near-stationary opponents).
        if opp is not None:
            lap_done = opp.laps > opp_laps_at_update
            bootstrap = (
                estimate is None
                and t - last_maintenance >= cfg.bootstrap_period
                and len(incoming_d) >= cfg.bootstrap_min_obs
            )
            if lap_done or bootstrap:
                model_d = estimate.sgp_d if estimate else None
                model_v = estimate.sgp_v if estimate else None
                buf_d.update(incoming_d, model_d)
                buf_v.update(incoming_v, model_v)
                incoming_d = []
                incoming_v = []
                refit_models()
                last_maintenance = t
                opp_laps_at_update = opp.laps

        # Planning at the configured cadence.
        if step % steps_per_plan == 0:
            snap = mpc.WorldSnapshot(
                t=t,
                ego_s=ego.s_unwrapped,
                ego_n=ego.pose.n,
                ego_theta=ego.pose.theta,
                ego_v=ego.state.v,
                ego_a=ego.accel,
                u_prev=(ego.state.v, ego.delta),
                opp_s=opp.s_unwrapped if opp is not None else None,
                opp_v=opp.state.v if opp is not None else None,
                estimate=estimate,
            )
            plan = planner.plan_cycle(snap)
            plan_times.append(plan.timings_ms.get("total", 0.0))
            if plan.mode == "overtake" and not maneuver_started:
                maneuver_started = True
                t_maneuver = t
            if log_detail:
                rec = {
                    "t": round(t, 5),
                    "mode": plan.mode,
                    "ego": [ego.state.x, ego.state.y, ego.state.psi, ego.state.v,
                            ego.s_unwrapped, ego.pose.n, ego.pose.theta],
                    "timings_ms": plan.timings_ms,
                }
                if opp is not None:
                    rec["opp"] = [opp.state.x, opp.state.y, opp.state.psi, opp.state.v,
                                  opp.s_unwrapped, opp.pose.n]
                if plan.interval is not None:
                    rec["interval"] = [plan.interval.c_start, plan.interval.c_end, plan.interval.exists]
                if plan.mode == "overtake":
                    rec["mpc"] = {
                        "status": plan.mpc.status,
                        "iterations": plan.mpc.iterations,
                        "primal_residual": plan.mpc.primal_residual,
                        "dual_residual": plan.mpc.dual_residual,
                        "dynamics_residual": plan.mpc.dynamics_residual,
                    }
                    rec["rollout"] = {
                        "s_ego": np.round(plan.rollout.s_ego, 4).tolist(),
                        "s_opp": np.round(plan.rollout.s_opp, 4).tolist(),
                    }
                    rec["corridor"] = [np.round(plan.corridor.lower, 4).tolist(),
                                       np.round(plan.corridor.upper, 4).tolist()]
                    rec["seed_d"] = np.round(plan.references.states[:, 1], 4).tolist()
                if plan.fallback_reason:
                    rec["fallback"] = plan.fallback_reason
                log.records.append(rec)

        # Ego control.
        if plan.mode == "overtake" and plan.delta_cmd is not None:
            v_cmd, delta_cmd = plan.v_cmd, plan.delta_cmd
        else:
            v_cmd = plan.v_cmd
            delta_cmd = pure_pursuit(ego.state, raceline, ego.pose.s, wheelbase=vehicle.wheelbase)
        ego.state, ego.accel, ego.delta = step_vehicle(
            ego.state, v_cmd, delta_cmd, ego.delta, cfg.dt, vehicle
        )
        ego.project(raceline)

        # Opponent control.
        if opp is not None:
            offset = ou.step(cfg.dt)
            v_o, d_o = opponent_policy(opp.state, raceline, opp.pose.s, cfg.s_max, offset, vehicle.wheelbase)
            opp.state, opp.accel, opp.delta = step_vehicle(opp.state, v_o, d_o, opp.delta, cfg.dt, vehicle)
            opp.project(raceline)

        if maneuver_started and outcome == OUTCOME_TIMEOUT:
            man_x.append(ego.state.x)
            man_y.append(ego.state.y)
            man_a.append(ego.accel)
            man_delta.append(ego.delta)

        # Termination checks.
        tp = raceline.sample(ego.pose.s)
        if ego.pose.n > tp.d_left or ego.pose.n < -tp.d_right:
            bound_violation = True
            outcome = OUTCOME_CRASH
            t = (step + 1) * cfg.dt
            break
        if opp is not None and footprints_overlap(ego.state, vehicle, opp.state, vehicle):
            overlap = True
            outcome = OUTCOME_CRASH
            t = (step + 1) * cfg.dt
            break
        if (
            opp is not None
            and maneuver_started
            and ego.s_unwrapped - opp.s_unwrapped >= pred_cfg.s_c
            and abs(ego.pose.n) <= cfg.rejoin_tol
        ):
            outcome = OUTCOME_OVERTAKE
            t = (step + 1) * cfg.dt
            break
    else:
        t = n_steps * cfg.dt

    length = 0.0
    duration = 0.0
    jerk = 0.0
    steer_rate = 0.0
    if maneuver_started and len(man_x) >= 2:
        xs = np.asarray(man_x)
        ys = np.asarray(man_y)
        length = float(np.sum(np.hypot(np.diff(xs), np.diff(ys))))
        duration = t - t_maneuver
        accs = np.asarray(man_a)
        deltas = np.asarray(man_delta)
        jerk = float(np.mean(np.abs(np.diff(accs)))) / cfg.dt
        steer_rate = float(np.mean(np.abs(np.diff(deltas)))) / cfg.dt
        log.maneuver_x = xs
        log.maneuver_y = ys

    times = np.asarray(plan_times) if plan_times else np.zeros(1)
    result = EpisodeResult(
        outcome=outcome,
        length=length,
        duration=duration,
        jerk_avg=jerk,
        steer_rate_avg=steer_rate,
        sim_time=t,
        ego_laps=ego.laps,
        opp_laps=opp.laps if opp is not None else 0,
        bound_violation=bound_violation,
        footprint_overlap=overlap,
        compute_mean_ms=float(times.mean()),
        compute_std_ms=float(times.std()),
        seed=cfg.seed,
    )
    return result, log


def compute_success_rate(results):
    """Overtakes over overtakes plus crashes; None when neither occurred
    (timeouts are excluded from both counts)."""
    n_ot = sum(1 for r in results if r.outcome == OUTCOME_OVERTAKE)
    n_c = sum(1 for r in results if r.outcome == OUTCOME_CRASH)
    if n_ot + n_c == 0:
        return None
    return n_ot / (n_ot + n_c)


METRIC_COLUMNS = (
    "episode", "seed", "outcome", "length_m", "duration_s",
    "jerk_avg_mps3", "steer_rate_avg_radps", "sim_time_s",
    "ego_laps", "opp_laps", "bound_violation",
)


def write_metrics_summary(results, path):
    """One deterministic row per episode (compute times intentionally excluded
    so identical seeds give byte-identical files)."""
    with open(path, "w") as fh:
        fh.write(",".join(METRIC_COLUMNS) + "\n")
        for i, r in enumerate(results):
            fh.write(
                f"{i},{r.seed},{r.outcome},{r.length:.6f},{r.duration:.6f},"
                f"{r.jerk_avg:.6f},{r.steer_rate_avg:.6f},{r.sim_time:.6f},"
                f"{r.ego_laps},{r.opp_laps},{int(r.bound_violation)}\n"
            )


def aggregate_metrics(results):
    """Aggregate in the shape of the overtaking/compute tables."""
    overtakes = [r for r in results if r.outcome == OUTCOME_OVERTAKE]
    rate = compute_success_rate(results)
    agg = {
        "episodes": len(results),
        "n_overtake": len(overtakes),
        "n_crash": sum(1 for r in results if r.outcome == OUTCOME_CRASH),
        "n_timeout": sum(1 for r in results if r.outcome == OUTCOME_TIMEOUT),
        "success_rate": rate,
        "length_m_mean": float(np.mean([r.length for r in overtakes])) if overtakes else None,
        "duration_s_mean": float(np.mean([r.duration for r in overtakes])) if overtakes else None,
        "jerk_avg_mps3_mean": float(np.mean([r.jerk_avg for r in overtakes])) if overtakes else None,
        "steer_rate_avg_radps_mean": float(np.mean([r.steer_rate_avg for r in overtakes])) if overtakes else None,
        "compute_mean_ms": float(np.mean([r.compute_mean_ms for r in results])),
        "compute_std_ms": float(np.mean([r.compute_std_ms for r in results])),
    }
    return agg


def write_aggregate(agg, path):
    with open(path, "w") as fh:
        fh.write("metric,value\n")
        for key, value in agg.items():
            fh.write(f"{key},{'' if value is None else value}\n")
