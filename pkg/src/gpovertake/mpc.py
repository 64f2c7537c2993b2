"""Level-2 planner: linear time-varying MPC in the Frenet frame.

The kinematic bicycle in track coordinates,

    s'     = v cos(theta) / (1 - kappa(s) n)
    n'     = v sin(theta)
    theta' = v tan(delta) / L - kappa(s) s'

is linearized around the flat references and discretized by forward Euler.
The resulting QP minimizes a three-part state cost (deviation from the seed
references, absolute lateral deviation, successive-state differences) plus an
input-deviation cost, subject to the linearized dynamics, per-step lateral
corridors narrowed by the predicted opponent position inside the collision
interval, and input magnitude/rate bounds.  plan_cycle composes prediction,
seeding and the MPC solve, with trailing / racing fallbacks.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import gp, predictor, qp, seed
from .track import Raceline


class LinearizationError(ValueError):
    """Fold-over or zero-speed reference makes the Jacobians undefined."""


class InfeasibleCorridorError(RuntimeError):
    """Opponent-narrowed lateral bounds crossed over at some step."""


@dataclass
class MpcConfig:
    n_horizon: int = 20
    dt: float = 0.05
    q1: tuple = (0.0, 10.0, 0.0)   # weight on X - X_ref (lateral entry only)
    q2: tuple = (0.0, 1.0, 0.0)    # weight on X (pull toward the racing line)
    q3: tuple = (0.0, 5.0, 0.0)    # weight on successive state differences
    r: tuple = (1.0, 10.0)         # weight on U - U_ref (v, delta)
    v_min: float = 0.3
    v_max: float = 5.5
    delta_max: float = 0.40
    du_min: tuple = (-0.35, -0.16)  # per-step input change bounds
    du_max: tuple = (0.25, 0.16)
    wheelbase: float = 0.33
    opp_margin: float = 0.185      # lateral clearance from predicted opponent
    wall_margin: float = 0.135     # corridor inset from the track edge

    def __post_init__(self):
        for name in ("q1", "q2"):
            w = getattr(self, name)
            if w[0] != 0.0 or w[2] != 0.0:
                raise ValueError(f"{name}: only the lateral entry may be nonzero")
            if w[1] <= 0.0:
                raise ValueError(f"{name}: lateral weight must be positive")
        if any(v < 0 for v in self.q3) or any(v < 0 for v in self.r):
            raise ValueError("q3 and r entries must be non-negative")
        if not (self.v_min < self.v_max and self.delta_max > 0):
            raise ValueError("input bounds out of order")
        if any(lo > hi for lo, hi in zip(self.du_min, self.du_max)):
            raise ValueError("rate bounds out of order")


@dataclass(frozen=True)
class Corridor:
    lower: np.ndarray
    upper: np.ndarray


@dataclass
class MpcSolution:
    states: np.ndarray       # (N, 3) rows (s, n, theta)
    inputs: np.ndarray       # (N, 2) rows (v, delta)
    status: str
    primal_residual: float
    dual_residual: float
    iterations: int
    solve_time: float
    objective: float
    dynamics_residual: float
    qp_solution: qp.QpSolution = None


def bicycle_rhs(x, u, raceline: Raceline, wheelbase):
    """Continuous-time Frenet kinematic bicycle dynamics."""
    s, n, theta = x
    v, delta = u
    tp = raceline.sample(s)
    denom = 1.0 - tp.kappa * n
    if abs(denom) < 1e-9:
        raise LinearizationError(f"fold-over at s={s:.2f}: 1 - kappa*n = {denom:.2e}")
    s_dot = v * math.cos(theta) / denom
    return np.array([
        s_dot,
        v * math.sin(theta),
        v * math.tan(delta) / wheelbase - tp.kappa * s_dot,
    ])


def linearize_dynamics(x_ref, u_ref, raceline: Raceline, dt, wheelbase):
    """Forward-Euler discretized Jacobians around a reference point.

    Returns (A, B, c) with x_next ~= A x + B u + c exact at the reference.
    """
    s, n, theta = x_ref
    v, delta = u_ref
    if v <= 0:
        raise LinearizationError("reference speed must be positive")
    tp = raceline.sample(s)
    kap = tp.kappa
    kap_p = raceline.curvature_slope(s)
    denom = 1.0 - kap * n
    if abs(denom) < 1e-9:
        raise LinearizationError(f"fold-over at s={s:.2f}")

    cos_t, sin_t = math.cos(theta), math.sin(theta)
    s_dot = v * cos_t / denom

    ds_ds = v * cos_t * kap_p * n / denom**2
    ds_dn = v * cos_t * kap / denom**2
    ds_dth = -v * sin_t / denom
    ds_dv = cos_t / denom

    jx = np.array([
        [ds_ds, ds_dn, ds_dth],
        [0.0, 0.0, v * cos_t],
        [-kap_p * s_dot - kap * ds_ds, -kap * ds_dn, kap * v * sin_t / denom],
    ])
    ju = np.array([
        [ds_dv, 0.0],
        [sin_t, 0.0],
        [math.tan(delta) / wheelbase - kap * ds_dv, v / (wheelbase * math.cos(delta) ** 2)],
    ])

    a = np.eye(3) + dt * jx
    b = dt * ju
    f = np.array([s_dot, v * sin_t, v * math.tan(delta) / wheelbase - kap * s_dot])
    x_arr = np.asarray(x_ref, dtype=float)
    u_arr = np.asarray(u_ref, dtype=float)
    c = x_arr + dt * f - a @ x_arr - b @ u_arr
    return a, b, c


def build_corridor(
    s_refs,
    interval: predictor.CollisionInterval,
    estimate,
    raceline: Raceline,
    side,
    cfg: MpcConfig,
) -> Corridor:
    """Per-step lateral bounds: track edges (inset by wall_margin) outside the
    collision interval; inside it, the opponent-side bound is the predicted
    opponent position offset by opp_margin.  Closed-interval membership."""
    s_refs = np.asarray(s_refs, dtype=float)
    tp = raceline.sample(s_refs)
    lower = -tp.d_right + cfg.wall_margin
    upper = tp.d_left - cfg.wall_margin
    if interval is not None and interval.exists and estimate is not None:
        inside = (s_refs >= interval.c_start) & (s_refs <= interval.c_end)
        if np.any(inside):
            d_opp = predictor.opponent_lateral(estimate, s_refs[inside], raceline.total_length).mean
            if side == "left":
                lower = lower.copy()
                lower[inside] = np.maximum(lower[inside], d_opp + cfg.opp_margin)
            else:
                upper = upper.copy()
                upper[inside] = np.minimum(upper[inside], d_opp - cfg.opp_margin)
    if np.any(lower >= upper):
        k = int(np.argmax(lower >= upper))
        raise InfeasibleCorridorError(
            f"corridor inverted at step {k}: [{lower[k]:.3f}, {upper[k]:.3f}]"
        )
    return Corridor(lower=lower, upper=upper)


def _assemble(x0, refs: seed.FlatReferences, corridor: Corridor, cfg: MpcConfig, raceline, u_prev):
    n_h = cfg.n_horizon
    nv = 5 * n_h
    q1 = np.asarray(cfg.q1)
    q2 = np.asarray(cfg.q2)
    q3 = np.asarray(cfg.q3)
    r_w = np.asarray(cfg.r)

    h = np.zeros((nv, nv))
    g = np.zeros(nv)
    const = 0.0

    def xoff(k):  # state x_k, k = 1..N
        return 3 * (k - 1)

    def uoff(k):  # input u_k, k = 0..N-1
        return 3 * n_h + 2 * k

    x_ref = refs.x_ref
    u_ref = refs.u_ref
    x0 = np.asarray(x0, dtype=float)

    for k in range(1, n_h + 1):
        i = xoff(k)
        # Q1: deviation from the seed reference; Q2: absolute state.
        diag = 2.0 * (q1 + q2)
        h[i : i + 3, i : i + 3] += np.diag(diag)
        g[i : i + 3] += -2.0 * q1 * x_ref[k - 1]
        const += float(q1 @ x_ref[k - 1] ** 2)
        # Q3: successive differences with x_0 fixed.
        h[i : i + 3, i : i + 3] += 2.0 * np.diag(q3)
        if k == 1:
            g[i : i + 3] += -2.0 * q3 * x0
            const += float(q3 @ x0**2)
        else:
            j = xoff(k - 1)
            h[j : j + 3, j : j + 3] += 2.0 * np.diag(q3)
            h[i : i + 3, j : j + 3] += -2.0 * np.diag(q3)
            h[j : j + 3, i : i + 3] += -2.0 * np.diag(q3)

    for k in range(n_h):
        i = uoff(k)
        h[i : i + 2, i : i + 2] += 2.0 * np.diag(r_w)
        g[i : i + 2] += -2.0 * r_w * u_ref[k]
        const += float(r_w @ u_ref[k] ** 2)

    rows = []
    lo = []
    up = []

    mats = []
    for k in range(1, n_h + 1):
        a_k, b_k, c_k = linearize_dynamics(refs.states[k - 1], refs.inputs[k - 1], raceline, cfg.dt, cfg.wheelbase)
        mats.append((a_k, b_k, c_k))
        row = np.zeros((3, nv))
        row[:, xoff(k) : xoff(k) + 3] = np.eye(3)
        row[:, uoff(k - 1) : uoff(k - 1) + 2] = -b_k
        rhs = c_k.copy()
        if k == 1:
            rhs += a_k @ x0
        else:
            row[:, xoff(k - 1) : xoff(k - 1) + 3] = -a_k
        rows.append(row)
        lo.append(rhs)
        up.append(rhs)

    for k in range(1, n_h + 1):
        row = np.zeros((1, nv))
        row[0, xoff(k) + 1] = 1.0
        rows.append(row)
        lo.append([corridor.lower[k - 1]])
        up.append([corridor.upper[k - 1]])

    for k in range(n_h):
        row = np.zeros((2, nv))
        row[:, uoff(k) : uoff(k) + 2] = np.eye(2)
        rows.append(row)
        lo.append([cfg.v_min, -cfg.delta_max])
        up.append([cfg.v_max, cfg.delta_max])

    du_min = np.asarray(cfg.du_min)
    du_max = np.asarray(cfg.du_max)
    for k in range(n_h):
        row = np.zeros((2, nv))
        row[:, uoff(k) : uoff(k) + 2] = np.eye(2)
        if k == 0:
            lo.append(du_min + np.asarray(u_prev))
            up.append(du_max + np.asarray(u_prev))
        else:
            row[:, uoff(k - 1) : uoff(k - 1) + 2] = -np.eye(2)
            lo.append(du_min)
            up.append(du_max)
        rows.append(row)

    prob = qp.QpProblem(
        h=h, g=g, a=np.vstack(rows), l=np.concatenate(lo), u=np.concatenate(up),
    )
    return prob, const, mats


def solve(
    x0,
    refs: seed.FlatReferences,
    corridor: Corridor,
    cfg: MpcConfig,
    raceline: Raceline,
    u_prev,
    warm_start=None,
    settings: qp.QpSettings | None = None,
) -> MpcSolution:
    """Assemble and solve the MPC QP; warm_start is a previous QpSolution."""
    t0 = time.perf_counter()
    prob, const, mats = _assemble(x0, refs, corridor, cfg, raceline, u_prev)
    if settings is None:
        settings = qp.QpSettings(polish_every=50)
    ws = None
    if warm_start is not None:
        ws = (warm_start.x, warm_start.y)
    sol = qp.solve_qp(prob, settings, warm_start=ws)
    n_h = cfg.n_horizon
    states = sol.x[: 3 * n_h].reshape(n_h, 3)
    inputs = sol.x[3 * n_h :].reshape(n_h, 2)

    resid = 0.0
    prev = np.asarray(x0, dtype=float)
    for k in range(n_h):
        a_k, b_k, c_k = mats[k]
        pred = a_k @ prev + b_k @ inputs[k] + c_k
        resid = max(resid, float(np.max(np.abs(states[k] - pred))))
        prev = states[k]

    return MpcSolution(
        states=states,
        inputs=inputs,
        status=sol.status,
        primal_residual=sol.primal_residual,
        dual_residual=sol.dual_residual,
        iterations=sol.iterations,
        solve_time=time.perf_counter() - t0,
        objective=sol.objective + const,
        dynamics_residual=resid,
        qp_solution=sol,
    )


def mpc_objective(states, inputs, x0, refs: seed.FlatReferences, cfg: MpcConfig):
    """The tracking objective recomputed from its definition (for checks)."""
    q1 = np.asarray(cfg.q1)
    q2 = np.asarray(cfg.q2)
    q3 = np.asarray(cfg.q3)
    r_w = np.asarray(cfg.r)
    x_pre = np.vstack([np.asarray(x0)[None, :], states[:-1]])
    total = float(np.sum(q1 * (states - refs.x_ref) ** 2))
    total += float(np.sum(q2 * states**2))
    total += float(np.sum(q3 * (states - x_pre) ** 2))
    total += float(np.sum(r_w * (inputs - refs.u_ref) ** 2))
    return total


# -- planning cycle -------------------------------------------------------------


@dataclass
class PlannerConfig:
    seed_margin: float = 0.45
    lead_time: float = 1.0
    sample_ds: float = 0.25
    trailing_gap: float = 1.5     # desired following distance [m]
    trailing_gain: float = 1.0
    detection_range: float = 12.0
    v_floor: float = 0.05


@dataclass
class WorldSnapshot:
    """Everything plan_cycle needs about the current world state."""

    t: float
    ego_s: float              # unwrapped arc length
    ego_n: float
    ego_theta: float
    ego_v: float
    ego_a: float
    u_prev: tuple             # last applied (v, delta)
    opp_s: float = None      # unwrapped arc length (same odometer frame)
    opp_v: float = None
    estimate: predictor.OpponentEstimate = None


@dataclass
class PlanResult:
    mode: str                 # "racing" | "trailing" | "overtake"
    v_cmd: float
    delta_cmd: float = None  # only for overtake mode (MPC first input)
    mpc: MpcSolution = None
    interval: predictor.CollisionInterval = None
    rollout: predictor.Rollout = None
    seed_traj: seed.QuinticTraj = None
    key_points: seed.KeyPointSet = None
    corridor: Corridor = None
    references: seed.FlatReferences = None
    timings_ms: dict = field(default_factory=dict)
    fallback_reason: str = None


class OvertakePlanner:
    """Stateful per-episode planner: prediction, seeding, MPC, fallbacks."""

    def __init__(self, raceline: Raceline, mpc_cfg: MpcConfig, pred_cfg: predictor.PredictorConfig,
                 plan_cfg: PlannerConfig | None = None):
        self.raceline = raceline
        self.mpc_cfg = mpc_cfg
        self.pred_cfg = pred_cfg
        self.plan_cfg = plan_cfg or PlannerConfig()
        self._warm = None
        self._last_side = None

    def reset(self):
        self._warm = None
        self._last_side = None

    def _racing(self, snap, timings, reason=None):
        v_ref = self.raceline.sample(snap.ego_s).v_ref
        return PlanResult(mode="racing", v_cmd=float(v_ref), timings_ms=timings, fallback_reason=reason)

    def _trailing(self, snap, timings, reason=None):
        v_ref = float(self.raceline.sample(snap.ego_s).v_ref)
        gap = snap.opp_s - snap.ego_s
        v_opp = snap.opp_v if snap.opp_v is not None else 0.0
        v_cmd = v_opp + self.plan_cfg.trailing_gain * (gap - self.plan_cfg.trailing_gap)
        return PlanResult(
            mode="trailing", v_cmd=float(np.clip(v_cmd, 0.0, v_ref)),
            timings_ms=timings, fallback_reason=reason,
        )

    def plan_cycle(self, snap: WorldSnapshot) -> PlanResult:
        """One planning cycle; always returns a PlanResult with stage timings."""
        t_total = time.perf_counter()
        timings = {}
        try:
            result = self._plan(snap, timings)
        finally:
            timings["total"] = (time.perf_counter() - t_total) * 1e3
        result.timings_ms = timings
        return result

    def _plan(self, snap, timings):
        detected = (
            snap.opp_s is not None
            and 0.0 <= snap.opp_s - snap.ego_s <= self.plan_cfg.detection_range
        )
        if not detected:
            return self._racing(snap, timings)
        if snap.estimate is None:
            return self._trailing(snap, timings, reason="no opponent model yet")

        t0 = time.perf_counter()
        rollout = predictor.forward_simulate(
            {"s": snap.ego_s, "v": snap.ego_v, "a": snap.ego_a},
            {"s": snap.opp_s % self.raceline.total_length, "v": snap.opp_v},
            snap.estimate, self.pred_cfg, self.raceline.total_length,
        )
        interval = predictor.find_collision_interval(rollout, self.pred_cfg)
        timings["predict"] = (time.perf_counter() - t0) * 1e3

        if not interval.exists:
            res = self._racing(snap, timings)
            res.rollout = rollout
            res.interval = interval
            return res

        try:
            t0 = time.perf_counter()
            # Plan the pass at racing speed, not the (possibly trailing) current
            # speed; the MPC input bounds handle the transient.
            v_seed = max(
                snap.ego_v,
                float(self.raceline.sample(interval.c_start).v_ref),
                1.0,
            )
            kps = seed.choose_key_points(
                interval, snap.estimate, self.raceline, self.plan_cfg.seed_margin,
                ego_v=v_seed, lead_time=self.plan_cfg.lead_time,
                force_side=self._last_side,
            )
            rough = seed.interpolate_rough(kps, self.plan_cfg.sample_ds, ego_v=v_seed)
            traj = seed.fit_quintic(rough)
            t_start = seed.seed_time_of_s(traj, snap.ego_s)
            refs = seed.extract_flat_references(
                traj, self.raceline, self.mpc_cfg.n_horizon, self.mpc_cfg.dt,
                self.mpc_cfg.wheelbase, t_start=t_start,
                v_floor=self.plan_cfg.v_floor, delta_max=self.mpc_cfg.delta_max,
            )
            timings["seed"] = (time.perf_counter() - t0) * 1e3

            t0 = time.perf_counter()
            corridor = build_corridor(
                refs.x_ref[:, 0], interval, snap.estimate, self.raceline, kps.side, self.mpc_cfg,
            )
            x0 = np.array([snap.ego_s, snap.ego_n, snap.ego_theta])
            sol = solve(
                x0, refs, corridor, self.mpc_cfg, self.raceline, snap.u_prev,
                warm_start=self._warm,
            )
            timings["mpc"] = (time.perf_counter() - t0) * 1e3
        except (seed.NoFeasibleGapError, seed.DegenerateSpeedError,
                InfeasibleCorridorError, LinearizationError, RuntimeError) as exc:
            self._warm = None
            self._last_side = None
            return self._trailing(snap, timings, reason=str(exc))

        if sol.status != qp.SOLVED:
            self._warm = None
            return self._trailing(snap, timings, reason=f"mpc status {sol.status}")

        self._warm = sol.qp_solution
        self._last_side = kps.side
        return PlanResult(
            mode="overtake",
            v_cmd=float(sol.inputs[0, 0]),
            delta_cmd=float(sol.inputs[0, 1]),
            mpc=sol,
            interval=interval,
            rollout=rollout,
            seed_traj=traj,
            key_points=kps,
            corridor=corridor,
            references=refs,
        )
