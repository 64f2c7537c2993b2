"""Level-1 planner: evasion key points, quintic seed fit, flat references.

Given a predicted collision interval, five key points are laid out around the
opponent's predicted lateral position, linearly interpolated into a rough
evasion path, smoothed per axis by a constrained quintic least-squares fit
(solved with the shared QP core), and finally converted into linearization
references (states and inputs) for the MPC through the differential-flatness
relations of the kinematic bicycle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import predictor, qp
from .track import Raceline, wrap_angle


class NoFeasibleGapError(RuntimeError):
    """Neither side of the opponent offers the required clearance."""


class DegenerateSpeedError(RuntimeError):
    """Reference speed fell below the configured floor."""


@dataclass(frozen=True)
class KeyPointSet:
    s: np.ndarray          # 5 strictly increasing arc lengths (unwrapped)
    d: np.ndarray          # lateral offsets; d[0] = d[4] = 0
    side: str              # "left" or "right"


@dataclass(frozen=True)
class RoughPath:
    t: np.ndarray
    s: np.ndarray
    d: np.ndarray

    @property
    def duration(self):
        return float(self.t[-1])


@dataclass(frozen=True)
class QuinticTraj:
    """Degree-5 polynomials per axis in the natural time basis [1, t, .. t^5]."""

    coeffs_s: np.ndarray
    coeffs_d: np.ndarray
    duration: float

    def eval(self, t, axis, order=0):
        coeffs = self.coeffs_s if axis == "s" else self.coeffs_d
        c = np.asarray(coeffs, dtype=float)
        for _ in range(order):
            c = c[1:] * np.arange(1, c.size)
        return np.polynomial.polynomial.polyval(np.asarray(t, dtype=float), c)


@dataclass(frozen=True)
class FlatReferences:
    """States x_0..x_N and inputs u_0..u_{N-1} along the seed trajectory.

    ``states`` has shape (N+1, 3) rows (s, n, theta); the MPC tracking target
    is rows 1..N, row 0 is the linearization anchor.  ``inputs`` has shape
    (N, 2) rows (v, delta).  ``accel`` holds the tangential acceleration at
    the input samples (diagnostic).
    """

    states: np.ndarray
    inputs: np.ndarray
    accel: np.ndarray
    dt: float
    delta_saturated: bool = False

    @property
    def x_ref(self):
        return self.states[1:]

    @property
    def u_ref(self):
        return self.inputs


def choose_key_points(
    interval: predictor.CollisionInterval,
    estimate: predictor.OpponentEstimate,
    raceline: Raceline,
    margin: float,
    ego_v: float,
    lead_time: float = 1.0,
    force_side: str | None = None,
) -> KeyPointSet:
    """Place k1..k5 around the interval and pick the passing side.

    k2/k3/k4 sit at the interval start/middle/end offset from the predicted
    opponent position by ``margin`` toward the side with the most clearance
    (ties go left); k1/k5 lead in/out by ``lead_time`` seconds of travel at
    ``ego_v`` and return to the racing line.  ``force_side`` overrides the
    side choice when that side is feasible.
    """
    if not interval.exists:
        raise ValueError("key points need an existing collision interval")
    lead = max(ego_v * lead_time, 1.0)
    mid = 0.5 * (interval.c_start + interval.c_end)
    s_pts = np.array([
        interval.c_start - lead,
        interval.c_start,
        mid,
        interval.c_end,
        interval.c_end + lead,
    ])
    if interval.c_end - interval.c_start < 1e-6:
        s_pts[2] = interval.c_start + 1e-3
        s_pts[3] = interval.c_end + 2e-3

    inner = s_pts[1:4]
    d_opp = predictor.opponent_lateral(estimate, inner, raceline.total_length).mean
    tp = raceline.sample(inner)
    room_left = tp.d_left - d_opp
    room_right = d_opp + tp.d_right
    score = {"left": float(np.min(room_left)), "right": float(np.min(room_right))}

    if force_side in ("left", "right") and score[force_side] >= margin:
        side = force_side
    elif score["left"] >= score["right"]:
        side = "left"
    else:
        side = "right"
    if score[side] < margin:
        raise NoFeasibleGapError(
            f"no side offers clearance >= {margin:.2f} m "
            f"(left {score['left']:.2f}, right {score['right']:.2f})"
        )

    offset = margin if side == "left" else -margin
    d_inner = np.clip(d_opp + offset, -tp.d_right, tp.d_left)
    d_pts = np.concatenate([[0.0], d_inner, [0.0]])
    return KeyPointSet(s=s_pts, d=d_pts, side=side)


def interpolate_rough(kps: KeyPointSet, ds: float, ego_v: float) -> RoughPath:
    """Piecewise-linear d(s) through the key points sampled every ``ds``,
    time-parameterized at constant speed ``ego_v``."""
    if ds <= 0 or ego_v <= 0:
        raise ValueError("ds and ego_v must be positive")
    length = kps.s[-1] - kps.s[0]
    count = max(int(math.ceil(length / ds)) + 1, 8)
    s = np.linspace(kps.s[0], kps.s[-1], count)
    d = np.interp(s, kps.s, kps.d)
    t = (s - s[0]) / ego_v
    return RoughPath(t=t, s=s, d=d)


def _fit_axis(t, values, duration, settings=None, slopes=None):
    tau = t / duration
    count = tau.size
    phi = np.vander(tau, 6, increasing=True)
    w = np.full(count, 1.0 / (count - 1))
    w[0] *= 0.5
    w[-1] *= 0.5

    shift = values[0]
    v = values - shift
    h = 2.0 * (phi.T * w) @ phi
    h = 0.5 * (h + h.T)
    g = -2.0 * (phi.T * w) @ v

    if slopes is None:
        # Linear interpolation only defines endpoint derivatives one-sidedly.
        slopes = (
            (values[1] - values[0]) / (t[1] - t[0]),
            (values[-1] - values[-2]) / (t[-1] - t[-2]),
        )
    beta0 = phi[0]
    beta1 = phi[-1]
    dbeta0 = np.concatenate([[0.0], np.vander(tau[:1], 5, increasing=True)[0] * np.arange(1, 6)])
    dbeta1 = np.concatenate([[0.0], np.vander(tau[-1:], 5, increasing=True)[0] * np.arange(1, 6)])
    a = np.vstack([beta0, dbeta0, beta1, dbeta1])
    b = np.array([v[0], slopes[0] * duration, v[-1], slopes[1] * duration])
    prob = qp.QpProblem(h=h, g=g, a=a, l=b, u=b)
    sol = qp.solve_qp(prob, settings or qp.QpSettings(polish_every=50))
    if sol.status != qp.SOLVED:
        raise RuntimeError(f"quintic fit did not solve: {sol.status}")
    coeffs_tau = sol.x
    coeffs = coeffs_tau / duration ** np.arange(6)
    coeffs[0] += shift
    return coeffs


def fit_quintic(rough: RoughPath, settings=None, slopes_s=None, slopes_d=None) -> QuinticTraj:
    """Constrained least-squares quintic per axis.

    Minimizes the trapezoid-weighted squared deviation from the rough path
    subject to matching its endpoint positions and derivatives exactly.
    Endpoint derivatives default to one-sided differences of the samples;
    pass ``slopes_s``/``slopes_d`` as (start, end) pairs when the source path
    has analytic derivatives.
    """
    if rough.t.size < 6:
        raise ValueError("need at least 6 samples to fit a quintic")
    duration = rough.duration
    if duration <= 0:
        raise ValueError("rough path duration must be positive")
    return QuinticTraj(
        coeffs_s=_fit_axis(rough.t, rough.s, duration, settings, slopes_s),
        coeffs_d=_fit_axis(rough.t, rough.d, duration, settings, slopes_d),
        duration=duration,
    )


def flat_outputs(xd, yd, xdd, ydd, wheelbase):
    """Differential-flatness relations of the kinematic bicycle.

    From Cartesian velocity/acceleration: speed, heading, tangential
    acceleration, steering angle.
    """
    v = np.hypot(xd, yd)
    theta = np.arctan2(yd, xd)
    a_t = (xd * xdd + yd * ydd) / v
    delta = np.arctan((xd * ydd - yd * xdd) * wheelbase / v**3)
    return v, theta, a_t, delta


def seed_time_of_s(traj: QuinticTraj, s_query: float) -> float:
    """Time at which the seed trajectory reaches arc length ``s_query``.

    Negative (linear extrapolation at the initial speed) before the start,
    beyond ``duration`` after the end.
    """
    s0 = float(traj.eval(0.0, "s"))
    s1 = float(traj.eval(traj.duration, "s"))
    v0 = max(float(traj.eval(0.0, "s", order=1)), 1e-6)
    v1 = max(float(traj.eval(traj.duration, "s", order=1)), 1e-6)
    if s_query <= s0:
        return (s_query - s0) / v0
    if s_query >= s1:
        return traj.duration + (s_query - s1) / v1
    lo, hi = 0.0, traj.duration
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if float(traj.eval(mid, "s")) < s_query:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def extract_flat_references(
    traj: QuinticTraj,
    raceline: Raceline,
    n_steps: int,
    dt: float,
    wheelbase: float,
    t_start: float = 0.0,
    v_floor: float = 0.05,
    delta_max: float | None = None,
) -> FlatReferences:
    """Sample the seed at n_steps+1 times from ``t_start`` and derive Frenet
    states plus flat inputs.

    Outside [0, duration] the reference continues along the racing line at
    the corresponding endpoint speed.  Raises DegenerateSpeedError when the
    reference speed dips below ``v_floor``; steering references beyond
    ``delta_max`` are clipped and flagged.
    """
    times = t_start + dt * np.arange(n_steps + 1)
    t_in = np.clip(times, 0.0, traj.duration)

    s = traj.eval(t_in, "s")
    d = traj.eval(t_in, "d")
    sd = traj.eval(t_in, "s", order=1)
    dd = traj.eval(t_in, "d", order=1)
    sdd = traj.eval(t_in, "s", order=2)
    ddd = traj.eval(t_in, "d", order=2)

    # Linear continuation outside the fitted window: racing line, d = 0.
    before = times < 0.0
    after = times > traj.duration
    if np.any(before):
        v0 = traj.eval(0.0, "s", order=1)
        s[before] = traj.eval(0.0, "s") + v0 * times[before]
        d[before] = 0.0
        sd[before] = v0
        dd[before] = 0.0
        sdd[before] = 0.0
        ddd[before] = 0.0
    if np.any(after):
        v1 = traj.eval(traj.duration, "s", order=1)
        s[after] = traj.eval(traj.duration, "s") + v1 * (times[after] - traj.duration)
        d[after] = 0.0
        sd[after] = v1
        dd[after] = 0.0
        sdd[after] = 0.0
        ddd[after] = 0.0

    _, _, xd, yd, xdd, ydd = raceline.frenet_path_derivatives(s, d, sd, dd, sdd, ddd)
    v, theta_cart, a_t, delta = flat_outputs(xd, yd, xdd, ydd, wheelbase)

    if np.any(v < v_floor):
        raise DegenerateSpeedError(f"reference speed below {v_floor} m/s")

    saturated = False
    if delta_max is not None and np.any(np.abs(delta) > delta_max):
        delta = np.clip(delta, -delta_max, delta_max)
        saturated = True

    psi_c = raceline.sample(s).psi
    theta = wrap_angle(theta_cart - psi_c)

    states = np.column_stack([s, d, theta])
    inputs = np.column_stack([v[:-1], delta[:-1]])
    return FlatReferences(
        states=states, inputs=inputs, accel=a_t[:-1], dt=dt, delta_saturated=saturated,
    )
