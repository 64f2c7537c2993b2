"""Opponent forward simulation and collision-interval detection.

The ego advances with constant commanded acceleration; the opponent advances
at the speed model's posterior mean evaluated at its own predicted position.
Arc lengths are unwrapped relative to the rollout start so intervals crossing
the start line stay contiguous; consumers wrap before querying the track or
the models.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gp


@dataclass
class PredictorConfig:
    dt: float = 0.05
    horizon: int = 80
    s_c: float = 0.75
    v_max: float = 5.5

    def __post_init__(self):
        if self.dt <= 0 or self.horizon <= 0 or self.s_c <= 0 or self.v_max <= 0:
            raise ValueError("predictor config values must be positive")


@dataclass
class OpponentEstimate:
    """Current opponent models, both fitted on the same buffer generation."""

    sgp_d: gp.SgpModel
    sgp_v: gp.SgpModel
    last_update_lap: int = 0


@dataclass(frozen=True)
class CollisionInterval:
    c_start: float = 0.0
    c_end: float = 0.0
    exists: bool = False


@dataclass(frozen=True)
class Rollout:
    """Paired unwrapped position / speed sequences (length horizon + 1)."""

    s_ego: np.ndarray
    v_ego: np.ndarray
    s_opp: np.ndarray
    v_opp: np.ndarray


def forward_simulate(ego, opp, estimate: OpponentEstimate, cfg: PredictorConfig, track_length: float) -> Rollout:
    """Roll both vehicles forward over the horizon.

    ``ego`` is a dict with keys s, v, a (s unwrapped); ``opp`` a dict with
    keys s (track coordinate) and optionally v for the first step.  The
    opponent is placed ahead of the ego by their current forward gap.
    """
    n = cfg.horizon
    s_ego = np.empty(n + 1)
    v_ego = np.empty(n + 1)
    s_opp = np.empty(n + 1)
    v_opp = np.empty(n + 1)

    s_ego[0] = ego["s"]
    v_ego[0] = min(max(ego["v"], 0.0), cfg.v_max)
    a = ego.get("a", 0.0)

    gap0 = (opp["s"] - ego["s"]) % track_length
    s_opp[0] = s_ego[0] + gap0
    v0 = opp.get("v")
    if v0 is None:
        v0 = float(gp.predict_mean(estimate.sgp_v, np.array([s_opp[0] % track_length]))[0])
    v_opp[0] = min(max(v0, 0.0), cfg.v_max)

    for k in range(n):
        s_ego[k + 1] = s_ego[k] + v_ego[k] * cfg.dt + 0.5 * a * cfg.dt**2
        v_ego[k + 1] = min(max(v_ego[k] + a * cfg.dt, 0.0), cfg.v_max)
        s_opp[k + 1] = s_opp[k] + v_opp[k] * cfg.dt
        v_next = float(gp.predict_mean(estimate.sgp_v, np.array([s_opp[k + 1] % track_length]))[0])
        v_opp[k + 1] = min(max(v_next, 0.0), cfg.v_max)

    return Rollout(s_ego=s_ego, v_ego=v_ego, s_opp=s_opp, v_opp=v_opp)


def find_collision_interval(rollout: Rollout, cfg: PredictorConfig) -> CollisionInterval:
    """First span where |s_ego - s_opp| < s_c; bounds are ego positions.

    If proximity persists to the end of the horizon the interval closes at
    the final ego position.
    """
    gap = np.abs(rollout.s_ego - rollout.s_opp)
    inside = gap < cfg.s_c
    if not np.any(inside):
        return CollisionInterval()
    k_start = int(np.argmax(inside))
    after = np.nonzero(~inside[k_start:])[0]
    k_end = k_start + int(after[0]) if after.size else len(gap) - 1
    return CollisionInterval(
        c_start=float(rollout.s_ego[k_start]),
        c_end=float(rollout.s_ego[k_end]),
        exists=True,
    )


def opponent_lateral(estimate: OpponentEstimate, s, track_length: float) -> gp.Posterior:
    """Posterior of the lateral-position model at (possibly unwrapped) s."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    return gp.predict(estimate.sgp_d, np.mod(s, track_length))
