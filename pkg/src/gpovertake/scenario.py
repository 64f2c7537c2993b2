"""Scenario configuration: JSON schema, defaults, and validation.

A scenario file bundles the track reference and every runtime knob needed to
reproduce a batch of episodes.  Validation reports the exact offending field;
relative paths resolve against the scenario file's directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from . import mpc, predictor, sim
from .track import Raceline, load_raceline


class ConfigError(ValueError):
    """A scenario file is malformed; the message names the offending field."""


_EPISODE_FIELDS = {
    "s_max": (float, (0.0, 1.0)),
    "dt": (float, (1e-5, 1.0)),
    "max_time": (float, (0.1, 3600.0)),
    "planner_hz": (float, (1.0, 200.0)),
    "perception_every": (int, (1, 1000)),
    "obs_noise_std": (float, (0.0, 1.0)),
    "opp_noise_std": (float, (0.0, 1.0)),
    "opp_noise_tau": (float, (1e-3, 100.0)),
    "start_gap_factor": (float, (0.1, 100.0)),
    "rejoin_tol": (float, (1e-3, 10.0)),
    "bootstrap_period": (float, (0.1, 1000.0)),
    "bootstrap_min_obs": (int, (1, 100000)),
    "min_fit_points": (int, (2, 100000)),
    "sgp_m": (int, (1, 1000)),
    "sgp_iters": (int, (1, 100000)),
    "sgp_refit_iters": (int, (1, 100000)),
    "opponent": (bool, None),
}

_VEHICLE_FIELDS = {
    "wheelbase": (float, (0.01, 10.0)),
    "width": (float, (0.01, 5.0)),
    "length": (float, (0.01, 20.0)),
    "v_max": (float, (0.1, 200.0)),
    "a_min": (float, (-1000.0, 0.0)),
    "a_max": (float, (0.0, 1000.0)),
    "delta_max": (float, (0.01, 1.5)),
    "delta_rate_max": (float, (0.01, 100.0)),
}

_MPC_FIELDS = {
    "n_horizon": (int, (2, 200)),
    "dt": (float, (1e-3, 1.0)),
    "v_min": (float, (0.0, 100.0)),
    "v_max": (float, (0.1, 200.0)),
    "delta_max": (float, (0.01, 1.5)),
    "wheelbase": (float, (0.01, 10.0)),
    "opp_margin": (float, (0.0, 5.0)),
    "wall_margin": (float, (0.0, 5.0)),
}

_PREDICTOR_FIELDS = {
    "dt": (float, (1e-3, 1.0)),
    "horizon": (int, (1, 10000)),
    "s_c": (float, (0.01, 100.0)),
    "v_max": (float, (0.1, 200.0)),
}

_PLANNER_FIELDS = {
    "seed_margin": (float, (0.0, 5.0)),
    "lead_time": (float, (0.01, 30.0)),
    "sample_ds": (float, (0.01, 10.0)),
    "trailing_gap": (float, (0.01, 100.0)),
    "trailing_gain": (float, (0.0, 100.0)),
    "detection_range": (float, (0.1, 1000.0)),
    "v_floor": (float, (0.0, 10.0)),
}


@dataclass
class Scenario:
    track_path: Path
    raceline: Raceline
    episodes: int
    seed_base: int
    out_dir: Path
    episode: sim.EpisodeConfig
    vehicle: sim.VehicleParams
    mpc_cfg: mpc.MpcConfig
    pred_cfg: predictor.PredictorConfig
    plan_cfg: mpc.PlannerConfig
    bench: dict = field(default_factory=dict)

    def episode_config(self, seed):
        cfg = sim.EpisodeConfig(**{**self.episode.__dict__})
        cfg.seed = int(seed)
        return cfg


def _check_section(raw, fields, section, target):
    if not isinstance(raw, dict):
        raise ConfigError(f"section '{section}' must be an object")
    for key, value in raw.items():
        if key not in fields:
            raise ConfigError(f"{section}.{key}: unknown field")
        typ, rng = fields[key]
        if typ is bool:
            if not isinstance(value, bool):
                raise ConfigError(f"{section}.{key}: expected boolean, got {value!r}")
        elif typ is int:
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(f"{section}.{key}: expected integer, got {value!r}")
        else:
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ConfigError(f"{section}.{key}: expected number, got {value!r}")
            value = float(value)
        if rng is not None and not (rng[0] <= value <= rng[1]):
            raise ConfigError(f"{section}.{key}: {value!r} outside [{rng[0]}, {rng[1]}]")
        target[key] = value


def load_scenario(path, out_dir=None) -> Scenario:
    """Load and fully validate a scenario JSON file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"scenario file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path.name}: invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path.name}: top level must be an object")

    known = {"track", "track_closed", "episodes", "seed_base", "out_dir",
             "episode", "vehicle", "mpc", "predictor", "planner", "bench"}
    for key in raw:
        if key not in known:
            raise ConfigError(f"{key}: unknown top-level field")

    if "track" not in raw or not isinstance(raw["track"], str):
        raise ConfigError("track: required string path")
    track_path = (path.parent / raw["track"]).resolve()
    if not track_path.exists():
        raise ConfigError(f"track: file not found: {track_path}")

    episodes = raw.get("episodes", 1)
    if not isinstance(episodes, int) or episodes < 1:
        raise ConfigError(f"episodes: expected positive integer, got {episodes!r}")
    seed_base = raw.get("seed_base", 0)
    if not isinstance(seed_base, int):
        raise ConfigError(f"seed_base: expected integer, got {seed_base!r}")

    ep_kwargs, veh_kwargs, mpc_kwargs, pred_kwargs, plan_kwargs = {}, {}, {}, {}, {}
    _check_section(raw.get("episode", {}), _EPISODE_FIELDS, "episode", ep_kwargs)
    _check_section(raw.get("vehicle", {}), _VEHICLE_FIELDS, "vehicle", veh_kwargs)
    _check_section(raw.get("mpc", {}), _MPC_FIELDS, "mpc", mpc_kwargs)
    _check_section(raw.get("predictor", {}), _PREDICTOR_FIELDS, "predictor", pred_kwargs)
    _check_section(raw.get("planner", {}), _PLANNER_FIELDS, "planner", plan_kwargs)

    bench = raw.get("bench", {})
    if not isinstance(bench, dict):
        raise ConfigError("bench: must be an object")

    try:
        raceline = load_raceline(track_path, closed=raw.get("track_closed"))
    except ValueError as exc:
        raise ConfigError(f"track: {exc}") from None

    vehicle = sim.VehicleParams(**veh_kwargs)
    pred_defaults = dict(s_c=1.5 * vehicle.length, v_max=vehicle.v_max)
    pred_defaults.update(pred_kwargs)
    pred_cfg = predictor.PredictorConfig(**pred_defaults)
    mpc_defaults = dict(
        wheelbase=vehicle.wheelbase, v_max=vehicle.v_max, delta_max=vehicle.delta_max,
        wall_margin=0.5 * vehicle.width, opp_margin=0.5 * vehicle.width + 0.05,
    )
    mpc_defaults.update(mpc_kwargs)
    try:
        mpc_cfg = mpc.MpcConfig(**mpc_defaults)
    except ValueError as exc:
        raise ConfigError(f"mpc: {exc}") from None
    plan_defaults = dict(trailing_gap=2.0 * pred_cfg.s_c)
    plan_defaults.update(plan_kwargs)
    plan_cfg = mpc.PlannerConfig(**plan_defaults)
    try:
        episode = sim.EpisodeConfig(**ep_kwargs)
    except ValueError as exc:
        raise ConfigError(f"episode: {exc}") from None

    resolved_out = Path(out_dir) if out_dir else (path.parent / raw.get("out_dir", "out")).resolve()
    return Scenario(
        track_path=track_path,
        raceline=raceline,
        episodes=episodes,
        seed_base=seed_base,
        out_dir=resolved_out,
        episode=episode,
        vehicle=vehicle,
        mpc_cfg=mpc_cfg,
        pred_cfg=pred_cfg,
        plan_cfg=plan_cfg,
        bench=bench,
    )
