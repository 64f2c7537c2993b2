import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gpovertake import gp, predictor

TRACK_LEN = 60.0


def constant_speed_estimate(v_const, d_const=0.0, track_len=TRACK_LEN):
    x = np.linspace(0.0, track_len, 60, endpoint=False)
    sgp_v = gp.make_sgp(x, np.full_like(x, v_const), np.linspace(0, track_len, 12),
                        gp.RbfKernel(3.0, 0.25), 1e-4)
    sgp_d = gp.make_sgp(x, np.full_like(x, d_const), np.linspace(0, track_len, 12),
                        gp.RbfKernel(3.0, 0.04), 1e-4)
    return predictor.OpponentEstimate(sgp_d=sgp_d, sgp_v=sgp_v)


def test_constant_speed_progressions():
    est = constant_speed_estimate(2.0)
    cfg = predictor.PredictorConfig(dt=0.1, horizon=30)
    roll = predictor.forward_simulate(
        {"s": 0.0, "v": 4.0, "a": 0.0}, {"s": 5.0, "v": 2.0}, est, cfg, TRACK_LEN
    )
    # Constant targets make the posterior mean exactly the constant.
    assert np.max(np.abs(np.diff(roll.s_ego) - 0.4)) < 1e-12
    assert np.max(np.abs(np.diff(roll.s_opp) - 0.2)) < 1e-9
    gaps = roll.s_opp - roll.s_ego
    assert np.max(np.abs(np.diff(gaps) + 0.2)) < 1e-9


def test_single_step_advance():
    est = constant_speed_estimate(2.0)
    cfg = predictor.PredictorConfig(dt=0.1, horizon=1)
    roll = predictor.forward_simulate(
        {"s": 0.0, "v": 4.0, "a": 0.5}, {"s": 10.0, "v": 2.0}, est, cfg, TRACK_LEN
    )
    assert roll.s_ego[1] == pytest.approx(0.4025, abs=1e-12)
    assert roll.v_ego[1] == pytest.approx(4.05, abs=1e-12)


def test_speed_profile_matches_dense_rollout():
    rng = np.random.default_rng(0)
    x = np.sort(rng.uniform(0.0, TRACK_LEN, 240))
    v = 3.0 + np.sin(2.0 * np.pi * x / TRACK_LEN)
    sgp_v = gp.fit_sgp(x, v, 25, iters=120)
    dense_v = gp.fit_dense_gp(x, v, iters=120)
    sgp_d = gp.make_sgp(x, np.zeros_like(x), np.linspace(0, TRACK_LEN, 10), gp.RbfKernel(3.0, 0.04), 1e-4)
    est = predictor.OpponentEstimate(sgp_d=sgp_d, sgp_v=sgp_v)
    cfg = predictor.PredictorConfig(dt=0.05, horizon=60)
    roll = predictor.forward_simulate({"s": 0.0, "v": 4.0, "a": 0.0}, {"s": 5.0}, est, cfg, TRACK_LEN)

    # Dense-oracle rollout of the opponent recursion.
    grid = np.linspace(0.0, TRACK_LEN, 400)
    gap = float(np.max(np.abs(gp.predict(sgp_v, grid).mean - gp.predict_dense(dense_v, grid).mean)))
    s, v_o = 5.0, float(gp.predict_dense(dense_v, np.array([5.0])).mean[0])
    worst = abs(v_o - roll.v_opp[0])
    for k in range(60):
        s = s + v_o * cfg.dt
        v_o = float(np.clip(gp.predict_dense(dense_v, np.array([s % TRACK_LEN])).mean[0], 0.0, cfg.v_max))
        worst = max(worst, abs(v_o - roll.v_opp[k + 1]))
    assert worst <= max(2.0 * gap * (1 + 60 * cfg.dt), 1e-3)


def test_interval_none_when_gap_large():
    est = constant_speed_estimate(2.0)
    cfg = predictor.PredictorConfig(dt=0.05, horizon=40, s_c=0.75)
    roll = predictor.forward_simulate({"s": 0.0, "v": 2.0, "a": 0.0}, {"s": 20.0, "v": 2.0}, est, cfg, TRACK_LEN)
    assert not predictor.find_collision_interval(roll, cfg).exists


def test_interval_none_when_opponent_faster():
    est = constant_speed_estimate(4.0)
    cfg = predictor.PredictorConfig(dt=0.05, horizon=60, s_c=0.75)
    roll = predictor.forward_simulate({"s": 0.0, "v": 2.0, "a": 0.0}, {"s": 2.0, "v": 4.0}, est, cfg, TRACK_LEN)
    assert not predictor.find_collision_interval(roll, cfg).exists


def test_interval_crossing_step_closed_form():
    v_ego, v_opp = 4.0, 2.0
    g0, s_c, dt = 3.0, 0.75, 0.05
    est = constant_speed_estimate(v_opp)
    cfg = predictor.PredictorConfig(dt=dt, horizon=80, s_c=s_c)
    roll = predictor.forward_simulate({"s": 0.0, "v": v_ego, "a": 0.0}, {"s": g0, "v": v_opp}, est, cfg, TRACK_LEN)
    interval = predictor.find_collision_interval(roll, cfg)
    rate = v_ego - v_opp
    k_star = math.ceil((g0 - s_c) / (rate * dt) + 1e-12)
    assert interval.exists
    assert interval.c_start == pytest.approx(roll.s_ego[k_star], abs=1e-9)
    # Interval ends when the ego is s_c ahead.
    k_end = math.ceil((g0 + s_c) / (rate * dt) - 1e-12)
    assert interval.c_end == pytest.approx(roll.s_ego[k_end], abs=1e-9)


def test_interval_persists_to_horizon_end():
    est = constant_speed_estimate(2.0)
    cfg = predictor.PredictorConfig(dt=0.05, horizon=20, s_c=2.0)
    roll = predictor.forward_simulate({"s": 0.0, "v": 2.0, "a": 0.0}, {"s": 1.0, "v": 2.0}, est, cfg, TRACK_LEN)
    interval = predictor.find_collision_interval(roll, cfg)
    assert interval.exists
    assert interval.c_end == pytest.approx(roll.s_ego[-1])


def test_interval_containment():
    est = constant_speed_estimate(2.0)
    cfg = predictor.PredictorConfig(dt=0.05, horizon=80)
    roll = predictor.forward_simulate({"s": 3.0, "v": 4.5, "a": 0.2}, {"s": 6.0, "v": 2.0}, est, cfg, TRACK_LEN)
    interval = predictor.find_collision_interval(roll, cfg)
    assert interval.exists
    assert roll.s_ego[0] <= interval.c_start <= interval.c_end <= roll.s_ego[-1]


@given(s_c_small=st.floats(0.2, 1.0), grow=st.floats(0.05, 2.0))
def test_interval_monotone_in_threshold(s_c_small, grow):
    est = constant_speed_estimate(2.0)
    cfg_small = predictor.PredictorConfig(dt=0.05, horizon=80, s_c=s_c_small)
    roll = predictor.forward_simulate({"s": 0.0, "v": 4.0, "a": 0.0}, {"s": 3.0, "v": 2.0}, est, cfg_small, TRACK_LEN)
    small = predictor.find_collision_interval(roll, cfg_small)
    cfg_big = predictor.PredictorConfig(dt=0.05, horizon=80, s_c=s_c_small + grow)
    big = predictor.find_collision_interval(roll, cfg_big)
    if small.exists:
        assert big.exists
        assert big.c_start <= small.c_start + 1e-12
        assert big.c_end >= small.c_end - 1e-12


def test_rollout_deterministic():
    est = constant_speed_estimate(2.0)
    cfg = predictor.PredictorConfig()
    a = predictor.forward_simulate({"s": 1.0, "v": 4.0, "a": 0.1}, {"s": 4.0, "v": 2.0}, est, cfg, TRACK_LEN)
    b = predictor.forward_simulate({"s": 1.0, "v": 4.0, "a": 0.1}, {"s": 4.0, "v": 2.0}, est, cfg, TRACK_LEN)
    assert np.array_equal(a.s_ego, b.s_ego)
    assert np.array_equal(a.s_opp, b.s_opp)
    assert np.array_equal(a.v_opp, b.v_opp)


def test_speed_clamped_to_limits():
    est = constant_speed_estimate(9.0)
    cfg = predictor.PredictorConfig(v_max=5.5, horizon=10)
    roll = predictor.forward_simulate({"s": 0.0, "v": 5.0, "a": 4.0}, {"s": 3.0}, est, cfg, TRACK_LEN)
    assert np.max(roll.v_ego) <= 5.5 + 1e-12
    assert np.max(roll.v_opp) <= 5.5 + 1e-12


def test_opponent_lateral_constant():
    rng = np.random.default_rng(1)
    x = np.sort(rng.uniform(0.0, TRACK_LEN, 150))
    d = np.full_like(x, 0.4) + 0.02 * rng.normal(size=x.size)
    sgp_d = gp.fit_sgp(x, d, 15, iters=80)
    est = predictor.OpponentEstimate(sgp_d=sgp_d, sgp_v=sgp_d)
    post = predictor.opponent_lateral(est, np.linspace(0, TRACK_LEN, 50), TRACK_LEN)
    assert np.max(np.abs(post.mean - 0.4)) < 0.05


def test_opponent_lateral_delegates_to_predict():
    est = constant_speed_estimate(2.0, d_const=0.25)
    s = np.array([7.3, 12.9, 61.0])
    direct = gp.predict(est.sgp_d, s % TRACK_LEN)
    via = predictor.opponent_lateral(est, s, TRACK_LEN)
    assert np.array_equal(direct.mean, via.mean)
    assert np.array_equal(direct.variance, via.variance)
