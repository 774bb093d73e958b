import numpy as np
import pytest

from dwmlab import ConfigurationError
from dwmlab.attack import AttackScenario
from dwmlab.env import (
    TRACE_COLUMNS, ConstantPolicy, EpisodeConfig, MotorTwinEnv, MtcTwinEnv, RewardWeights, reward_step, run_episode,
)

B, Q = 0.010, 1.3741e-13


def _trace(env):
    return np.array(env.trace, dtype=float)


def _mtc(horizon=300, **kw):
    return MtcTwinEnv(episode=EpisodeConfig(horizon=horizon), **kw)


def test_reward_terms():
    w = RewardWeights()
    assert reward_step([0.2], [1.0], [0.7], 0.9, w) == pytest.approx(-0.35 * 0.2 - 0.35 * 0.3 + 0.30 * 0.4)
    with pytest.raises(ConfigurationError):
        RewardWeights(w1=-1.0)
    with pytest.raises(ConfigurationError):
        EpisodeConfig(decision_block=10, processed_block=20)


def test_trace_schema_and_determinism():
    env = _mtc()
    run_episode(env, ConstantPolicy(1e-3), AttackScenario(kind="replay", onset=100), seed=3, replication=1)
    a = _trace(env)
    assert len(TRACE_COLUMNS) == 11 and a.shape == (300, 11)
    assert np.array_equal(a[:, 0], np.arange(1, 301))
    run_episode(env, ConstantPolicy(1e-3), AttackScenario(kind="replay", onset=100), seed=3, replication=1)
    assert np.array_equal(a, _trace(env))
    run_episode(env, ConstantPolicy(1e-3), AttackScenario(kind="replay", onset=100), seed=3, replication=2)
    assert not np.array_equal(a, _trace(env))


def test_action_is_clamped():
    env = _mtc(horizon=5, U_max=1e-3)
    run_episode(env, ConstantPolicy(5.0), seed=0)
    assert np.all(_trace(env)[:, 5] == 1e-3)
    env.reset()
    env.step(-1.0)
    assert env.trace[-1][5] == 0.0


def test_step_after_done_raises():
    env = _mtc(horizon=2)
    run_episode(env, ConstantPolicy(0.0), seed=0)
    with pytest.raises(RuntimeError):
        env.step(0.0)


def test_nominal_residual_is_process_noise():
    # with the compensating predictor the nominal statistic is chi-square(1), independent of U
    env = _mtc(horizon=2000)
    run_episode(env, ConstantPolicy(2.5e-3), seed=1)
    g_hi = _trace(env)[:, 6]
    run_episode(env, ConstantPolicy(0.0), seed=1)
    g_lo = _trace(env)[:, 6]
    assert np.allclose(g_hi, g_lo, rtol=1e-6, atol=1e-9)
    assert g_hi.mean() == pytest.approx(1.0, abs=0.1)


def test_shadow_matches_real_without_watermark():
    env = _mtc()
    run_episode(env, ConstantPolicy(0.0), AttackScenario(kind="replay", onset=50), seed=2)
    a = _trace(env)
    assert np.array_equal(a[:, 1], a[:, 2])


def test_zero_watermark_replay_is_invisible():
    env = _mtc(horizon=400)
    run_episode(env, ConstantPolicy(0.0), AttackScenario(kind="replay", onset=100), seed=5)
    attacked = _trace(env)[:, 7]
    run_episode(env, ConstantPolicy(0.0), AttackScenario(), seed=5)
    assert np.array_equal(attacked, _trace(env)[:, 7])


def test_replay_residual_variance():
    env = _mtc(horizon=3000)
    U = 1e-9
    run_episode(env, ConstantPolicy(U), AttackScenario(kind="replay", onset=10), seed=4)
    a = _trace(env)
    g = a[a[:, 0] > 11, 6]
    # g = r^2 / Q with Var(r) = Q + 2 B^2 U
    assert g.mean() == pytest.approx((Q + 2 * B * B * U) / Q, rel=0.1)


def test_flip_is_stealthy_for_compensating_predictor():
    env = _mtc(horizon=400)
    run_episode(env, ConstantPolicy(1e-3), AttackScenario(kind="flip_pre", onset=50), seed=8)
    flipped = _trace(env)[:, 6]
    run_episode(env, ConstantPolicy(1e-3), AttackScenario(), seed=8)
    assert np.allclose(flipped, _trace(env)[:, 6], rtol=1e-6, atol=1e-9)


def test_attack_flag_and_belief_rise():
    env = _mtc(horizon=300)
    run_episode(env, ConstantPolicy(2.5e-3), AttackScenario(kind="replay", onset=200), seed=0)
    a = _trace(env)
    assert np.array_equal(a[:, 10], (a[:, 0] > 200).astype(float))
    assert a[-1, 8] > 0.99
    assert a[150, 8] < 0.2


def test_observation_layout():
    env = _mtc()
    env.reset(seed=0)
    obs = env.observation()
    assert obs.shape == (2,) and obs[1] == pytest.approx(0.05)


def test_motor_cadence():
    ep = EpisodeConfig(horizon=3000, decision_block=500, processed_block=100)
    env = MotorTwinEnv(episode=ep)
    run_episode(env, ConstantPolicy(0.005), seed=0)
    assert env.epochs == 6 and env.k == 3000
    a = _trace(env)
    assert a.shape[0] == 600
    assert np.array_equal(a[:100, 0], np.arange(1, 101))
    assert a[100, 0] == 501
