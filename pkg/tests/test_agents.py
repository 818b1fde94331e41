import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from _gradcheck import numeric_grad, rel_error, toy_batch

from gridweave.agents import (
    Batch,
    Mlp,
    NonFiniteGradientError,
    TrainConfig,
    a2c_update,
    advantages,
    compute_returns,
    critic_gradient,
    critic_loss,
    init_networks,
    load_checkpoint,
    pg_update,
    policy_forward,
    policy_gradient,
    policy_objective,
    rollout,
    sample_actions,
    save_checkpoint,
    train,
    write_curve,
)
from gridweave.core import BatteryParams, HouseholdConfig
from gridweave.env import OBS_DIM, BatchEnv, EnvConfig

# -- forward -----------------------------------------------------------------

def test_zero_network_is_uniform():
    p = policy_forward(Mlp.zeros(OBS_DIM, 40, 128), np.ones(OBS_DIM))
    assert np.all(p == 1 / 40)


@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100))
def test_probabilities_sum_to_one(seed, scale):
    rng = np.random.default_rng(seed)
    net = Mlp.init(OBS_DIM, 40, 16, rng)
    net = net.with_flat(net.flat() * scale)
    p = policy_forward(net, rng.normal(scale=scale, size=(7, OBS_DIM)))
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)


def test_init_reproducible():
    a, _ = init_networks(TrainConfig(), 5)
    b, _ = init_networks(TrainConfig(), 5)
    obs = np.linspace(-1, 1, OBS_DIM)
    assert np.array_equal(policy_forward(a, obs), policy_forward(b, obs))


def test_init_range():
    net = Mlp.init(OBS_DIM, 40, 128, np.random.default_rng(0))
    assert np.abs(net.w1).max() <= 1 / np.sqrt(OBS_DIM)
    assert np.abs(net.w2).max() <= 1 / np.sqrt(128)
    assert net.w1.shape == (OBS_DIM, 128) and net.w2.shape == (128, 40)


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        policy_forward(Mlp.zeros(OBS_DIM, 40, 8), np.ones(OBS_DIM + 1))


def test_sample_actions_follows_probabilities():
    rng = np.random.default_rng(0)
    probs = np.tile([0.1, 0.0, 0.6, 0.3], (20000, 1))
    counts = np.bincount(sample_actions(probs, rng), minlength=4) / 20000
    np.testing.assert_allclose(counts, [0.1, 0.0, 0.6, 0.3], atol=0.015)


# -- returns -----------------------------------------------------------------

@pytest.mark.parametrize("rewards,gamma,expected", [
    ([1, 1, 1], 1.0, [3, 2, 1]),
    ([0.3, -2.0, 5.0], 0.0, [0.3, -2.0, 5.0]),
    ([1, 2], 0.5, [2, 2]),
])
def test_compute_returns(rewards, gamma, expected):
    np.testing.assert_allclose(compute_returns(np.array(rewards, float), gamma), expected)


@given(arrays(float, 24, elements=st.floats(-10, 10)))
def test_undiscounted_returns_are_suffix_sums(r):
    expected = np.array([r[t:].sum() for t in range(24)])
    np.testing.assert_allclose(compute_returns(r, 1.0), expected, atol=1e-9)


def test_returns_batched_along_last_axis():
    r = np.arange(12.0).reshape(3, 4)
    out = compute_returns(r, 0.9)
    for i in range(3):
        np.testing.assert_array_equal(out[i], compute_returns(r[i], 0.9))


# -- gradients ---------------------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("episodes", [None, 2])
def test_policy_gradient_matches_finite_differences(seed, episodes):
    rng = np.random.default_rng(seed)
    actor = Mlp.init(4, 3, 6, rng)
    batch = toy_batch(rng, episodes=episodes)
    w = compute_returns(batch.rewards, 1.0)
    analytic = policy_gradient(actor, batch, w).flat()
    numeric = numeric_grad(lambda net: policy_objective(net, batch, w), actor)
    assert rel_error(analytic, numeric) < 1e-4


@pytest.mark.parametrize("seed", range(5))
def test_critic_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    critic = Mlp.init(4, 1, 6, rng)
    batch = toy_batch(rng, episodes=2)
    ret = compute_returns(batch.rewards, 0.95)
    analytic = critic_gradient(critic, batch, ret).flat()
    numeric = numeric_grad(lambda net: critic_loss(net, batch, ret), critic)
    assert rel_error(analytic, numeric) < 1e-4


def test_a2c_actor_gradient_uses_advantages():
    rng = np.random.default_rng(7)
    actor, critic = Mlp.init(4, 3, 6, rng), Mlp.init(4, 1, 6, rng)
    batch = toy_batch(rng)
    adv, _ = advantages(critic, batch)
    lr = 0.01
    new_actor, _ = a2c_update(actor, critic, batch, lr, 0.001)
    expected = actor.step(policy_gradient(actor, batch, adv), lr)
    assert np.array_equal(new_actor.flat(), expected.flat())


def test_pg_zero_returns_leave_params_unchanged():
    rng = np.random.default_rng(1)
    actor = Mlp.init(4, 3, 6, rng)
    batch = toy_batch(rng)
    batch.rewards[:] = 0.0
    assert np.array_equal(pg_update(actor, batch, 0.1).flat(), actor.flat())


def test_perfect_critic_leaves_actor_unchanged():
    rng = np.random.default_rng(2)
    actor = Mlp.init(4, 3, 6, rng)
    critic = Mlp.zeros(4, 1, 6)
    critic.b2[:] = 0.7
    batch = Batch(rng.normal(size=(8, 1, 4)), rng.integers(0, 3, size=(8, 1)), np.full((8, 1), 0.7))
    adv, _ = advantages(critic, batch)
    assert np.all(adv == 0)
    new_actor, new_critic = a2c_update(actor, critic, batch, 0.5, 0.5)
    assert np.array_equal(new_actor.flat(), actor.flat())
    assert np.array_equal(new_critic.flat(), critic.flat())


def test_critic_descends():
    rng = np.random.default_rng(3)
    actor, critic = Mlp.init(4, 3, 6, rng), Mlp.init(4, 1, 6, rng)
    batch = toy_batch(rng)
    ret = compute_returns(batch.rewards, 1.0)
    before = critic_loss(critic, batch, ret)
    _, critic = a2c_update(actor, critic, batch, 0.0 + 1e-9, 0.01)
    assert critic_loss(critic, batch, ret) < before


def test_empty_batch_rejected():
    empty = Batch(np.zeros((0, 3, 4)), np.zeros((0, 3), int), np.zeros((0, 3)))
    with pytest.raises(ValueError):
        pg_update(Mlp.zeros(4, 3, 2), empty, 0.1)
    with pytest.raises(ValueError):
        a2c_update(Mlp.zeros(4, 3, 2), Mlp.zeros(4, 1, 2), empty, 0.1, 0.1)


def test_non_finite_gradient_aborts():
    rng = np.random.default_rng(4)
    actor = Mlp.init(4, 3, 6, rng)
    actor.w2[0, 0] = np.nan
    with pytest.raises(NonFiniteGradientError):
        pg_update(actor, toy_batch(rng), 0.1)


def test_non_finite_rewards_rejected():
    with pytest.raises(ValueError):
        Batch(np.zeros((1, 2, 4)), np.zeros((1, 2), int), np.array([[0.0, np.inf]]))


def test_episode_normaliser_scales_gradient():
    rng = np.random.default_rng(5)
    actor = Mlp.init(4, 3, 6, rng)
    b = toy_batch(rng)
    w = compute_returns(b.rewards, 1.0)
    per_traj = policy_gradient(actor, b, w).flat()
    per_episode = policy_gradient(actor, dataclasses.replace(b, episodes=1), w).flat()
    np.testing.assert_allclose(per_episode, per_traj * b.n, rtol=1e-12)


def test_full_return_flag_weights_every_step_by_episode_return():
    rng = np.random.default_rng(6)
    actor = Mlp.init(4, 3, 6, rng)
    b = toy_batch(rng)
    full = np.repeat(compute_returns(b.rewards, 1.0)[:, :1], b.rewards.shape[1], axis=1)
    expected = actor.step(policy_gradient(actor, b, full), 0.1)
    got = pg_update(actor, b, 0.1, full_return=True)
    assert np.array_equal(got.flat(), expected.flat())


def test_bandit_learns_dominant_action():
    rng = np.random.default_rng(0)
    obs = rng.normal(size=4)
    actor = Mlp.init(4, 3, 8, rng)
    for step in range(2000):
        probs = policy_forward(actor, np.tile(obs, (16 * 2, 1)))
        acts = sample_actions(probs, rng).reshape(16, 2)
        rewards = (acts == 1).astype(float)
        batch = Batch(np.broadcast_to(obs, (16, 2, 4)).copy(), acts, rewards)
        actor = pg_update(actor, batch, 0.1)
        if policy_forward(actor, obs)[1] > 0.9:
            break
    assert policy_forward(actor, obs)[1] > 0.9
    assert step < 2000


# -- training ----------------------------------------------------------------

def tiny(**kw):
    return TrainConfig(**{"batch_size": 2, "training_steps": 3, "hidden": 16, **kw})


def test_lr_defaults():
    assert TrainConfig(algo="pg").actor_lr == 0.00381
    assert TrainConfig(algo="a2c").actor_lr == 0.00245
    assert TrainConfig(algo="pg", lr_actor=0.1).actor_lr == 0.1
    cfg = TrainConfig()
    assert (cfg.n_actions, cfg.hidden, cfg.gamma, cfg.batch_size, cfg.rollout_steps,
            cfg.training_steps, cfg.lr_critic) == (40, 128, 1.0, 32, 24, 2000, 0.001)


@pytest.mark.parametrize("kw", [dict(algo="dqn"), dict(gamma=1.5), dict(batch_size=0),
                                dict(training_steps=-1), dict(lr_actor=0.0)])
def test_bad_train_config(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_zero_steps_returns_initial_params(train_exp):
    cfg = tiny(training_steps=0)
    res = train(train_exp.env, cfg, seed=3)
    actor, critic = init_networks(cfg, 3)
    assert res.curve == []
    assert np.array_equal(res.actor.flat(), actor.flat())
    assert np.array_equal(res.critic.flat(), critic.flat())


@pytest.mark.parametrize("algo", ["pg", "a2c"])
def test_training_is_deterministic(train_exp, algo):
    a = train(train_exp.env, tiny(algo=algo), seed=1)
    b = train(train_exp.env, tiny(algo=algo), seed=1)
    assert np.array_equal(a.actor.flat(), b.actor.flat())
    assert [p.mean_reward for p in a.curve] == [p.mean_reward for p in b.curve]
    assert len(a.curve) == 3
    c = train(train_exp.env, tiny(algo=algo), seed=2)
    assert not np.array_equal(a.actor.flat(), c.actor.flat())


def test_pg_has_no_critic(train_exp):
    assert train(train_exp.env, tiny(algo="pg", training_steps=1), seed=0).critic is None


def test_train_rejects_mismatched_config(train_exp):
    with pytest.raises(ValueError):
        train(train_exp.env, tiny(n_actions=10), seed=0)
    with pytest.raises(ValueError):
        train(train_exp.env, tiny(rollout_steps=12), seed=0)
    passive = EnvConfig(microgrids=[[HouseholdConfig(id="p", battery=BatteryParams(capacity=0.0))]])
    with pytest.raises(ValueError):
        train(passive, tiny(), seed=0)


def test_identical_households_act_identically():
    twins = [HouseholdConfig(id="a", profile_peak_load=0.6, pv_peak_pv_gen=0.4),
             HouseholdConfig(id="b", profile_peak_load=0.6, pv_peak_pv_gen=0.4)]
    cfg = EnvConfig(microgrids=[twins], noise_enabled=False)
    actor, _ = init_networks(TrainConfig(), 0)
    env = BatchEnv(cfg)
    obs = env.reset([4])
    for _ in range(cfg.horizon):
        assert np.array_equal(obs[0, 0], obs[0, 1])
        p = policy_forward(actor, obs[0])
        assert np.array_equal(p[0], p[1])
        a = int(np.argmax(p[0]))
        env.step(np.array([[a, a]]))
        obs = env.observe()[:, env.fleet.actionable]
    ro = rollout(BatchEnv(cfg), actor, [4], None, greedy=True)
    assert np.array_equal(ro.batch.actions[0], ro.batch.actions[1])
    assert np.array_equal(ro.batch.rewards[0], ro.batch.rewards[1])


def test_rollout_shapes_and_totals(train_exp):
    actor, _ = init_networks(TrainConfig(), 0)
    ro = rollout(BatchEnv(train_exp.env), actor, [1, 2, 3], np.random.default_rng(0))
    assert ro.batch.obs.shape == (18, 24, OBS_DIM)
    assert ro.batch.norm == 3
    np.testing.assert_allclose(ro.batch.rewards.reshape(3, 6, 24).sum(-1), ro.reward, atol=1e-12)


# -- persistence -------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path, train_exp):
    res = train(train_exp.env, tiny(), seed=4)
    path = save_checkpoint(tmp_path / "ck.json", res)
    back = load_checkpoint(path)
    assert np.array_equal(back.actor.flat(), res.actor.flat())
    assert np.array_equal(back.critic.flat(), res.critic.flat())
    assert back.config == res.config and back.seed == 4
    doc = json.loads(path.read_text())
    assert doc["format"] == "gridweave-checkpoint" and doc["version"] == 1


@pytest.mark.parametrize("patch", [{"format": "other"}, {"version": 99}, {"obs_dim": 7}])
def test_checkpoint_rejects_foreign_files(tmp_path, train_exp, patch):
    res = train(train_exp.env, tiny(training_steps=0), seed=0)
    path = save_checkpoint(tmp_path / "ck.json", res)
    doc = json.loads(path.read_text())
    doc.update(patch)
    path.write_text(json.dumps(doc))
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_curve_csv(tmp_path, train_exp):
    res = train(train_exp.env, tiny(), seed=0)
    lines = write_curve(tmp_path / "c.csv", res.curve).read_text().splitlines()
    assert lines[0] == "iteration,mean_reward,mean_cost_price,mean_cost_emission"
    assert len(lines) == 4


def window_improvement(rewards, width: int = 100) -> float:
    """Fraction of consecutive ``width``-iteration blocks whose mean beats the previous one."""
    r = np.asarray(rewards, dtype=float)
    blocks = r[: len(r) // width * width].reshape(-1, width).mean(axis=1)
    return float(np.mean(np.diff(blocks) > 0)) if len(blocks) > 1 else 1.0


def test_window_improvement_helper():
    assert window_improvement(np.arange(300.0)) == 1.0
    assert window_improvement(-np.arange(300.0)) == 0.0
    assert window_improvement(np.r_[np.zeros(100), np.ones(100), np.zeros(100)]) == 0.5


def test_a2c_curve_improves_in_most_windows(trained_a2c):
    result, _ = trained_a2c
    frac = window_improvement([p.mean_reward for p in result.curve])
    assert frac >= 0.9, f"only {frac:.0%} of 100-iteration windows improved"
