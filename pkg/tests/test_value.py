import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from a2t.approximator import Network, backward, flatten, forward, unflatten
from a2t.core import build_ensemble, combine, member_outputs, random_ensemble
from a2t.environments import catch_config, make_env
from a2t.value import (
    QLearner, ReplayBuffer, TargetPair, Transition, ValueTrainConfig, act_epsilon_greedy, clip_reward,
    learn_step, q_target, q_values, store, train_dqn_expert, train_value,
)

from test_approximator import central, rel_err


def _const_q(obs_dim, q):
    return Network([np.zeros((len(q), obs_dim))], [np.asarray(q, dtype=float)], "linear")


def _t(i=0, r=0.0, done=False, dim=2):
    return Transition(np.full(dim, float(i)), 0, r, np.zeros(dim), done)


# act_epsilon_greedy

def _fixed_q_ensemble(q):
    return build_ensemble([_const_q(2, q)], 2, len(q), "value", base=False, hidden=(), rng=0)


def test_full_exploration_is_uniform():
    ens, rng = _fixed_q_ensemble([1.0, 3.0, 2.0]), np.random.default_rng(0)
    acts = np.array([act_epsilon_greedy(ens, np.zeros(2), 1.0, rng) for _ in range(10_000)])
    assert np.all(np.abs(np.bincount(acts, minlength=3) / 10_000 - 1 / 3) < 0.02)


def test_greedy_picks_argmax():
    assert act_epsilon_greedy(_fixed_q_ensemble([1.0, 3.0, 2.0]), np.zeros(2), 0.0, np.random.default_rng()) == 1


def test_greedy_ties_take_lowest_index():
    assert act_epsilon_greedy(_fixed_q_ensemble([2.0, 2.0, 1.0]), np.zeros(2), 0.0, np.random.default_rng()) == 0


def test_epsilon_005_frequency():
    ens, rng = _fixed_q_ensemble([1.0, 3.0, 2.0]), np.random.default_rng(1)
    acts = np.array([act_epsilon_greedy(ens, np.zeros(2), 0.05, rng) for _ in range(100_000)])
    assert abs(np.mean(acts == 1) - (0.95 + 0.05 / 3)) < 0.01


def test_epsilon_schedule():
    cfg = ValueTrainConfig(eps_start=1.0, eps_end=0.1, eps_anneal=100, learn_start=32)
    assert cfg.epsilon(0) == 1.0 and cfg.epsilon(50) == pytest.approx(0.55) and cfg.epsilon(500) == pytest.approx(0.1)


# replay and store

def test_rho_one_keeps_everything():
    buf, rng = ReplayBuffer(100, 2, rho=1.0), np.random.default_rng(0)
    for i in range(50):
        store(buf, _t(i, r=1.0), rng)
    assert len(buf) == 50


def test_rho_zero_drops_rewarded():
    buf, rng = ReplayBuffer(100, 2, rho=0.0), np.random.default_rng(0)
    for i in range(60):
        store(buf, _t(i, r=float(i % 3 - 1)), rng)
    assert len(buf) == 20 and all(t.reward == 0.0 for t in buf.transitions())


def test_rho_tenth_binomial_count():
    buf, rng = ReplayBuffer(20_000, 1, rho=0.1), np.random.default_rng(2024)
    for _ in range(10_000):
        store(buf, _t(r=-1.0, dim=1), rng)
    assert abs(len(buf) - 1000) <= 60


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 20), st.integers(0, 40))
def test_fifo_keeps_last_capacity(capacity, extra):
    buf = ReplayBuffer(capacity, 2)
    total = capacity + extra
    for i in range(total):
        buf.add(_t(i))
    assert [int(t.state[0]) for t in buf.transitions()] == list(range(total - capacity, total))


def test_sample_only_returns_stored():
    buf, rng = ReplayBuffer(10, 2), np.random.default_rng(0)
    for i in range(13):
        buf.add(_t(i))
    S = np.concatenate([buf.sample(10, rng)[0] for _ in range(50)])
    assert set(S[:, 0].astype(int)) == set(range(3, 13))
    part = ReplayBuffer(10, 2)
    for i in range(4):
        part.add(_t(i))
    S = np.concatenate([part.sample(4, rng)[0] for _ in range(50)])
    assert set(S[:, 0].astype(int)) == {0, 1, 2, 3}
    with pytest.raises(ValueError):
        part.sample(5, rng)


# q_target

def _value_ens(seed=0, n=2, base=True):
    return random_ensemble(seed, n, 3, 2, "value", base)


def test_terminal_target_is_reward():
    ens = _value_ens()
    tp = TargetPair.of(ens, 10)
    assert q_target(ens, tp, [-1.0], np.ones((1, 3)), [True], 0.99)[0] == -1.0


def test_myopic_target_is_clipped_reward():
    ens = _value_ens()
    tp = TargetPair.of(ens, 10)
    y = q_target(ens, tp, [5.0, -0.3], np.ones((2, 3)), [False, False], 0.0)
    np.testing.assert_allclose(y, [1.0, -0.3])


def test_target_plugged_values():
    ens = build_ensemble([_const_q(3, [2.0, 1.0])], 3, 2, "value", base=False, hidden=(), rng=0)
    y = q_target(ens, TargetPair.of(ens, 10), [0.0], np.ones((1, 3)), [False], 0.99)
    assert y[0] == pytest.approx(1.98)


def test_reward_clipping():
    np.testing.assert_array_equal(clip_reward(np.array([-5.0, -0.5, 0.0, 2.0])), [-1.0, -0.5, 0.0, 1.0])
    np.testing.assert_array_equal(clip_reward(np.array([-5.0, 2.0]), enabled=False), [-5.0, 2.0])
    ens = build_ensemble([_const_q(3, [0.0, 0.0])], 3, 2, "value", base=False, hidden=(), rng=0)
    assert q_target(ens, TargetPair.of(ens, 1), [10.0], np.ones((1, 3)), [True], 0.9, clip=False)[0] == 10.0


def test_targets_stale_between_syncs():
    rng = np.random.default_rng(0)
    ens = _value_ens(3)
    cfg = ValueTrainConfig(batch_size=4, learn_start=4, sync_period=5, lr=0.05)
    learner = QLearner.create(ens, cfg)
    for _ in range(40):
        learner.buffer.add(Transition(rng.normal(size=3), int(rng.integers(2)), 1.0, rng.normal(size=3), False))
    S2 = rng.normal(size=(6, 3))
    snap = learner.targets.attention.copy(), learner.targets.base.copy()
    first = q_target(ens, learner.targets, np.zeros(6), S2, np.zeros(6), 0.9)
    for k in range(4):
        info = learn_step(learner, rng)
        assert not info["synced"]
        np.testing.assert_array_equal(q_target(ens, learner.targets, np.zeros(6), S2, np.zeros(6), 0.9), first)
    assert learner.targets.attention == snap[0] and learner.targets.base == snap[1]
    assert ens.attention != snap[0]
    info = learn_step(learner, rng)
    assert info["synced"]
    assert learner.targets.attention == ens.attention and learner.targets.base == ens.base


# learn_step

def _learner(ens, **kw):
    cfg = ValueTrainConfig(**{"batch_size": 1, "learn_start": 1, "optimizer": "sgd", "lr": 0.1,
                              "reward_clip": False, **kw})
    return QLearner.create(ens, cfg)


def test_zero_residual_changes_nothing():
    q = [0.5, -0.25]
    ens = build_ensemble([_const_q(3, q)], 3, 2, "value", hidden=(), rng=0)
    ens.base = _const_q(3, q)
    learner = _learner(ens, gamma=0.0)
    att, base = ens.attention.copy(), ens.base.copy()
    batch = (np.ones((1, 3)), np.array([0]), np.array([0.5]), np.ones((1, 3)), np.array([True]))
    learn_step(learner, np.random.default_rng(0), batch)
    assert ens.attention == att and ens.base == base


def test_single_transition_matches_finite_differences():
    rng = np.random.default_rng(7)
    for _ in range(20):
        ens = random_ensemble(rng, 2, 3, 2, "value")
        learner = _learner(ens, gamma=0.9, lr=1.0)
        s, s2 = rng.normal(size=(1, 3)), rng.normal(size=(1, 3))
        a, r = np.array([int(rng.integers(2))]), np.array([float(rng.normal())])
        batch = (s, a, r, s2, np.array([False]))
        y = float(q_target(ens, learner.targets, r, s2, [False], 0.9, clip=False)[0])
        K = member_outputs(ens, s[0])
        att0, base0 = ens.attention.copy(), ens.base.copy()
        # with plain SGD at rate 1 the parameter change is exactly minus the gradient
        learn_step(learner, rng, batch)
        g_att = flatten(att0) - flatten(ens.attention)
        g_base = flatten(base0) - flatten(ens.base)
        f_att = lambda t: 0.5 * (y - forward(unflatten(t, att0), s[0]) @ K[:, a[0]]) ** 2  # noqa: E731
        f_base = lambda t: 0.5 * (y - forward(unflatten(t, base0), s[0])[a[0]]) ** 2  # noqa: E731
        assert rel_err(g_att, central(f_att, flatten(att0))) < 1e-4
        assert rel_err(g_base, central(f_base, flatten(base0))) < 1e-4


def test_attention_and_base_share_one_target():
    rng = np.random.default_rng(3)
    ens = _value_ens(5)
    learner = _learner(ens, gamma=0.9, batch_size=8, learn_start=8)
    for _ in range(16):
        learner.buffer.add(Transition(rng.normal(size=3), int(rng.integers(2)), float(rng.normal()),
                                      rng.normal(size=3), bool(rng.random() < 0.3)))
    batch = learner.buffer.sample(8, rng)
    expected = q_target(ens, learner.targets, batch[2], batch[3], batch[4], 0.9, False)
    # base residual uses the same y: recompute the base update by hand
    base0 = ens.base.copy()
    info = learn_step(learner, rng, batch)
    np.testing.assert_array_equal(info["targets"], expected)
    q_b = forward(base0, batch[0])
    u = np.zeros_like(q_b)
    u[np.arange(8), batch[1]] = -(expected - q_b[np.arange(8), batch[1]]) / 8
    g = flatten(backward(base0, batch[0], u))
    np.testing.assert_allclose(flatten(base0) - flatten(ens.base), 0.1 * g, atol=1e-12)


def test_cold_buffer_signals_no_op():
    ens = _value_ens()
    learner = QLearner.create(ens, ValueTrainConfig(learn_start=100))
    learner.buffer.add(_t(dim=3))
    assert learn_step(learner, np.random.default_rng(0)) is None and learner.steps == 0


# training runs

_FAST = ValueTrainConfig(steps_per_epoch=300, eval_steps=100, learn_start=100, learn_every=1, eps_anneal=600,
                         sync_period=50, replay_capacity=1000, lr=0.02, hidden=(16,))


def test_zero_epochs_returns_initial_net():
    env = make_env(catch_config(rows=5, cols=5), seed=0)
    net, curve = train_dqn_expert(env, _FAST, 0, rng=1)
    assert curve.scores == []
    assert net == build_ensemble([], 50, 3, "value", True, (16,), np.random.default_rng(1)).base


def test_value_training_logs_and_freezes_experts():
    rows = []
    ens = random_ensemble(0, 2, 50, 3, "value", hidden=(16,))
    sums = [e.checksum() for e in ens.experts]
    env, ev = make_env(catch_config(rows=5, cols=5), seed=1), make_env(catch_config(rows=5, cols=5), seed=2)
    curve = train_value(ens, env, _FAST, 3, logger=rows.append, rng=0, eval_env=ev)
    assert [r["epoch"] for r in rows] == [1, 2, 3]
    assert list(rows[0]) == ["epoch", "score", "episodes", "w_1", "w_2", "w_3", "epsilon"]
    assert len(curve.scores) == 3 and all(-1 <= s <= 1 for s in curve.scores)
    assert [e.checksum() for e in ens.experts] == sums


def test_value_training_deterministic():
    def run():
        ens = random_ensemble(4, 1, 50, 3, "value", hidden=(16,))
        env, ev = make_env(catch_config(rows=5, cols=5), seed=1), make_env(catch_config(rows=5, cols=5), seed=2)
        c = train_value(ens, env, _FAST, 2, rng=9, eval_env=ev)
        return c.scores, flatten(ens.base), flatten(ens.attention)
    a, b = run(), run()
    assert a[0] == b[0] and np.array_equal(a[1], b[1]) and np.array_equal(a[2], b[2])


def test_q_t_bounded_by_members_during_training():
    ens = random_ensemble(2, 2, 50, 3, "value", hidden=(16,))
    env = make_env(catch_config(rows=5, cols=5), seed=3)
    train_value(ens, env, dataclasses.replace(_FAST, steps_per_epoch=400), 1, rng=0)
    S = np.random.default_rng(0).integers(0, 2, size=(64, 50)).astype(float)
    Q, K = q_values(ens, S), member_outputs(ens, S)
    assert np.all(Q >= K.min(axis=1) - 1e-9) and np.all(Q <= K.max(axis=1) + 1e-9)
    np.testing.assert_allclose(Q, combine(ens, S)[0])


def test_scratch_dqn_learns_small_catch():
    env, ev = make_env(catch_config(rows=5, cols=5), seed=0), make_env(catch_config(rows=5, cols=5), seed=1)
    cfg = dataclasses.replace(_FAST, steps_per_epoch=1000, eval_steps=500, eps_anneal=3000, sync_period=250,
                              replay_capacity=5000, learn_start=500, hidden=(32,))
    _, curve = train_dqn_expert(env, cfg, 12, rng=0, eval_env=ev)
    assert max(curve.scores[-3:]) >= 0.8


def test_config_validation():
    with pytest.raises(ValueError):
        ValueTrainConfig(rho=1.5)
    with pytest.raises(ValueError):
        ValueTrainConfig(batch_size=64, learn_start=10)
    with pytest.raises(ValueError):
        train_value(random_ensemble(0, 1, 50, 3, "policy"), make_env(catch_config(rows=5, cols=5)), _FAST, 1)
