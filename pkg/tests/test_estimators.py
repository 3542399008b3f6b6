import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from a2t.environments import catch_config, chain_config
from a2t.estimators import A2TPolicyAgent, A2TValueAgent
from a2t.experts import direction_policy
from a2t.value import ValueTrainConfig

TINY = ValueTrainConfig(steps_per_epoch=100, eval_steps=50, learn_start=32, eps_anneal=200, sync_period=25,
                        replay_capacity=500)


def _policy_agent(**kw):
    experts = [direction_policy(21, 0, 3.0), direction_policy(21, 1, 3.0)]
    return A2TPolicyAgent(experts=experts, episodes=20, hidden=(), bias=False, random_state=0, **kw)


def test_policy_agent_fit_predict():
    agent = _policy_agent().fit(chain_config())
    X = np.eye(21)
    P = agent.predict_proba(X)
    assert P.shape == (21, 2) and np.allclose(P.sum(axis=1), 1)
    np.testing.assert_array_equal(agent.predict(X), P.argmax(axis=1))
    W = agent.transform(X)
    assert W.shape == (21, 3) and np.allclose(W.sum(axis=1), 1)
    assert len(agent.curve_.returns) == 20


def test_policy_agent_is_deterministic_and_clonable():
    a = _policy_agent().fit(chain_config())
    b = clone(_policy_agent()).fit(chain_config())
    np.testing.assert_array_equal(a.predict_proba(np.eye(21)), b.predict_proba(np.eye(21)))
    assert _policy_agent(lr_base=0.2).get_params()["lr_base"] == 0.2


def test_actor_critic_agent():
    agent = _policy_agent(algorithm="actor_critic", critic_lr=0.5).fit(chain_config())
    assert agent.predict(np.eye(21)).shape == (21,)


def test_value_agent():
    agent = A2TValueAgent(epochs=1, hidden=(8,), train_config=TINY, random_state=1).fit(catch_config(rows=5, cols=5))
    X = np.random.default_rng(0).random((4, 50))
    assert agent.decision_function(X).shape == (4, 3)
    assert agent.transform(X).shape == (4, 1)
    assert agent.predict(X[0]).shape == (1,)


def test_unfitted_and_bad_input():
    with pytest.raises(NotFittedError):
        _policy_agent().predict(np.eye(21))
    agent = _policy_agent().fit(chain_config())
    with pytest.raises(ValueError, match="features"):
        agent.predict(np.eye(5))
    with pytest.raises(ValueError):
        agent.predict(np.full((2, 21), np.nan))
    with pytest.raises(TypeError):
        _policy_agent().fit(np.eye(21))
    with pytest.raises(TypeError):
        A2TPolicyAgent(experts=["L1"]).fit(chain_config())


def test_fit_transform_needs_observations():
    with pytest.raises(ValueError):
        _policy_agent().fit_transform(chain_config())
    assert _policy_agent().fit_transform(chain_config(), X=np.eye(21)).shape == (21, 3)
