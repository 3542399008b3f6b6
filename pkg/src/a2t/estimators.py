"""scikit-learn style wrappers around A2T training.

``fit`` takes an environment config (there is no supervised ``y``); the
fitted agent then maps observation matrices to actions (``predict``),
action distributions or values, and attention weights (``transform``)::

    agent = A2TPolicyAgent(experts=[l1, l2], hidden=(), bias=False).fit(chain_config())
    agent.transform(np.eye(21))       # (21, 3) attention weights
"""

from __future__ import annotations

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .approximator import Network
from .core import attend, build_ensemble, combine
from .environments import EnvConfig, make_env
from .experts import ExpertRecord
from .policy import PolicyTrainConfig, train_policy
from .value import ValueTrainConfig, q_values, train_value


def check_observations(X, n_features: int) -> np.ndarray:
    """2-d float array with the expected number of columns (1-d input is one row)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    X = check_array(X, dtype=np.float64)
    if X.shape[1] != n_features:
        raise ValueError(f"X has {X.shape[1]} features, the agent expects {n_features}")
    return X


def check_env_config(env) -> EnvConfig:
    if not isinstance(env, EnvConfig):
        raise TypeError(f"fit expects an EnvConfig, got {type(env).__name__}")
    return env


def _unpack(experts):
    nets, keeps = [], []
    for e in experts or ():
        if isinstance(e, ExpertRecord):
            nets.append(e.network)
            keeps.append(e.keep)
        elif isinstance(e, Network):
            nets.append(e)
            keeps.append(None)
        else:
            raise TypeError(f"experts must be ExpertRecord or Network, got {type(e).__name__}")
    return nets, keeps


class _A2TAgent(BaseEstimator):
    _mode = "policy"

    def _ensemble(self, env):
        nets, keeps = _unpack(self.experts)
        return build_ensemble(nets, env.obs_dim, env.n_actions, self._mode, self.base, tuple(self.hidden),
                              self.random_state, keeps, bias=self.bias)

    def transform(self, X) -> np.ndarray:
        """Attention weights per observation, shape ``(n, members)``."""
        check_is_fitted(self, "ensemble_")
        return attend(self.ensemble_, check_observations(X, self.n_features_in_))

    def fit_transform(self, env, y=None, X=None):
        self.fit(env)
        if X is None:
            raise ValueError("fit_transform needs observations X to transform")
        return self.transform(X)


class A2TPolicyAgent(_A2TAgent):
    """Policy transfer with REINFORCE or actor-critic."""

    _mode = "policy"

    def __init__(self, experts=(), algorithm="reinforce", episodes=500, base=True, hidden=(32,), bias=True,
                 lr_attention=0.05, lr_base=0.05, critic_lr=None, baseline="running-mean", random_state=None):
        self.experts = experts
        self.algorithm = algorithm
        self.episodes = episodes
        self.base = base
        self.hidden = hidden
        self.bias = bias
        self.lr_attention = lr_attention
        self.lr_base = lr_base
        self.critic_lr = critic_lr
        self.baseline = baseline
        self.random_state = random_state

    def fit(self, env, y=None):
        cfg_env = check_env_config(env)
        rng = np.random.default_rng(self.random_state)
        e = make_env(cfg_env, seed=int(rng.integers(2**31)))
        self.ensemble_ = self._ensemble(e)
        cfg = PolicyTrainConfig(lr_attention=self.lr_attention, lr_base=self.lr_base, baseline=self.baseline,
                                critic_lr=self.critic_lr, train_bias=self.bias,
                                critic_hidden=tuple(self.hidden))
        self.curve_ = train_policy(self.ensemble_, e, cfg, self.episodes, self.algorithm, rng=rng)
        self.n_features_in_ = e.obs_dim
        self.n_actions_ = e.n_actions
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "ensemble_")
        pi, _ = combine(self.ensemble_, check_observations(X, self.n_features_in_))
        return pi

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)


class A2TValueAgent(_A2TAgent):
    """Value transfer with Q-learning over a mixed Q-function."""

    _mode = "value"

    def __init__(self, experts=(), epochs=10, base=True, hidden=(32,), bias=True, train_config=None,
                 random_state=None):
        self.experts = experts
        self.epochs = epochs
        self.base = base
        self.hidden = hidden
        self.bias = bias
        self.train_config = train_config
        self.random_state = random_state

    def fit(self, env, y=None):
        cfg_env = check_env_config(env)
        rng = np.random.default_rng(self.random_state)
        e = make_env(cfg_env, seed=int(rng.integers(2**31)))
        ev = make_env(cfg_env, seed=int(rng.integers(2**31)))
        self.ensemble_ = self._ensemble(e)
        cfg = self.train_config if self.train_config is not None else ValueTrainConfig()
        cfg = dataclasses.replace(cfg, hidden=tuple(self.hidden))
        self.curve_ = train_value(self.ensemble_, e, cfg, self.epochs, rng=rng, eval_env=ev)
        self.n_features_in_ = e.obs_dim
        self.n_actions_ = e.n_actions
        return self

    def decision_function(self, X) -> np.ndarray:
        """Mixed action values ``Q_T``, shape ``(n, actions)``."""
        check_is_fitted(self, "ensemble_")
        return q_values(self.ensemble_, check_observations(X, self.n_features_in_))

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.decision_function(X), axis=1)
