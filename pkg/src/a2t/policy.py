"""Policy transfer: REINFORCE and actor-critic training of an A2T ensemble.

The attention network is trained through log pi_T, the mixture the agent
actually samples from.  The base network is trained through log pi_B at the
same sampled actions, as if it had chosen them itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .approximator import Network, Optimizer, apply_update, backward, forward, init_network, log_prob_grad
from .core import A2TEnsemble, attend, freeze_check, grad_attention_logpi, member_outputs, mix


@dataclass
class PolicyTrainConfig:
    lr_attention: float = 0.05
    lr_base: float = 0.05
    baseline: str = "running-mean"   # or "none"
    baseline_decay: float = 0.9
    gamma: float = 0.99
    discount_return: bool = False
    cap: int | None = None           # None: rely on the environment's own cap
    norm_eps: float = 1e-8
    critic_lr: float | None = None   # None: 10x the larger actor rate
    critic_hidden: tuple = (32,)
    optimizer: str = "sgd"           # or "rmsprop" (REINFORCE updates only)
    rms_decay: float = 0.95
    rms_eps: float = 0.01
    train_bias: bool = True          # False keeps zero biases fixed (tabular attention and base)

    def __post_init__(self):
        if self.lr_attention < 0 or self.lr_base < 0:
            raise ValueError("learning rates must be non-negative")
        if self.baseline not in ("none", "running-mean"):
            raise ValueError(f"unknown baseline mode {self.baseline!r}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.norm_eps <= 0:
            raise ValueError("normalisation epsilon must be positive")

    @property
    def critic_rate(self) -> float:
        if self.critic_lr is not None:
            return self.critic_lr
        return 10.0 * max(self.lr_attention, self.lr_base)


@dataclass
class EpisodeTrace:
    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    weights: np.ndarray           # attention weights at each visited state
    member_outputs: np.ndarray    # (M, members, actions) snapshot used for sampling

    @property
    def length(self) -> int:
        return len(self.actions)

    def episode_return(self, gamma: float = 1.0, discounted: bool = False) -> float:
        if not discounted:
            return float(np.sum(self.rewards))
        return float(np.sum(self.rewards * gamma ** np.arange(self.length)))


@dataclass
class Critic:
    net: Network
    gamma: float = 0.99
    lr: float = 0.5
    train_bias: bool = True

    def value(self, s) -> float:
        return float(forward(self.net, s)[0])


def make_critic(obs_dim: int, gamma: float, lr: float, hidden=(32,), rng=None, bias: bool = True) -> Critic:
    return Critic(init_network([obs_dim, *hidden, 1], "linear", rng, bias), gamma, lr, bias)


@dataclass
class PolicyCurve:
    returns: list = field(default_factory=list)
    lengths: list = field(default_factory=list)
    weights: list = field(default_factory=list)

    def as_arrays(self):
        return np.asarray(self.returns), np.asarray(self.lengths), np.asarray(self.weights)


def _policy_step(ens: A2TEnsemble, s, rng):
    K = member_outputs(ens, s)
    w = attend(ens, s)
    pi = mix(w, K)
    c = np.cumsum(pi)
    a = min(int(np.searchsorted(c, rng.random() * c[-1], side="right")), len(pi) - 1)
    return a, K, w


def rollout(ens: A2TEnsemble, env, rng=None, cap: int | None = None) -> EpisodeTrace:
    """Sample one episode from pi_T."""
    if ens.mode != "policy":
        raise ValueError("rollout needs a policy-mode ensemble")
    rng = np.random.default_rng(rng)
    s = env.reset()
    obs, acts, rews, ws, Ks = [], [], [], [], []
    done = env.done
    while not done:
        a, K, w = _policy_step(ens, s, rng)
        res = env.step(a)
        obs.append(s)
        acts.append(a)
        rews.append(res.reward)
        ws.append(w)
        Ks.append(K)
        s, done = res.observation, res.terminal
        if cap is not None and len(acts) >= cap:
            break
    n = ens.n_members
    return EpisodeTrace(
        np.array(obs).reshape(-1, ens.obs_dim), np.array(acts, dtype=int), np.array(rews, dtype=float),
        np.array(ws).reshape(-1, n), np.array(Ks).reshape(-1, n, ens.n_actions),
    )


def make_optimizers(cfg: PolicyTrainConfig) -> tuple[Optimizer, Optimizer]:
    return (Optimizer(cfg.optimizer, cfg.lr_attention, cfg.rms_decay, cfg.rms_eps, train_bias=cfg.train_bias),
            Optimizer(cfg.optimizer, cfg.lr_base, cfg.rms_decay, cfg.rms_eps, train_bias=cfg.train_bias))


def reinforce_step(ens: A2TEnsemble, trace: EpisodeTrace, cfg: PolicyTrainConfig, baseline: float = 0.0,
                   optimizers=None) -> float:
    """One episodic REINFORCE update of attention and base; returns the new baseline.

    The ensemble's ``attention`` and ``base`` attributes are replaced by their
    updated copies.  ``optimizers`` (attention, base) carry RMSProp state
    between episodes; fresh ones are made when omitted.
    """
    if trace.length == 0:
        raise ValueError("cannot update from an empty episode")
    opt_a, opt_b = optimizers if optimizers is not None else make_optimizers(cfg)
    r = trace.episode_return(cfg.gamma, cfg.discount_return)
    b = baseline if cfg.baseline == "running-mean" else 0.0
    adv = r - b
    if adv != 0.0:
        S, A = trace.observations, trace.actions
        new_att = ens.attention
        if ens.n_members > 1 and cfg.lr_attention > 0:
            g_a = grad_attention_logpi(ens, S, A, trace.member_outputs)
            new_att = apply_update(ens.attention, g_a.scaled(adv), opt_a, ascent=True)
        if ens.base is not None and cfg.lr_base > 0:
            g_b = log_prob_grad(ens.base, S, A)
            ens.base = apply_update(ens.base, g_b.scaled(adv), opt_b, ascent=True)
        ens.attention = new_att
    if cfg.baseline == "running-mean":
        return cfg.baseline_decay * baseline + (1.0 - cfg.baseline_decay) * r
    return baseline


def td_error(critic: Critic, s, r: float, s_next, terminal: bool) -> float:
    v_next = 0.0 if terminal else critic.value(s_next)
    return r + critic.gamma * v_next - critic.value(s)


def actor_critic_step(ens: A2TEnsemble, critic: Critic, s, a: int, r: float, s_next, terminal: bool,
                      cfg: PolicyTrainConfig, K=None) -> float:
    """Online update with unit-norm actor steps scaled by the TD error; returns delta."""
    delta = td_error(critic, s, r, s_next, terminal)
    if delta == 0.0:
        return delta
    opt_a = Optimizer("sgd", cfg.lr_attention, train_bias=cfg.train_bias)
    opt_b = Optimizer("sgd", cfg.lr_base, train_bias=cfg.train_bias)
    new_att = ens.attention
    if ens.n_members > 1 and cfg.lr_attention > 0:
        g_a = grad_attention_logpi(ens, s, a, K)
        new_att = apply_update(ens.attention, g_a.scaled(delta / (g_a.norm() + cfg.norm_eps)), opt_a, ascent=True)
    if ens.base is not None and cfg.lr_base > 0:
        g_b = log_prob_grad(ens.base, s, a)
        ens.base = apply_update(ens.base, g_b.scaled(delta / (g_b.norm() + cfg.norm_eps)), opt_b, ascent=True)
    ens.attention = new_att
    g_v = backward(critic.net, s, np.ones(1))
    opt_v = Optimizer("sgd", critic.lr, train_bias=critic.train_bias)
    critic.net = apply_update(critic.net, g_v.scaled(delta), opt_v, ascent=True)
    return delta


def actor_critic_episode(ens: A2TEnsemble, critic: Critic, env, cfg: PolicyTrainConfig, rng) -> EpisodeTrace:
    s = env.reset()
    obs, acts, rews, ws, Ks = [], [], [], [], []
    done = env.done
    while not done:
        a, K, w = _policy_step(ens, s, rng)
        res = env.step(a)
        actor_critic_step(ens, critic, s, a, res.reward, res.observation, res.terminal, cfg, K)
        obs.append(s)
        acts.append(a)
        rews.append(res.reward)
        ws.append(w)
        Ks.append(K)
        s, done = res.observation, res.terminal
        if cfg.cap is not None and len(acts) >= cfg.cap:
            break
    n = ens.n_members
    return EpisodeTrace(
        np.array(obs).reshape(-1, ens.obs_dim), np.array(acts, dtype=int), np.array(rews, dtype=float),
        np.array(ws).reshape(-1, n), np.array(Ks).reshape(-1, n, ens.n_actions),
    )


def train_policy(ens: A2TEnsemble, env, cfg: PolicyTrainConfig, episodes: int, algorithm: str = "reinforce",
                 logger=None, rng=None, critic: Critic | None = None) -> PolicyCurve:
    """Train in place for ``episodes`` episodes and return the learning curve.

    ``logger`` is called with one dict per episode (episode, return, length,
    w_1..w_M).
    """
    if ens.mode != "policy":
        raise ValueError("policy training needs a policy-mode ensemble")
    if algorithm not in ("reinforce", "actor_critic"):
        raise ValueError(f"unknown policy algorithm {algorithm!r}")
    rng = np.random.default_rng(rng)
    if algorithm == "actor_critic" and critic is None:
        critic = make_critic(ens.obs_dim, cfg.gamma, cfg.critic_rate, cfg.critic_hidden, rng, cfg.train_bias)
    curve = PolicyCurve()
    baseline = 0.0
    optimizers = make_optimizers(cfg)
    for ep in range(episodes):
        if algorithm == "reinforce":
            trace = rollout(ens, env, rng, cfg.cap)
            baseline = reinforce_step(ens, trace, cfg, baseline, optimizers)
        else:
            trace = actor_critic_episode(ens, critic, env, cfg, rng)
        ret = trace.episode_return(cfg.gamma, cfg.discount_return)
        w = trace.weights.mean(axis=0)
        curve.returns.append(ret)
        curve.lengths.append(trace.length)
        curve.weights.append(w)
        if logger is not None:
            row = {"episode": ep, "return": ret, "length": trace.length}
            row.update({f"w_{i + 1}": float(v) for i, v in enumerate(w)})
            logger(row)
    freeze_check(ens)
    return curve
