"""Value transfer: Q-learning of an A2T ensemble with replay and target networks.

Both the attention network and the base network regress onto the same
bootstrap target, computed from the mixed Q_T with the frozen target copies
of attention and base.  The attention network minimises the squared error
of Q_T, the base network the squared error of its own Q_B.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .approximator import Network, Optimizer, apply_update, backprop, forward_cache
from .core import A2TEnsemble, attend, build_ensemble, expert_outputs, freeze_check, grad_attention_qloss, mix


class Transition(NamedTuple):
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool


@dataclass
class ValueTrainConfig:
    gamma: float = 0.99
    eps_start: float = 1.0
    eps_end: float = 0.1
    eps_anneal: int = 50_000
    eval_eps: float = 0.05
    batch_size: int = 32
    learn_start: int = 2_500
    learn_every: int = 4
    sync_period: int = 1_000
    reward_clip: bool = True
    optimizer: str = "rmsprop"
    lr: float = 0.0025
    lr_attention: float | None = None
    rms_decay: float = 0.95
    rms_eps: float = 0.01
    steps_per_epoch: int = 20_000
    eval_steps: int = 2_000
    replay_capacity: int = 50_000
    rho: float = 1.0
    hidden: tuple = (32,)

    def __post_init__(self):
        for name in ("eps_start", "eps_end", "eval_eps", "rho"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.batch_size < 1 or self.sync_period < 1 or self.learn_every < 1:
            raise ValueError("batch size, sync period and learn interval must be positive")
        if self.learn_start < self.batch_size:
            raise ValueError("learn_start must be at least one batch")

    def epsilon(self, step: int) -> float:
        frac = min(step / self.eps_anneal, 1.0) if self.eps_anneal > 0 else 1.0
        return self.eps_start + frac * (self.eps_end - self.eps_start)


class ReplayBuffer:
    """Fixed-capacity FIFO transition store backed by preallocated arrays."""

    def __init__(self, capacity: int, obs_dim: int, rho: float = 1.0):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity, self.obs_dim, self.rho = capacity, obs_dim, rho
        self.s = np.zeros((capacity, obs_dim))
        self.s2 = np.zeros((capacity, obs_dim))
        self.a = np.zeros(capacity, dtype=int)
        self.r = np.zeros(capacity)
        self.done = np.zeros(capacity, dtype=bool)
        self.size = 0
        self.head = 0      # next slot to write

    def __len__(self) -> int:
        return self.size

    def add(self, t: Transition) -> None:
        i = self.head
        self.s[i], self.a[i], self.r[i], self.s2[i], self.done[i] = t
        self.head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def ordered_indices(self) -> np.ndarray:
        start = (self.head - self.size) % self.capacity
        return (start + np.arange(self.size)) % self.capacity

    def transitions(self) -> list[Transition]:
        """Stored transitions, oldest first."""
        return [Transition(self.s[i].copy(), int(self.a[i]), float(self.r[i]), self.s2[i].copy(), bool(self.done[i]))
                for i in self.ordered_indices()]

    def sample(self, n: int, rng) -> tuple:
        if n > self.size:
            raise ValueError(f"cannot sample {n} transitions from a buffer of {self.size}")
        idx = (rng.integers(self.size, size=n) + self.head - self.size) % self.capacity
        return self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.done[idx]


def store(buffer: ReplayBuffer, t: Transition, rng) -> bool:
    """Insert ``t``; nonzero-reward transitions survive only with probability rho."""
    if t.reward != 0.0 and buffer.rho < 1.0 and not rng.random() < buffer.rho:
        return False
    buffer.add(t)
    return True


@dataclass
class TargetPair:
    attention: Network
    base: Network | None
    period: int = 1_000
    updates: int = 0

    @classmethod
    def of(cls, ens: A2TEnsemble, period: int) -> "TargetPair":
        return cls(ens.attention.copy(), ens.base.copy() if ens.base is not None else None, period)

    def sync(self, ens: A2TEnsemble) -> None:
        self.attention = ens.attention.copy()
        self.base = ens.base.copy() if ens.base is not None else None

    def tick(self, ens: A2TEnsemble) -> bool:
        self.updates += 1
        if self.updates % self.period == 0:
            self.sync(ens)
            return True
        return False


def clip_reward(r, enabled: bool = True):
    return np.clip(r, -1.0, 1.0) if enabled else r


def q_values(ens: A2TEnsemble, S, attention: Network | None = None, base: Network | None = None,
             K_exp=None) -> np.ndarray:
    """Mixed Q_T for a batch; optional overrides select target parameters."""
    S = np.atleast_2d(S)
    K = expert_outputs(ens, S) if K_exp is None else K_exp
    b = ens.base if base is None else base
    if b is not None:
        K = np.concatenate([K, forward_cache(b, S)[-1][:, None, :]], axis=1)
    w = attend(ens, S, attention)
    return mix(w, K)


def q_target(ens: A2TEnsemble, targets: TargetPair, rewards, next_states, terminals, gamma: float,
             clip: bool = True) -> np.ndarray:
    r = clip_reward(np.asarray(rewards, dtype=float), clip)
    q_next = q_values(ens, next_states, targets.attention, targets.base).max(axis=1)
    return r + gamma * np.where(np.asarray(terminals, dtype=bool), 0.0, q_next)


def act_epsilon_greedy(ens: A2TEnsemble, s, eps: float, rng) -> int:
    if eps > 0.0 and rng.random() < eps:
        return int(rng.integers(ens.n_actions))
    return int(np.argmax(q_values(ens, s)[0]))


@dataclass
class QLearner:
    """Everything a Q-learning run mutates: buffer, targets, optimiser caches, counters."""

    ens: A2TEnsemble
    cfg: ValueTrainConfig
    buffer: ReplayBuffer
    targets: TargetPair
    opt_attention: Optimizer
    opt_base: Optimizer
    steps: int = 0
    last_targets: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def create(cls, ens: A2TEnsemble, cfg: ValueTrainConfig) -> "QLearner":
        lr_a = cfg.lr if cfg.lr_attention is None else cfg.lr_attention
        return cls(
            ens, cfg, ReplayBuffer(cfg.replay_capacity, ens.obs_dim, cfg.rho), TargetPair.of(ens, cfg.sync_period),
            Optimizer(cfg.optimizer, lr_a, cfg.rms_decay, cfg.rms_eps),
            Optimizer(cfg.optimizer, cfg.lr, cfg.rms_decay, cfg.rms_eps),
        )


def learn_step(learner: QLearner, rng, batch=None) -> dict | None:
    """One minibatch update of attention and base; ``None`` until the buffer is warm."""
    ens, cfg = learner.ens, learner.cfg
    if batch is None:
        if len(learner.buffer) < max(cfg.learn_start, cfg.batch_size):
            return None
        batch = learner.buffer.sample(cfg.batch_size, rng)
    S, A, R, S2, D = batch
    n = len(A)
    y = q_target(ens, learner.targets, R, S2, D, cfg.gamma, cfg.reward_clip)
    rows = np.arange(n)
    K_exp = expert_outputs(ens, S)
    new_att = ens.attention
    if ens.base is not None:
        acts = forward_cache(ens.base, S)
        q_b = acts[-1]
        K = np.concatenate([K_exp, q_b[:, None, :]], axis=1)
        dz = np.zeros_like(q_b)
        dz[rows, A] = -(y - q_b[rows, A]) / n
        g_b = backprop(ens.base, acts, dz)
    else:
        K = K_exp
    if ens.n_members > 1:
        g_a = grad_attention_qloss(ens, S, A, y, K).scaled(1.0 / n)
        new_att = apply_update(ens.attention, g_a, learner.opt_attention)
    if ens.base is not None:
        ens.base = apply_update(ens.base, g_b, learner.opt_base)
    ens.attention = new_att
    learner.steps += 1
    learner.last_targets = y
    synced = learner.targets.tick(ens)
    return {"targets": y, "synced": synced}


@dataclass
class ValueCurve:
    scores: list = field(default_factory=list)        # evaluation mean score per epoch
    episodes: list = field(default_factory=list)      # completed evaluation episodes per epoch
    weights: list = field(default_factory=list)       # mean attention weights per epoch
    epsilons: list = field(default_factory=list)


def evaluate_value(ens: A2TEnsemble, env, steps: int, eps: float, rng, view=None, episodes: int | None = None):
    """Run the epsilon-greedy policy; returns (episode returns, landing info, mean weights).

    Stops after ``steps`` decisions, or after ``episodes`` completed episodes
    when that is given.  Only completed episodes are scored.
    """
    returns, landings, wsum, count = [], [], np.zeros(ens.n_members), 0
    s = env.reset()
    s = view(s) if view else s
    ep_ret, t = 0.0, 0
    while True:
        if episodes is None and t >= steps:
            break
        if episodes is not None and len(returns) >= episodes:
            break
        wsum += attend(ens, s)
        count += 1
        a = act_epsilon_greedy(ens, s, eps, rng)
        res = env.step(a)
        ep_ret += res.reward
        t += 1
        if res.terminal:
            returns.append(ep_ret)
            landings.append(getattr(env, "landing_column", None))
            ep_ret = 0.0
            s = env.reset()
        else:
            s = res.observation
        s = view(s) if view else s
    return returns, landings, wsum / max(count, 1)


def _view_for(env, masked: bool):
    if not masked:
        return None
    keep = env.keep
    return lambda x: x * keep


def train_value(ens: A2TEnsemble, env, cfg: ValueTrainConfig, epochs: int, logger=None, rng=None,
                eval_env=None, masked: bool = False, learner: QLearner | None = None,
                reward_sign: float = 1.0) -> ValueCurve:
    """Alternate epsilon-greedy acting and minibatch learning, evaluating after every epoch.

    With ``masked`` the learner sees ``env.observe_masked()``-style observations
    (used to build occluded experts).  ``reward_sign=-1`` trains on negated rewards
    while evaluation still reports the environment's own score.
    """
    if ens.mode != "value":
        raise ValueError("value training needs a value-mode ensemble")
    rng = np.random.default_rng(rng)
    learner = learner or QLearner.create(ens, cfg)
    view = _view_for(env, masked)
    eval_env = eval_env if eval_env is not None else env
    eval_view = _view_for(eval_env, masked)
    curve = ValueCurve()
    s = env.reset()
    s = view(s) if view else s
    total = 0
    for epoch in range(epochs):
        for _ in range(cfg.steps_per_epoch):
            eps = cfg.epsilon(total)
            a = act_epsilon_greedy(ens, s, eps, rng)
            res = env.step(a)
            s2 = view(res.observation) if view else res.observation
            store(learner.buffer, Transition(s, a, reward_sign * res.reward, s2, res.terminal), rng)
            total += 1
            if total % cfg.learn_every == 0:
                learn_step(learner, rng)
            if res.terminal:
                s = env.reset()
                s = view(s) if view else s
            else:
                s = s2
        returns, _, w = evaluate_value(ens, eval_env, cfg.eval_steps, cfg.eval_eps, rng, eval_view)
        score = float(np.mean(returns)) if returns else float("nan")
        eps = cfg.epsilon(total)
        curve.scores.append(score)
        curve.episodes.append(len(returns))
        curve.weights.append(w)
        curve.epsilons.append(eps)
        if logger is not None:
            row = {"epoch": epoch + 1, "score": score, "episodes": len(returns)}
            row.update({f"w_{i + 1}": float(v) for i, v in enumerate(w)})
            row["epsilon"] = eps
            logger(row)
    freeze_check(ens)
    return curve


def train_dqn_expert(env, cfg: ValueTrainConfig, epochs: int, rng=None, masked: bool = False,
                     reward_sign: float = 1.0, eval_env=None) -> tuple[Network, ValueCurve]:
    """Plain DQN: an ensemble with no experts, so the single attention weight is 1."""
    rng = np.random.default_rng(rng)
    ens = build_ensemble([], env.obs_dim, env.n_actions, "value", True, cfg.hidden, rng)
    curve = train_value(ens, env, cfg, epochs, rng=rng, masked=masked, reward_sign=reward_sign, eval_env=eval_env)
    return ens.base, curve
