"""Seeded episodic worlds: chain, discrete puddle world and occluded catch.

All environments expose the same small surface::

    obs = env.reset()
    res = env.step(action)     # StepResult(observation, reward, terminal, steps)

Observations are float vectors of fixed length.  Chain and puddle worlds
use a one-hot encoding of the state index; catch concatenates a ball plane
and a paddle plane (row-major, ``rows * cols`` entries each).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

KINDS = ("chain", "puddle1", "puddle2", "catch")
MASKS = ("none", "lower_left", "lower_right", "upper_half", "lower_half")

# puddle actions: north, south, east, west as (drow, dcol)
MOVES = np.array([(-1, 0), (1, 0), (0, 1), (0, -1)])


class EnvError(RuntimeError):
    """Contract violation, such as stepping a finished episode."""


class StepResult(NamedTuple):
    observation: np.ndarray
    reward: float
    terminal: bool
    steps: int


@dataclass
class EnvConfig:
    kind: str = "chain"
    # chain
    length: int = 21
    # chain and puddle: start states and goal; chain uses ints, puddle (row, col)
    starts: tuple = (0, 20)
    goal: object = 10
    # puddle and catch grid
    rows: int = 12
    cols: int = 12
    penalties: tuple = ()          # (row, col, penalty) triples
    step_reward: float = -0.05
    goal_reward: float = 10.0
    slip: float = 0.1
    # catch
    mask: str = "none"
    target_offset: int = 0         # paddle must sit this many columns right of the ball
    cap: int = 100
    reward_sign: float = 1.0
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown environment kind {self.kind!r}")
        if self.mask not in MASKS:
            raise ValueError(f"unknown mask region {self.mask!r}")
        if not 0.0 <= self.slip <= 1.0:
            raise ValueError("slip probability must lie in [0, 1]")
        if self.cap < 1:
            raise ValueError("episode cap must be positive")
        if self.kind == "chain":
            self.starts = tuple(int(s) for s in self.starts)
            self.goal = int(self.goal)
            if not 0 <= self.goal < self.length or not all(0 <= s < self.length for s in self.starts):
                raise ValueError("chain goal and starts must lie inside the chain")
        elif self.kind.startswith("puddle"):
            self.starts = tuple(tuple(int(v) for v in s) for s in self.starts)
            self.goal = tuple(int(v) for v in self.goal)
            self.penalties = tuple((int(r), int(c), float(p)) for r, c, p in self.penalties)
            for r, c in (self.goal,) + self.starts:
                if not (0 <= r < self.rows and 0 <= c < self.cols):
                    raise ValueError(f"cell {(r, c)} lies outside the {self.rows}x{self.cols} grid")
        elif self.rows < 3 or self.cols < 2:
            raise ValueError("catch needs at least 3 rows and 2 columns")
        if self.kind != "catch" and self.mask != "none":
            raise ValueError("mask regions only apply to catch")
        if not self.starts and self.kind != "catch":
            raise ValueError("start set must be nonempty")


def _rect(r0, r1, c0, c1, outer, inner):
    cells = []
    for r in range(r0, r1 + 1):
        for c in range(c0, c1 + 1):
            ring = r in (r0, r1) or c in (c0, c1)
            cells.append((r, c, outer if ring else inner))
    return cells


PUDDLE_PENALTIES = tuple(_rect(2, 6, 4, 8, -1.0, -2.0) + _rect(8, 11, 5, 7, -1.0, -2.0))


def chain_config(**kw) -> EnvConfig:
    return EnvConfig(**{"kind": "chain", "length": 21, "starts": (0, 20), "goal": 10, "cap": 100, **kw})


def puddle1_config(**kw) -> EnvConfig:
    base = dict(kind="puddle1", rows=12, cols=12, goal=(11, 11),
                starts=((0, 0), (0, 11), (11, 0), (0, 5)), penalties=PUDDLE_PENALTIES, cap=200)
    return EnvConfig(**{**base, **kw})


def puddle2_config(**kw) -> EnvConfig:
    base = dict(kind="puddle2", rows=12, cols=12, goal=(11, 11),
                starts=((0, 0), (11, 0)), penalties=PUDDLE_PENALTIES, cap=200)
    return EnvConfig(**{**base, **kw})


def catch_config(**kw) -> EnvConfig:
    return EnvConfig(**{"kind": "catch", "rows": 10, "cols": 10, "starts": (), "goal": 0,
                        "slip": 0.0, "cap": 100, **kw})


class _Env:
    n_actions: int
    obs_dim: int

    def __init__(self, config: EnvConfig, seed=None):
        self.config = config
        self.rng = np.random.default_rng(config.seed if seed is None else seed)
        self.steps = 0
        self.done = True

    def seed(self, seed) -> None:
        self.rng = np.random.default_rng(seed)

    def _check_action(self, action) -> int:
        if self.done:
            raise EnvError("step() called on a finished episode; call reset() first")
        a = int(action)
        if not 0 <= a < self.n_actions:
            raise ValueError(f"action {action} invalid for {self.n_actions} actions")
        return a

    def observe_masked(self) -> np.ndarray:
        raise EnvError(f"{self.config.kind} has no observation mask")


class _Tabular(_Env):
    n_states: int

    def observation_of(self, state: int) -> np.ndarray:
        x = np.zeros(self.n_states)
        x[state] = 1.0
        return x

    def observe(self) -> np.ndarray:
        return self.observation_of(self.state)


class ChainWorld(_Tabular):
    """Walk left or right along a line of states; reward 1/steps on reaching the goal."""

    n_actions = 2

    def __init__(self, config: EnvConfig, seed=None):
        super().__init__(config, seed)
        self.n_states = self.obs_dim = config.length
        self.state = config.starts[0]

    def reset(self) -> np.ndarray:
        starts = self.config.starts
        self.state = starts[self.rng.integers(len(starts))] if len(starts) > 1 else starts[0]
        self.steps = 0
        self.done = self.state == self.config.goal
        return self.observe()

    def step(self, action) -> StepResult:
        a = self._check_action(action)
        self.state = min(max(self.state + (1 if a == 1 else -1), 0), self.n_states - 1)
        self.steps += 1
        reward = 0.0
        if self.state == self.config.goal:
            reward = self.config.reward_sign / self.steps
            self.done = True
        elif self.steps >= self.config.cap:
            self.done = True
        return StepResult(self.observe(), reward, self.done, self.steps)


class PuddleWorld(_Tabular):
    """Grid with slippery moves, a +10 goal and penalised puddle cells."""

    n_actions = 4

    def __init__(self, config: EnvConfig, seed=None):
        super().__init__(config, seed)
        self.n_states = self.obs_dim = config.rows * config.cols
        self.cell_reward = np.full((config.rows, config.cols), config.step_reward)
        for r, c, p in config.penalties:
            self.cell_reward[r, c] = p
        self.pos = config.starts[0]
        self.goal = config.goal

    @property
    def state(self) -> int:
        return self.pos[0] * self.config.cols + self.pos[1]

    def reset(self) -> np.ndarray:
        starts = self.config.starts
        self.pos = starts[self.rng.integers(len(starts))] if len(starts) > 1 else starts[0]
        self.steps = 0
        self.done = self.pos == self.goal
        return self.observe()

    def step(self, action) -> StepResult:
        a = self._check_action(action)
        if self.config.slip > 0 and self.rng.random() < self.config.slip:
            a = int(self.rng.integers(4))
        dr, dc = MOVES[a]
        r = min(max(self.pos[0] + dr, 0), self.config.rows - 1)
        c = min(max(self.pos[1] + dc, 0), self.config.cols - 1)
        self.pos = (int(r), int(c))
        self.steps += 1
        if self.pos == self.goal:
            reward = self.config.goal_reward
            self.done = True
        else:
            reward = float(self.cell_reward[self.pos])
            self.done = self.steps >= self.config.cap
        return StepResult(self.observe(), self.config.reward_sign * reward, self.done, self.steps)


def mask_region(rows: int, cols: int, region: str) -> np.ndarray:
    """Boolean ``rows x cols`` array marking the cells hidden by ``region``."""
    m = np.zeros((rows, cols), dtype=bool)
    half_r, half_c = rows // 2, cols // 2
    if region == "lower_left":
        m[half_r:, :half_c] = True
    elif region == "lower_right":
        m[half_r:, half_c:] = True
    elif region == "upper_half":
        m[:half_r, :] = True
    elif region == "lower_half":
        m[half_r:, :] = True
    elif region != "none":
        raise ValueError(f"unknown mask region {region!r}")
    return m


def observation_keep(rows: int, cols: int, region: str) -> np.ndarray:
    """Multiplicative 0/1 vector that applies ``region`` to a catch observation."""
    keep = np.ones(2 * rows * cols)
    keep[: rows * cols] = ~mask_region(rows, cols, region).ravel()
    return keep


class Catch(_Env):
    """A ball falls one row per step and the paddle on the bottom row must meet it.

    The ball keeps a lateral drift in {-1, 0, +1} drawn at reset and bounces
    off the side walls.  The ball plane marks the current ball cell and the
    cell it occupied one step earlier, so a single observation carries the
    direction of travel.
    """

    n_actions = 3  # left, stay, right

    def __init__(self, config: EnvConfig, seed=None):
        super().__init__(config, seed)
        self.rows, self.cols = config.rows, config.cols
        self.obs_dim = 2 * self.rows * self.cols
        self.keep = observation_keep(self.rows, self.cols, config.mask)
        self.ball = (0, 0)
        self.prev = None
        self.drift = 0
        self.paddle = self.cols // 2

    def reset(self) -> np.ndarray:
        self.ball = (0, int(self.rng.integers(self.cols)))
        self.drift = int(self.rng.integers(3)) - 1
        self.prev = None
        self.paddle = self.cols // 2
        self.steps = 0
        self.done = False
        return self.observe()

    def observe(self) -> np.ndarray:
        x = np.zeros(self.obs_dim)
        x[self.ball[0] * self.cols + self.ball[1]] = 1.0
        if self.prev is not None:
            x[self.prev[0] * self.cols + self.prev[1]] = 1.0
        x[self.rows * self.cols + (self.rows - 1) * self.cols + self.paddle] = 1.0
        return x

    def observe_masked(self) -> np.ndarray:
        return self.observe() * self.keep

    @property
    def landing_column(self) -> int:
        """Column where the ball reaches the bottom row (valid once the episode ends)."""
        return self.ball[1]

    def step(self, action) -> StepResult:
        a = self._check_action(action)
        self.paddle = min(max(self.paddle + a - 1, 0), self.cols - 1)
        r, c = self.ball
        c += self.drift
        if c < 0 or c >= self.cols:
            self.drift = -self.drift
            c = -c if c < 0 else 2 * (self.cols - 1) - c
        self.prev = self.ball
        self.ball = (r + 1, c)
        self.steps += 1
        reward = 0.0
        if self.ball[0] == self.rows - 1:
            target = min(max(c + self.config.target_offset, 0), self.cols - 1)
            reward = 1.0 if self.paddle == target else -1.0
            self.done = True
        elif self.steps >= self.config.cap:
            self.done = True
        return StepResult(self.observe(), self.config.reward_sign * reward, self.done, self.steps)


def make_env(config: EnvConfig, seed=None):
    if config.kind == "chain":
        return ChainWorld(config, seed)
    if config.kind.startswith("puddle"):
        return PuddleWorld(config, seed)
    return Catch(config, seed)


def action_count(env) -> int:
    return env.n_actions


def observation_dim(env) -> int:
    return env.obs_dim


def with_seed(config: EnvConfig, seed) -> EnvConfig:
    return replace(config, seed=seed)
