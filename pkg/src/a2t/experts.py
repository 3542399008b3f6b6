"""Building, evaluating and storing the source-task solutions used as experts.

Expert kinds:

* ``favorable``: trained to convergence on the given task.
* ``partial``: the same training with a truncated budget.
* ``masked``: a catch value expert that only ever sees ``observe_masked``.
* ``inverse_reward``: trained on the negated reward.
* ``negated_top_layer``: a copy of a trained donor with the final layer's
  weights and biases multiplied by -1.

A store directory holds one sub-directory per expert with ``model.a2t``,
``spec.cfg`` (the recipe plus checksum) and ``eval.csv``.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .approximator import ModelFormatError, Network, forward, load_model, save_model
from .config import (
    ConfigError, check_keys, coerce, dataclass_from_items, env_from_items, env_to_items, format_value,
    items_from_dataclass, read_config, write_config,
)
from .core import A2TEnsemble, build_ensemble
from .environments import EnvConfig, make_env, observation_keep
from .policy import PolicyTrainConfig, train_policy
from .value import ValueTrainConfig, act_epsilon_greedy, train_dqn_expert

EXPERT_KINDS = ("favorable", "partial", "masked", "inverse_reward", "negated_top_layer")
POLICY_ALGORITHMS = ("reinforce", "actor_critic")


class ExpertError(ValueError):
    """Invalid expert recipe or incompatible evaluation request."""


class ExpertCorruptionError(ValueError):
    """Stored expert does not match its recorded checksum or is unreadable."""


@dataclass
class ExpertSpec:
    name: str
    kind: str = "favorable"
    env: EnvConfig = field(default_factory=EnvConfig)
    mode: str = "value"                 # "policy" or "value"
    algorithm: str = "reinforce"        # policy experts only
    budget: int = 30                    # episodes (policy) or epochs (value)
    partial_fraction: float = 0.2
    seed: int = 0
    hidden: tuple = (32,)
    donor: str | None = None            # expert name, for negated_top_layer
    policy: PolicyTrainConfig = field(default_factory=PolicyTrainConfig)
    value: ValueTrainConfig = field(default_factory=ValueTrainConfig)
    eval_episodes: int = 200

    def __post_init__(self):
        if self.kind not in EXPERT_KINDS:
            raise ExpertError(f"unknown expert kind {self.kind!r}")
        if self.mode not in ("policy", "value"):
            raise ExpertError(f"unknown expert mode {self.mode!r}")
        if self.mode == "policy" and self.algorithm not in POLICY_ALGORITHMS:
            raise ExpertError(f"unknown policy algorithm {self.algorithm!r}")
        if self.kind == "masked":
            if self.env.kind != "catch":
                raise ExpertError("masked experts require the catch environment")
            if self.env.mask == "none":
                raise ExpertError("masked experts need a mask region")
            if self.mode != "value":
                raise ExpertError("masked experts are value experts")
        if self.kind == "negated_top_layer" and not self.donor:
            raise ExpertError("negated_top_layer needs a donor expert")
        if not 0.0 < self.partial_fraction <= 1.0:
            raise ExpertError("partial_fraction must lie in (0, 1]")
        if self.budget < 0:
            raise ExpertError("training budget must be non-negative")

    @property
    def train_budget(self) -> int:
        if self.kind == "partial":
            return max(int(round(self.budget * self.partial_fraction)), 0)
        return self.budget

    @property
    def keep(self) -> np.ndarray | None:
        if self.kind != "masked":
            return None
        return observation_keep(self.env.rows, self.env.cols, self.env.mask)


@dataclass
class ExpertRecord:
    network: Network
    spec: ExpertSpec
    score: float = float("nan")
    split: dict = field(default_factory=dict)
    checksum: str = ""

    def __post_init__(self):
        if not self.checksum:
            self.checksum = self.network.checksum()

    @property
    def name(self) -> str:
        return self.spec.name

    @property
    def mode(self) -> str:
        return self.spec.mode

    @property
    def keep(self) -> np.ndarray | None:
        return self.spec.keep

    def verify(self) -> None:
        if self.network.checksum() != self.checksum:
            raise ExpertCorruptionError(f"expert {self.name!r} no longer matches its checksum")


@dataclass
class Evaluation:
    mean: float
    returns: np.ndarray
    split: dict                  # region -> mean score (catch only)


# ---------------------------------------------------------------- constructors

def negate_top_layer(net: Network) -> Network:
    out = net.copy()
    out.weights[-1] *= -1.0
    out.biases[-1] *= -1.0
    return out


def direction_policy(n_states: int, action: int, strength: float = 2.0, n_actions: int = 2) -> Network:
    """Hand-coded chain policy preferring ``action`` everywhere.

    The logit gap ``strength`` sets how deterministic it is: 2 gives about
    0.88 on the preferred action with two actions.
    """
    W2 = np.zeros((n_actions, n_states))
    W2[action, :] = strength
    return Network([np.eye(n_states), W2], [np.zeros(n_states), np.zeros(n_actions)], "softmax")


def _train_policy_expert(spec: ExpertSpec, env_cfg: EnvConfig, budget: int) -> Network:
    rng = np.random.default_rng(spec.seed)
    env = make_env(env_cfg, seed=int(rng.integers(2**31)))
    ens = build_ensemble([], env.obs_dim, env.n_actions, "policy", True, spec.hidden, rng,
                         bias=spec.policy.train_bias)
    if budget > 0:
        train_policy(ens, env, spec.policy, budget, spec.algorithm, rng=rng)
    return ens.base


def _train_value_expert(spec: ExpertSpec, env_cfg: EnvConfig, budget: int, reward_sign: float) -> Network:
    rng = np.random.default_rng(spec.seed)
    env = make_env(env_cfg, seed=int(rng.integers(2**31)))
    eval_env = make_env(env_cfg, seed=int(rng.integers(2**31)))
    cfg = dataclasses.replace(spec.value, hidden=spec.hidden)
    net, _ = train_dqn_expert(env, cfg, budget, rng=rng, masked=spec.kind == "masked",
                              reward_sign=reward_sign, eval_env=eval_env)
    return net


def build_expert(spec: ExpertSpec, donor: ExpertRecord | None = None, evaluate: bool = True) -> ExpertRecord:
    """Train (or derive) the expert described by ``spec``.

    ``negated_top_layer`` needs the donor's record; it is not retrained.
    """
    if spec.kind == "negated_top_layer":
        if donor is None:
            raise ExpertError(f"negated_top_layer expert {spec.name!r} needs its donor {spec.donor!r}")
        if donor.mode != spec.mode:
            raise ExpertError("donor and negated expert must share a mode")
        net = negate_top_layer(donor.network)
    else:
        sign = -1.0 if spec.kind == "inverse_reward" else 1.0
        if spec.mode == "policy":
            env_cfg = dataclasses.replace(spec.env, reward_sign=spec.env.reward_sign * sign)
            net = _train_policy_expert(spec, env_cfg, spec.train_budget)
        else:
            net = _train_value_expert(spec, spec.env, spec.train_budget, sign)
    rec = ExpertRecord(net, spec)
    if evaluate and spec.eval_episodes > 0:
        ev = evaluate_expert(rec, spec.env, spec.eval_episodes, seed=spec.seed + 10_000)
        rec.score, rec.split = ev.mean, ev.split
    return rec


# ---------------------------------------------------------------- evaluation

def _standalone(rec: ExpertRecord, obs_dim: int) -> A2TEnsemble:
    att = Network([np.zeros((1, obs_dim))], [np.zeros(1)], "softmax")
    keeps = [rec.keep] if rec.keep is not None else []
    return A2TEnsemble([rec.network], None, att, rec.mode, keeps, [rec.checksum])


def evaluate_expert(rec: ExpertRecord, env_cfg: EnvConfig, episodes: int, seed=0, eps: float = 0.0) -> Evaluation:
    """Mean episode return of ``rec`` acting alone.

    Value experts act epsilon-greedily (greedy by default); policy experts
    sample.  On catch the returns are also split by landing side, ``left``
    meaning the ball lands in a column below ``cols // 2``.
    """
    if episodes <= 0:
        raise ExpertError("evaluation needs at least one episode")
    if rec.network.n_inputs != _obs_dim(env_cfg):
        raise ExpertError(f"expert {rec.name!r} expects {rec.network.n_inputs} inputs, "
                          f"{env_cfg.kind} provides {_obs_dim(env_cfg)}")
    rng = np.random.default_rng(seed)
    env = make_env(env_cfg, seed=int(rng.integers(2**31)))
    ens = _standalone(rec, env.obs_dim)
    returns, landing = [], []
    for _ in range(episodes):
        s = env.reset()
        total, done = 0.0, env.done
        while not done:
            if rec.mode == "value":
                a = act_epsilon_greedy(ens, s, eps, rng)
            else:
                x = s if rec.keep is None else s * rec.keep
                p = _policy_probs(rec.network, x)
                a = int(rng.choice(len(p), p=p))
            res = env.step(a)
            total += res.reward
            s, done = res.observation, res.terminal
        returns.append(total)
        landing.append(getattr(env, "landing_column", -1))
    returns = np.asarray(returns)
    split = {}
    if env_cfg.kind == "catch":
        land = np.asarray(landing)
        left = land < env_cfg.cols // 2
        split = {side: float(returns[m].mean()) if m.any() else float("nan")
                 for side, m in (("left", left), ("right", ~left))}
    return Evaluation(float(returns.mean()), returns, split)


def _policy_probs(net: Network, x) -> np.ndarray:
    p = forward(net, x)
    return p / p.sum()


def _obs_dim(cfg: EnvConfig) -> int:
    if cfg.kind == "chain":
        return cfg.length
    if cfg.kind == "catch":
        return 2 * cfg.rows * cfg.cols
    return cfg.rows * cfg.cols


# ---------------------------------------------------------------- persistence

_SPEC_SCALARS = ("kind", "mode", "algorithm", "budget", "partial_fraction", "seed", "hidden", "donor",
                 "eval_episodes")


def spec_to_sections(spec: ExpertSpec) -> dict:
    defaults = ExpertSpec(name=spec.name)
    exp = {"name": spec.name}
    for k in _SPEC_SCALARS:
        v = getattr(spec, k)
        if k in ("kind", "mode") or v != getattr(defaults, k):
            exp[k] = format_value(v)
    sections = {"expert": exp, "env": env_to_items(spec.env)}
    if spec.mode == "policy":
        sections["policy"] = items_from_dataclass(spec.policy)
    else:
        sections["value"] = items_from_dataclass(spec.value)
    return sections


def spec_from_config(cp, source: str = "spec") -> ExpertSpec:
    allowed = {"expert", "env", "policy", "value", "record"}
    extra = sorted(set(cp.sections()) - allowed)
    if extra:
        raise ConfigError(f"{source}: unknown section(s): {', '.join(extra)}")
    if not cp.has_section("expert"):
        raise ConfigError(f"{source}: missing [expert] section")
    items = dict(cp["expert"])
    check_keys("expert", items, ("name",) + _SPEC_SCALARS)
    if "name" not in items:
        raise ConfigError(f"{source}: [expert] needs a name")
    defaults = ExpertSpec(name=items["name"])
    kw = {"name": items.pop("name").strip()}
    for k, v in items.items():
        kw[k] = coerce(v, getattr(defaults, k), f"expert.{k}")
    if kw.get("donor") is not None:
        kw["donor"] = str(kw["donor"])
    kw["env"] = env_from_items(dict(cp["env"])) if cp.has_section("env") else EnvConfig()
    if cp.has_section("policy"):
        kw["policy"] = dataclass_from_items(PolicyTrainConfig, dict(cp["policy"]), "policy")
    if cp.has_section("value"):
        kw["value"] = dataclass_from_items(ValueTrainConfig, dict(cp["value"]), "value")
    try:
        return ExpertSpec(**kw)
    except ExpertError as e:
        raise ConfigError(f"{source}: {e}") from None


def load_spec(path) -> ExpertSpec:
    return spec_from_config(read_config(path), str(path))


def save_expert(rec: ExpertRecord, store) -> Path:
    """Write ``<store>/<name>/{model.a2t, spec.cfg, eval.csv}``; returns the directory."""
    rec.verify()
    d = Path(store) / rec.name
    d.mkdir(parents=True, exist_ok=True)
    save_model(rec.network, d / "model.a2t")
    sections = spec_to_sections(rec.spec)
    sections["record"] = {"model": "model.a2t", "checksum": rec.checksum, "score": repr(float(rec.score))}
    write_config(d / "spec.cfg", sections)
    with (d / "eval.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        w.writerow(["mean_score", repr(float(rec.score))])
        for side, v in sorted(rec.split.items()):
            w.writerow([f"score_{side}", repr(float(v))])
    return d


def load_expert(path) -> ExpertRecord:
    """Load an expert directory (or its ``spec.cfg``) and verify the checksum."""
    path = Path(path)
    d = path.parent if path.is_file() else path
    cfg_path = d / "spec.cfg"
    if not cfg_path.exists():
        raise FileNotFoundError(f"expert manifest missing: {cfg_path}")
    cp = read_config(cfg_path)
    spec = spec_from_config(cp, str(cfg_path))
    if not cp.has_section("record"):
        raise ExpertCorruptionError(f"{cfg_path} has no [record] section")
    record = dict(cp["record"])
    model_path = d / record.get("model", "model.a2t")
    if not model_path.exists():
        raise FileNotFoundError(f"expert model file missing: {model_path}")
    try:
        net = load_model(model_path)
    except ModelFormatError as e:
        raise ExpertCorruptionError(f"{model_path}: {e}") from None
    digest = net.checksum()
    if digest != record.get("checksum"):
        raise ExpertCorruptionError(f"{model_path}: checksum mismatch")
    split = {}
    ev_path = d / "eval.csv"
    if ev_path.exists():
        with ev_path.open() as fh:
            for row in csv.DictReader(fh):
                if row["metric"].startswith("score_"):
                    split[row["metric"][6:]] = float(row["value"])
    return ExpertRecord(net, spec, float(record.get("score", "nan")), split, digest)


def load_store(store, names) -> list[ExpertRecord]:
    store = Path(store)
    out = []
    for name in names:
        d = store / name
        if not d.is_dir():
            raise FileNotFoundError(f"expert {name!r} not found in store {store} (looked for {d})")
        out.append(load_expert(d))
    return out


def build_from_file(spec_path, store) -> ExpertRecord:
    """Build the expert described by a spec file and save it into ``store``."""
    spec = load_spec(spec_path)
    donor = None
    if spec.kind == "negated_top_layer":
        donor_dir = Path(store) / spec.donor
        if not donor_dir.is_dir():
            donor_spec = Path(spec_path).parent / f"{spec.donor}.cfg"
            if not donor_spec.exists():
                raise FileNotFoundError(f"donor expert {spec.donor!r} not found in {store} or as {donor_spec}")
            build_from_file(donor_spec, store)
        donor = load_expert(donor_dir)
    rec = build_expert(spec, donor)
    save_expert(rec, store)
    return rec
