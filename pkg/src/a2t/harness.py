"""Config-driven experiments: multi-seed runs, CSV metrics, SVG plots and suites.

An experiment file has an ``[experiment]`` section, an ``[env]`` section and
one of ``[policy]`` or ``[value]`` holding training hyper-parameters::

    [experiment]
    name = chain_selective
    algorithm = ReinforceA2T
    experts = L1, L2
    expert_store = ../experts
    seeds = 0, 1, 2
    budget = 2000
    output = ../results/chain_selective

    [env]
    kind = chain

    [policy]
    lr_attention = 1.0

Relative paths are resolved against the config file's directory.  Every
configured seed is shifted by the integer in ``A2T_SEED_OFFSET`` when set.

Per-seed CSV columns (policy): ``episode, return, length, w_1..w_M``.
Per-seed CSV columns (value): ``epoch, score, episodes, w_1..w_M, epsilon``.
``averaged.csv`` holds the column-wise mean over seeds plus ``score_min``
and ``score_max``.  Wall-clock time goes to ``timing.csv`` only, so the
metric files are bit-identical across reruns.
"""

from __future__ import annotations

import csv
import dataclasses
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import svg
from .config import (
    ConfigError, check_keys, coerce, dataclass_from_items, env_from_items, format_value, read_config,
)
from .core import A2TEnsemble, attend, build_ensemble, freeze_check
from .environments import EnvConfig, chain_config, make_env
from .experts import ExpertRecord, load_store
from .policy import PolicyTrainConfig, rollout, train_policy
from .value import ValueTrainConfig, train_value

ALGORITHMS = {
    "reinforcea2t": "reinforce_a2t",
    "actorcritica2t": "actor_critic_a2t",
    "qlearninga2t": "q_learning_a2t",
    "scratchbaseline": "scratch",
    "finetunebaseline": "fine_tune",
}
LEARNERS = ("reinforce", "actor_critic", "q_learning")
SEED_ENV = "A2T_SEED_OFFSET"


class ExperimentError(RuntimeError):
    """An experiment could not be set up or run."""


def canonical_algorithm(name: str) -> str:
    key = name.replace("_", "").replace("-", "").lower()
    if key in ALGORITHMS:
        return ALGORITHMS[key]
    if name in ALGORITHMS.values():
        return name
    raise ConfigError(f"unknown algorithm {name!r}; expected one of "
                      "ReinforceA2T, ActorCriticA2T, QLearningA2T, ScratchBaseline, FineTuneBaseline")


def seed_offset() -> int:
    raw = os.environ.get(SEED_ENV, "").strip()
    if not raw:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


@dataclass
class ExperimentConfig:
    name: str
    algorithm: str = "reinforce_a2t"
    learner: str | None = None          # scratch / fine_tune: which learning rule
    env: EnvConfig = field(default_factory=chain_config)
    experts: tuple = ()
    expert_store: Path = Path("experts")
    seeds: tuple = (0,)
    budget: int = 100                   # episodes (policy) or epochs (value)
    output: Path = Path("results")
    base: bool = True
    hidden: tuple = (32,)
    bias: bool = True
    threshold: float | None = None
    window: int = 20                    # moving-average width for policy thresholds
    final_fraction: float = 0.1         # tail of the curve averaged into the final score
    eval_episodes: int = 0              # policy runs: extra evaluation episodes after training
    policy: PolicyTrainConfig = field(default_factory=PolicyTrainConfig)
    value: ValueTrainConfig = field(default_factory=ValueTrainConfig)

    def __post_init__(self):
        self.algorithm = canonical_algorithm(self.algorithm)
        self.experts = tuple(self.experts)
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.algorithm in ("scratch", "fine_tune"):
            if self.learner not in LEARNERS:
                raise ConfigError(f"{self.algorithm} needs learner = one of {', '.join(LEARNERS)}")
        elif self.learner is not None:
            raise ConfigError("learner only applies to ScratchBaseline and FineTuneBaseline")
        if self.algorithm == "scratch" and self.experts:
            raise ConfigError("ScratchBaseline takes no experts")
        if self.algorithm == "fine_tune" and len(self.experts) != 1:
            raise ConfigError("FineTuneBaseline needs exactly one expert to start from")
        if self.algorithm == "q_learning_a2t" and not self.base and not self.experts:
            raise ConfigError("an ensemble needs experts or a base network")
        if self.budget < 0 or self.window < 1:
            raise ConfigError("budget must be non-negative and window positive")

    @property
    def rule(self) -> str:
        """The learning rule: reinforce, actor_critic or q_learning."""
        return {"reinforce_a2t": "reinforce", "actor_critic_a2t": "actor_critic",
                "q_learning_a2t": "q_learning"}.get(self.algorithm, self.learner)

    @property
    def mode(self) -> str:
        return "value" if self.rule == "q_learning" else "policy"

    @property
    def run_seeds(self) -> tuple:
        off = seed_offset()
        return tuple(s + off for s in self.seeds)


_EXPERIMENT_KEYS = ("name", "algorithm", "learner", "experts", "expert_store", "seeds", "budget", "output",
                    "base", "hidden", "bias", "threshold", "window", "final_fraction", "eval_episodes")


def config_from_parser(cp, root: Path, source: str = "config") -> ExperimentConfig:
    extra = sorted(set(cp.sections()) - {"experiment", "env", "policy", "value"})
    if extra:
        raise ConfigError(f"{source}: unknown section(s): {', '.join(extra)}")
    if not cp.has_section("experiment"):
        raise ConfigError(f"{source}: missing [experiment] section")
    items = dict(cp["experiment"])
    check_keys("experiment", items, _EXPERIMENT_KEYS)
    if "name" not in items:
        raise ConfigError(f"{source}: [experiment] needs a name")
    defaults = ExperimentConfig(name="x")
    kw = {}
    for k, v in items.items():
        if k == "name":
            kw[k] = v.strip()
        elif k == "experts":
            kw[k] = tuple(n.strip() for n in v.split(",") if n.strip())
        elif k in ("expert_store", "output"):
            kw[k] = (root / v.strip()).resolve() if not Path(v.strip()).is_absolute() else Path(v.strip())
        elif k == "algorithm":
            kw[k] = v.strip()
        elif k == "learner":
            kw[k] = None if v.strip().lower() == "none" else v.strip()
        elif k == "seeds":
            kw[k] = tuple(int(s) for s in v.replace(";", ",").split(",") if s.strip())
        else:
            kw[k] = coerce(v, getattr(defaults, k), f"experiment.{k}")
    kw.setdefault("output", (root / "results" / kw["name"]).resolve())
    kw.setdefault("expert_store", (root / "experts").resolve())
    if cp.has_section("env"):
        kw["env"] = env_from_items(dict(cp["env"]))
    if cp.has_section("policy"):
        kw["policy"] = dataclass_from_items(PolicyTrainConfig, dict(cp["policy"]), "policy")
    if cp.has_section("value"):
        kw["value"] = dataclass_from_items(ValueTrainConfig, dict(cp["value"]), "value")
    try:
        cfg = ExperimentConfig(**kw)
    except ConfigError as e:
        raise ConfigError(f"{source}: {e}") from None
    if cfg.mode == "policy" and cp.has_section("value") or cfg.mode == "value" and cp.has_section("policy"):
        raise ConfigError(f"{source}: [{'value' if cfg.mode == 'policy' else 'policy'}] section does not "
                          f"apply to a {cfg.mode} experiment")
    return cfg


def load_experiment(path) -> ExperimentConfig:
    path = Path(path)
    return config_from_parser(read_config(path), path.parent.resolve(), str(path))


# ---------------------------------------------------------------- single runs

@dataclass
class RunResult:
    seed: int
    columns: list
    rows: list
    ensemble: A2TEnsemble
    seconds: float
    evaluation: dict = field(default_factory=dict)

    @property
    def scores(self) -> np.ndarray:
        key = "return" if "return" in self.columns else "score"
        return np.array([r[key] for r in self.rows], dtype=float)


def _check_experts(cfg: ExperimentConfig, experts: list[ExpertRecord], obs_dim: int, n_actions: int):
    for rec in experts:
        if rec.mode != cfg.mode:
            raise ExperimentError(f"expert {rec.name!r} is a {rec.mode} expert but {cfg.name!r} "
                                  f"is a {cfg.mode} experiment")
        net = rec.network
        if net.n_inputs != obs_dim or net.n_outputs != n_actions:
            raise ExperimentError(f"expert {rec.name!r} has shape {net.sizes}, environment needs "
                                  f"{obs_dim} inputs and {n_actions} outputs")


def build_run_ensemble(cfg: ExperimentConfig, experts: list[ExpertRecord], obs_dim: int, n_actions: int,
                       rng) -> A2TEnsemble:
    if cfg.algorithm == "scratch":
        return build_ensemble([], obs_dim, n_actions, cfg.mode, True, cfg.hidden, rng, bias=cfg.bias)
    if cfg.algorithm == "fine_tune":
        ens = build_ensemble([], obs_dim, n_actions, cfg.mode, True, cfg.hidden, rng, bias=cfg.bias)
        ens.base = experts[0].network.copy()
        return ens
    nets = [e.network for e in experts]
    keeps = [e.keep for e in experts]
    ens = build_ensemble(nets, obs_dim, n_actions, cfg.mode, cfg.base, cfg.hidden, rng, keeps, bias=cfg.bias)
    ens.checksums = [e.checksum for e in experts]
    return ens


def run_seed(cfg: ExperimentConfig, seed: int, experts: list[ExpertRecord] | None = None) -> RunResult:
    """Train one seed and return its metric rows (nothing is written)."""
    if experts is None:
        experts = load_store(cfg.expert_store, cfg.experts) if cfg.experts else []
    rng = np.random.default_rng(seed)
    env = make_env(cfg.env, seed=int(rng.integers(2**31)))
    eval_env = make_env(cfg.env, seed=int(rng.integers(2**31)))
    _check_experts(cfg, experts, env.obs_dim, env.n_actions)
    ens = build_run_ensemble(cfg, experts, env.obs_dim, env.n_actions, rng)
    m = ens.n_members
    wcols = [f"w_{i + 1}" for i in range(m)]
    rows = []
    start = time.perf_counter()
    evaluation = {}
    if cfg.mode == "policy":
        columns = ["episode", "return", "length"] + wcols
        train_policy(ens, env, cfg.policy, cfg.budget, cfg.rule, logger=rows.append, rng=rng)
        if cfg.eval_episodes > 0:
            traces = [rollout(ens, eval_env, rng, cfg.policy.cap) for _ in range(cfg.eval_episodes)]
            evaluation = {"eval_return": float(np.mean([t.episode_return() for t in traces])),
                          "eval_length": float(np.mean([t.length for t in traces]))}
    else:
        columns = ["epoch", "score", "episodes"] + wcols + ["epsilon"]
        train_value(ens, env, cfg.value, cfg.budget, logger=rows.append, rng=rng, eval_env=eval_env)
    for e in experts:
        e.verify()
    freeze_check(ens)
    return RunResult(seed, columns, rows, ens, time.perf_counter() - start, evaluation)


# ---------------------------------------------------------------- metrics

def episodes_to_threshold(scores, threshold: float | None, window: int = 1) -> int | None:
    """1-based count of episodes (or epochs) until the moving average first reaches ``threshold``."""
    if threshold is None:
        return None
    s = np.asarray(scores, dtype=float)
    if len(s) < window:
        return None
    avg = np.convolve(s, np.ones(window) / window, mode="valid")
    hit = np.nonzero(avg >= threshold)[0]
    return int(hit[0]) + window if hit.size else None


def final_score(scores, fraction: float = 0.1) -> float:
    s = np.asarray(scores, dtype=float)
    if s.size == 0:
        return float("nan")
    k = max(int(round(len(s) * fraction)), 1)
    return float(np.mean(s[-k:]))


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_rows(path, columns, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])
    return path


def read_rows(path) -> tuple[list, np.ndarray]:
    with Path(path).open() as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = [[float(x) for x in row] for row in reader]
    return header, np.array(data, dtype=float).reshape(-1, len(header))


def average_rows(results: list[RunResult]) -> tuple[list, list]:
    """Column-wise mean over seeds, truncated to the shortest run, plus score bands."""
    columns = results[0].columns
    n = min(len(r.rows) for r in results)
    key = "return" if "return" in columns else "score"
    out = []
    for i in range(n):
        row = {}
        for c in columns:
            vals = [r.rows[i][c] for r in results]
            row[c] = vals[0] if c in ("episode", "epoch") else float(np.mean(vals))
        vals = [r.rows[i][key] for r in results]
        row["score_min"], row["score_max"] = float(np.min(vals)), float(np.max(vals))
        out.append(row)
    return columns + ["score_min", "score_max"], out


def attention_table(ens: A2TEnsemble, env) -> np.ndarray:
    """Final attention weights for every state of a tabular environment, ``(states, members)``."""
    n = getattr(env, "n_states", None)
    if n is None:
        raise ValueError(f"{type(env).__name__} has no enumerable state space")
    obs = np.stack([env.observation_of(s) for s in range(n)])
    return attend(ens, obs)


def emit_attention_heatmap(weights, path, title: str = "attention per state", labels=None) -> Path:
    """Write a states-by-members heat map of attention weights as SVG."""
    w = np.asarray(weights, dtype=float)
    if w.size == 0:
        raise ValueError("no attention weights to plot")
    if w.ndim != 2:
        raise ValueError("attention weights must be a (states, members) array")
    return svg.write(path, svg.heatmap(w, col_labels=labels, title=title))


# ---------------------------------------------------------------- experiments

def _summary_row(cfg: ExperimentConfig, res: RunResult) -> dict:
    window = cfg.window if cfg.mode == "policy" else 1
    ett = episodes_to_threshold(res.scores, cfg.threshold, window)
    row = {"seed": res.seed, "final_score": final_score(res.scores, cfg.final_fraction),
           "to_threshold": -1 if ett is None else ett, "censored": int(ett is None and cfg.threshold is not None)}
    w = np.array([[r[c] for c in res.columns if c.startswith("w_")] for r in res.rows])
    if w.size:
        k = max(int(round(len(w) * 0.2)), 1)
        for i, v in enumerate(w[-k:].mean(axis=0)):
            row[f"w_{i + 1}_last20"] = float(v)
    row.update(res.evaluation)
    return row


def run_experiment(cfg: ExperimentConfig, experts: list[ExpertRecord] | None = None) -> Path:
    """Run every seed, write per-seed and averaged CSVs plus SVG plots; returns the output dir."""
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    if experts is None:
        experts = load_store(cfg.expert_store, cfg.experts) if cfg.experts else []
    results = []
    timing = []
    for seed in cfg.run_seeds:
        res = run_seed(cfg, seed, experts)
        write_rows(out / f"seed_{seed}.csv", res.columns, res.rows)
        timing.append({"seed": seed, "seconds": res.seconds})
        results.append(res)
        env = make_env(cfg.env, seed=0)
        if hasattr(env, "n_states"):
            table = attention_table(res.ensemble, env)
            cols = [f"w_{i + 1}" for i in range(table.shape[1])]
            write_rows(out / f"attention_seed_{seed}.csv", ["state"] + cols,
                       [{"state": s, **{c: float(v) for c, v in zip(cols, table[s])}} for s in range(len(table))])
            emit_attention_heatmap(table, out / f"attention_seed_{seed}.svg",
                                   f"{cfg.name}: attention per state (seed {seed})",
                                   _member_labels(cfg, table.shape[1]))
    columns, avg = average_rows(results)
    write_rows(out / "averaged.csv", columns, avg)
    summary = [_summary_row(cfg, r) for r in results]
    keys = list(dict.fromkeys(k for row in summary for k in row))
    write_rows(out / "summary.csv", keys, [{k: row.get(k, float("nan")) for k in keys} for row in summary])
    write_rows(out / "timing.csv", ["seed", "seconds"], timing)
    plot_results(out, cfg.name, _member_labels(cfg, results[0].ensemble.n_members))
    return out


def _member_labels(cfg: ExperimentConfig, n: int) -> list:
    names = list(cfg.experts) if cfg.algorithm not in ("scratch", "fine_tune") else []
    names = names[: n]
    if len(names) < n:
        names.append("base")
    return names


def plot_results(directory, title: str | None = None, labels=None) -> list[Path]:
    """(Re)draw ``curves.svg`` and ``attention.svg`` from ``averaged.csv`` in ``directory``."""
    d = Path(directory)
    src = d / "averaged.csv"
    if not src.exists():
        raise FileNotFoundError(f"no averaged.csv in {d}")
    header, data = read_rows(src)
    if data.size == 0:
        raise ValueError(f"{src} has no rows")
    title = title or d.name
    xcol = header[0]
    x = data[:, 0]
    key = "return" if "return" in header else "score"
    y = data[:, header.index(key)]
    lo, hi = data[:, header.index("score_min")], data[:, header.index("score_max")]
    written = [svg.write(d / "curves.svg", svg.line_chart({f"mean {key}": (x, y, lo, hi)}, f"{title}: learning curve",
                                                          xlabel=xcol, ylabel=key))]
    wcols = [c for c in header if c.startswith("w_")]
    if wcols:
        labels = labels if labels is not None and len(labels) == len(wcols) else wcols
        series = {lab: (x, data[:, header.index(c)]) for lab, c in zip(labels, wcols)}
        written.append(svg.write(d / "attention.svg", svg.line_chart(series, f"{title}: attention weights",
                                                                     xlabel=xcol, ylabel="mean weight")))
    for f in sorted(d.glob("attention_seed_*.csv")):
        h, t = read_rows(f)
        written.append(emit_attention_heatmap(t[:, 1:], f.with_suffix(".svg"), f"{title}: attention per state",
                                              labels if labels is not None and len(labels) == t.shape[1] - 1 else None))
    return written


# ---------------------------------------------------------------- suites

@dataclass
class SuiteResult:
    rows: list
    failed: list

    @property
    def ok(self) -> bool:
        return not self.failed


SUITE_COLUMNS = ["experiment", "algorithm", "status", "final_score", "to_threshold", "censored",
                 "ratio_to_scratch", "output", "error"]


def _mean_or_nan(vals):
    vals = [v for v in vals if v == v]
    return float(np.mean(vals)) if vals else float("nan")


def run_suite(paths, summary_path=None) -> SuiteResult:
    """Run experiment files in order; a failing one is recorded and the rest still run.

    ``to_threshold`` is the seed mean with unreached seeds censored at the
    budget.  ``ratio_to_scratch`` divides by the first ScratchBaseline of the
    suite.
    """
    rows, failed = [], []
    for p in [Path(p) for p in paths]:
        row = {c: "" for c in SUITE_COLUMNS}
        row["experiment"] = p.stem
        try:
            cfg = load_experiment(p)
            row["experiment"], row["algorithm"] = cfg.name, cfg.algorithm
            out = run_experiment(cfg)
            header, data = read_rows(out / "summary.csv")
            fs = data[:, header.index("final_score")]
            tt = data[:, header.index("to_threshold")]
            cens = data[:, header.index("censored")]
            tt = np.where(tt < 0, cfg.budget, tt)
            row.update(status="ok", final_score=_mean_or_nan(fs),
                       to_threshold=float(np.mean(tt)) if cfg.threshold is not None else float("nan"),
                       censored=int(cens.sum()), output=str(out))
        except Exception as e:  # noqa: BLE001 - any failure marks the suite failed
            row.update(status="failed", error=f"{type(e).__name__}: {e}")
            failed.append(str(p))
        rows.append(row)
    scratch = next((r for r in rows if r["algorithm"] == "scratch" and r["status"] == "ok"), None)
    for r in rows:
        if scratch is not None and r["status"] == "ok" and scratch["to_threshold"] == scratch["to_threshold"]:
            r["ratio_to_scratch"] = r["to_threshold"] / scratch["to_threshold"]
        else:
            r["ratio_to_scratch"] = float("nan")
    if summary_path is not None:
        path = Path(summary_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SUITE_COLUMNS)
            for r in rows:
                w.writerow([format_value(r[c]) if isinstance(r[c], float) else r[c] for c in SUITE_COLUMNS])
    return SuiteResult(rows, failed)


def suite_paths(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"suite directory not found: {d}")
    return sorted(p for p in d.glob("*.cfg"))


def replace_config(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    return dataclasses.replace(cfg, **kw)
