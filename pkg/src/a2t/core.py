"""Soft attention over frozen source-task solutions plus a trainable base network.

The mixed solution for a state ``s`` is the convex combination

    K_T(s) = sum_i w_i(s) K_i(s)

over the frozen experts and (when present) the base network, with the
weights ``w(s)`` produced by a softmax-head attention network.  The base
network always occupies the last attention slot.  In ``policy`` mode every
member outputs a distribution over actions, in ``value`` mode a vector of
action values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .approximator import (
    Gradient, Network, ShapeError, backprop, backward, forward, forward_cache,
    init_network, load_model, save_model, softmax,
)

MODES = ("policy", "value")


class FreezeViolation(AssertionError):
    def __init__(self, index: int):
        super().__init__(f"expert {index} parameters changed after construction")
        self.index = index


@dataclass
class A2TEnsemble:
    experts: list[Network]
    base: Network | None
    attention: Network
    mode: str = "policy"
    expert_keeps: list[np.ndarray | None] = field(default_factory=list)
    checksums: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        head = "softmax" if self.mode == "policy" else "linear"
        members = self.members
        if not members:
            raise ValueError("ensemble needs at least one expert or a base network")
        for k, net in enumerate(members):
            if net.head != head:
                raise ValueError(f"member {k} has a {net.head} head but the ensemble is in {self.mode} mode")
            if net.n_inputs != self.attention.n_inputs or net.n_outputs != members[0].n_outputs:
                raise ShapeError(f"member {k} shape {net.sizes} incompatible with the ensemble")
        if self.attention.head != "softmax" or self.attention.n_outputs != len(members):
            raise ShapeError(f"attention network needs a softmax head with {len(members)} outputs")
        if not self.expert_keeps:
            self.expert_keeps = [None] * len(self.experts)
        if len(self.expert_keeps) != len(self.experts):
            raise ValueError("one observation mask (or None) per expert is required")
        if not self.checksums:
            self.checksums = [e.checksum() for e in self.experts]

    @property
    def members(self) -> list[Network]:
        return list(self.experts) + ([self.base] if self.base is not None else [])

    @property
    def n_experts(self) -> int:
        return len(self.experts)

    @property
    def n_members(self) -> int:
        return len(self.experts) + (self.base is not None)

    @property
    def n_actions(self) -> int:
        return self.members[0].n_outputs

    @property
    def obs_dim(self) -> int:
        return self.attention.n_inputs


def build_ensemble(experts, obs_dim: int, n_actions: int, mode: str = "policy", base: bool = True,
                   hidden=(32,), rng=None, expert_keeps=None, bias: bool = True) -> A2TEnsemble:
    """Fresh attention (and base) networks around the given frozen experts.

    ``bias=False`` zero-initialises the biases; on one-hot inputs with no
    hidden layer the networks are then per-state lookup tables.
    """
    rng = np.random.default_rng(rng)
    head = "softmax" if mode == "policy" else "linear"
    experts = list(experts)
    n_members = len(experts) + bool(base)
    attention = init_network([obs_dim, *hidden, n_members], "softmax", rng, bias)
    base_net = init_network([obs_dim, *hidden, n_actions], head, rng, bias) if base else None
    return A2TEnsemble(experts, base_net, attention, mode, list(expert_keeps or []))


def _batch(ens: A2TEnsemble, s) -> tuple[np.ndarray, bool]:
    s = np.asarray(s, dtype=float)
    single = s.ndim == 1
    S = s[None, :] if single else s
    if S.ndim != 2 or S.shape[1] != ens.obs_dim:
        raise ShapeError(f"expected observations of length {ens.obs_dim}, got shape {s.shape}")
    return S, single


def expert_outputs(ens: A2TEnsemble, S: np.ndarray) -> np.ndarray:
    """``(batch, n_experts, n_actions)`` outputs of the frozen experts."""
    out = np.empty((S.shape[0], ens.n_experts, ens.n_actions))
    for i, (net, keep) in enumerate(zip(ens.experts, ens.expert_keeps)):
        out[:, i] = forward(net, S if keep is None else S * keep)
    return out


def member_outputs(ens: A2TEnsemble, s, base: Network | None = None) -> np.ndarray:
    """Outputs of every member; ``base`` overrides the ensemble's base network."""
    S, single = _batch(ens, s)
    K = expert_outputs(ens, S)
    b = ens.base if base is None else base
    if b is not None:
        K = np.concatenate([K, forward(b, S)[:, None, :]], axis=1)
    return K[0] if single else K


def attend(ens: A2TEnsemble, s, attention: Network | None = None) -> np.ndarray:
    S, single = _batch(ens, s)
    w = forward(ens.attention if attention is None else attention, S)
    return w[0] if single else w


def mix(w: np.ndarray, K: np.ndarray) -> np.ndarray:
    """Per-action convex combination of member outputs."""
    return np.einsum("...m,...ma->...a", w, K)


def combine(ens: A2TEnsemble, s) -> tuple[np.ndarray, np.ndarray]:
    """Mixed solution and the attention weights that produced it."""
    w = attend(ens, s)
    K = member_outputs(ens, s)
    return mix(w, K), w


def grad_attention_logpi(ens: A2TEnsemble, s, a, K=None) -> Gradient:
    """Gradient of log pi_T(a|s) with respect to the attention parameters only.

    Expert and base outputs are constants here; the base network has its own
    update through log pi_B.  ``K`` may pass precomputed member outputs.
    """
    if ens.mode != "policy":
        raise ValueError("log-policy gradient needs a policy-mode ensemble")
    S, single = _batch(ens, s)
    a = np.atleast_1d(np.asarray(a))
    K = member_outputs(ens, S) if K is None else np.asarray(K).reshape(S.shape[0], ens.n_members, -1)
    acts = forward_cache(ens.attention, S)
    w = softmax(acts[-1])
    Ka = K[np.arange(len(a)), :, a]                       # (batch, members)
    pi = np.sum(w * Ka, axis=1, keepdims=True)
    dz = w * (Ka - pi) / pi
    return backprop(ens.attention, acts, dz)


def grad_attention_qloss(ens: A2TEnsemble, s, a, y, K=None) -> Gradient:
    """Gradient of 0.5 * (y - Q_T(s, a))**2 with respect to the attention parameters.

    Returned as the descent direction of the loss, i.e.
    ``-(y - Q_T) * dQ_T/dtheta_a``.  Batches are summed.
    """
    if ens.mode != "value":
        raise ValueError("Q-loss gradient needs a value-mode ensemble")
    S, single = _batch(ens, s)
    a = np.atleast_1d(np.asarray(a))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    K = member_outputs(ens, S) if K is None else np.asarray(K).reshape(S.shape[0], ens.n_members, -1)
    Ka = K[np.arange(len(a)), :, a]
    w = attend(ens, S)
    q = np.sum(w * Ka, axis=1)
    return backward(ens.attention, S, -(y - q)[:, None] * Ka)


def freeze_check(ens: A2TEnsemble) -> None:
    """Raise :class:`FreezeViolation` if any expert differs from its construction checksum."""
    for i, (net, digest) in enumerate(zip(ens.experts, ens.checksums)):
        if net.checksum() != digest:
            raise FreezeViolation(i)


def save_ensemble(ens: A2TEnsemble, directory) -> Path:
    """Write member models plus a JSON manifest; returns the manifest path."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    manifest = {"format": "a2t-ensemble/1", "mode": ens.mode, "experts": [], "base": None,
                "attention": "attention.a2t"}
    for i, (net, keep) in enumerate(zip(ens.experts, ens.expert_keeps)):
        name = f"expert_{i}.a2t"
        save_model(net, d / name)
        entry = {"file": name, "checksum": ens.checksums[i]}
        if keep is not None:
            entry["keep"] = [int(v) for v in keep]
        manifest["experts"].append(entry)
    if ens.base is not None:
        save_model(ens.base, d / "base.a2t")
        manifest["base"] = "base.a2t"
    save_model(ens.attention, d / "attention.a2t")
    path = d / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1))
    return path


def load_ensemble(manifest_path) -> A2TEnsemble:
    path = Path(manifest_path)
    meta = json.loads(path.read_text())
    d = path.parent

    def _load(name):
        f = d / name
        if not f.exists():
            raise FileNotFoundError(f"ensemble member file missing: {f}")
        return load_model(f)

    experts, keeps, sums = [], [], []
    for entry in meta["experts"]:
        net = _load(entry["file"])
        if net.checksum() != entry["checksum"]:
            raise ValueError(f"checksum mismatch for {d / entry['file']}")
        experts.append(net)
        keeps.append(np.array(entry["keep"], dtype=float) if "keep" in entry else None)
        sums.append(entry["checksum"])
    base = _load(meta["base"]) if meta["base"] else None
    return A2TEnsemble(experts, base, _load(meta["attention"]), meta["mode"], keeps, sums)


def random_ensemble(rng, n_experts: int, obs_dim: int, n_actions: int, mode: str = "policy",
                    base: bool = True, hidden=(8,)) -> A2TEnsemble:
    """Ensemble with randomly initialised experts; handy for property tests."""
    rng = np.random.default_rng(rng)
    head = "softmax" if mode == "policy" else "linear"
    experts = [init_network([obs_dim, *hidden, n_actions], head, rng) for _ in range(n_experts)]
    return build_ensemble(experts, obs_dim, n_actions, mode, base, hidden, rng)
