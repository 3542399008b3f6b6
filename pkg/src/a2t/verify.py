"""Self-contained invariant checks behind ``a2t verify``.

Each check draws randomized instances from a fixed seed and returns
``(passed, detail)``.  The pytest suite covers the same ground in more
depth; this module exists so an installed package can audit itself.
"""

from __future__ import annotations

import numpy as np

from .approximator import (
    Network, backward, flatten, forward, from_bytes, init_network, log_prob_grad, to_bytes, unflatten,
)
from .core import attend, combine, grad_attention_logpi, grad_attention_qloss, member_outputs, random_ensemble
from .experts import negate_top_layer
from .value import ReplayBuffer, Transition, store


def _central(f, theta: np.ndarray, h: float = 1e-6) -> np.ndarray:
    g = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        g[i] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(a)), np.max(np.abs(b))))


def _random_net(rng, head) -> Network:
    sizes = [int(rng.integers(2, 5)), *[int(rng.integers(2, 6)) for _ in range(rng.integers(0, 3))],
             int(rng.integers(2, 4))]
    return init_network(sizes, head, rng)


def check_forward_gradient(n: int, rng) -> tuple[bool, str]:
    worst = 0.0
    for _ in range(n):
        net = _random_net(rng, str(rng.choice(["linear", "softmax"])))
        x = rng.normal(size=net.n_inputs)
        u = rng.normal(size=net.n_outputs)
        g = flatten(backward(net, x, u))
        num = _central(lambda t: float(forward(unflatten(t, net), x) @ u), flatten(net))
        worst = max(worst, _rel(g, num))
    return worst < 1e-4, f"max rel err {worst:.2e}"


def check_logpi_gradient(n: int, rng) -> tuple[bool, str]:
    worst = 0.0
    for _ in range(n):
        net = _random_net(rng, "softmax")
        x = rng.normal(size=net.n_inputs)
        a = int(rng.integers(net.n_outputs))
        g = flatten(log_prob_grad(net, x, a))
        num = _central(lambda t: float(np.log(forward(unflatten(t, net), x)[a])), flatten(net))
        worst = max(worst, _rel(g, num))
    return worst < 1e-4, f"max rel err {worst:.2e}"


def check_attention_gradients(n: int, rng) -> tuple[bool, str]:
    worst = 0.0
    for k in range(n):
        mode = "policy" if k % 2 == 0 else "value"
        ens = random_ensemble(rng, int(rng.integers(1, 4)), int(rng.integers(2, 5)), 3, mode, bool(rng.integers(2)))
        s = rng.normal(size=ens.obs_dim)
        a = int(rng.integers(3))
        K = member_outputs(ens, s)
        att = ens.attention
        if mode == "policy":
            g = flatten(grad_attention_logpi(ens, s, a))
            f = lambda t: float(np.log(forward(unflatten(t, att), s) @ K[:, a]))  # noqa: E731
        else:
            y = float(rng.normal())
            g = flatten(grad_attention_qloss(ens, s, a, y))
            f = lambda t: 0.5 * float((y - forward(unflatten(t, att), s) @ K[:, a]) ** 2)  # noqa: E731
        worst = max(worst, _rel(g, _central(f, flatten(att))))
    return worst < 1e-4, f"max rel err {worst:.2e}"


def check_simplex(n: int, rng) -> tuple[bool, str]:
    bad = 0
    for k in range(n):
        mode = "policy" if k % 2 == 0 else "value"
        ens = random_ensemble(rng, int(rng.integers(0, 4)) or 1, 3, 3, mode, bool(rng.integers(2)))
        S = rng.normal(scale=3.0, size=(8, 3))
        w = attend(ens, S)
        KT, _ = combine(ens, S)
        K = member_outputs(ens, S)
        ok = np.all(w >= 0) and np.allclose(w.sum(axis=1), 1.0, atol=1e-6)
        ok &= np.all(KT >= K.min(axis=1) - 1e-6) and np.all(KT <= K.max(axis=1) + 1e-6)
        if mode == "policy":
            ok &= np.allclose(KT.sum(axis=1), 1.0, atol=1e-6)
        bad += not ok
    return bad == 0, f"{bad} violations in {n} ensembles"


def check_replay(rng) -> tuple[bool, str]:
    buf = ReplayBuffer(5, 2)
    for i in range(8):
        buf.add(Transition(np.full(2, i), 0, 0.0, np.zeros(2), False))
    order = [int(t.state[0]) for t in buf.transitions()]
    ok = order == [3, 4, 5, 6, 7]
    sparse = ReplayBuffer(20_000, 1, rho=0.1)
    for _ in range(10_000):
        store(sparse, Transition(np.zeros(1), 0, 1.0, np.zeros(1), True), rng)
    ok &= abs(len(sparse) - 1000) <= 60
    return bool(ok), f"fifo order {order}, kept {len(sparse)} of 10000 at rho=0.1"


def check_round_trip(n: int, rng) -> tuple[bool, str]:
    bad = 0
    for _ in range(n):
        net = _random_net(rng, str(rng.choice(["linear", "softmax"])))
        back = from_bytes(to_bytes(net))
        bad += not (back == net and to_bytes(back) == to_bytes(net))
    return bad == 0, f"{bad} mismatches in {n} round trips"


def check_negation(n: int, rng) -> tuple[bool, str]:
    bad = 0
    for _ in range(n):
        net = _random_net(rng, "softmax")
        X = rng.normal(size=(16, net.n_inputs))
        p, q = forward(net, X), forward(negate_top_layer(net), X)
        bad += int(np.any(p.argmax(axis=1) != q.argmin(axis=1)))
    return bad == 0, f"{bad} order violations"


def run_checks(quick: bool = True, seed: int = 0, echo=print) -> bool:
    rng = np.random.default_rng(seed)
    n = 100 if quick else 500
    checks = [
        ("forward-gradient", lambda: check_forward_gradient(n, rng)),
        ("log-pi-gradient", lambda: check_logpi_gradient(n, rng)),
        ("attention-gradients", lambda: check_attention_gradients(n, rng)),
        ("simplex-and-convexity", lambda: check_simplex(10 * n, rng)),
        ("replay-fifo-and-sparsity", lambda: check_replay(rng)),
        ("model-round-trip", lambda: check_round_trip(n, rng)),
        ("negated-top-layer", lambda: check_negation(n, rng)),
    ]
    all_ok = True
    for name, fn in checks:
        ok, detail = fn()
        all_ok &= ok
        echo(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return bool(all_ok)
