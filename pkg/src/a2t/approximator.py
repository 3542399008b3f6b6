"""Small dense feedforward networks with hand-written backpropagation.

Every network here is a stack of fully connected layers with rectifier
hidden units and either a linear or a softmax output head.  Inputs may be a
single observation (1-D) or a batch (2-D, one row per observation); the
gradient routines sum over the batch, so callers that want a batch mean
scale the upstream signal themselves.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

HEADS = ("linear", "softmax")
MAGIC = b"A2T1"
_HEAD_TAGS = {"linear": 0, "softmax": 1}


class ShapeError(ValueError):
    """Raised when an input, upstream signal or parameter set has the wrong shape."""


class ModelFormatError(ValueError):
    """Raised when a serialized model cannot be decoded."""


@dataclass
class Network:
    """Weights are stored as ``(out, in)`` matrices, one bias vector per layer."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    head: str = "linear"

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"unknown output head {self.head!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("need one bias per weight matrix and at least one layer")
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ShapeError(f"layer {k}: weight {W.shape} and bias {b.shape} disagree")
            if k and W.shape[1] != self.weights[k - 1].shape[0]:
                raise ShapeError(f"layer {k} input {W.shape[1]} != layer {k - 1} output")

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_outputs(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def sizes(self) -> list[int]:
        return [self.n_inputs] + [W.shape[0] for W in self.weights]

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def copy(self) -> "Network":
        return Network([W.copy() for W in self.weights], [b.copy() for b in self.biases], self.head)

    def flatten(self) -> np.ndarray:
        return flatten(self)

    def checksum(self) -> str:
        return hashlib.sha256(to_bytes(self)).hexdigest()

    def __eq__(self, other):
        if not isinstance(other, Network) or self.head != other.head:
            return False
        if self.sizes != other.sizes:
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.weights + self.biases, other.weights + other.biases))


@dataclass
class Gradient:
    """Partial derivatives laid out exactly like the parameters of a :class:`Network`."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def zeros_like(cls, net: Network) -> "Gradient":
        return cls([np.zeros_like(W) for W in net.weights], [np.zeros_like(b) for b in net.biases])

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def norm(self) -> float:
        return float(np.sqrt(sum(np.sum(a * a) for a in self.weights + self.biases)))

    def scaled(self, c: float) -> "Gradient":
        return Gradient([c * W for W in self.weights], [c * b for b in self.biases])

    def __add__(self, other: "Gradient") -> "Gradient":
        return Gradient(
            [a + b for a, b in zip(self.weights, other.weights)],
            [a + b for a, b in zip(self.biases, other.biases)],
        )

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.weights + self.biases)


def init_network(sizes: Sequence[int], head: str = "linear", rng=None, bias: bool = True) -> Network:
    """Uniform initialisation in +-1/sqrt(fan_in) for every weight and bias.

    With ``bias=False`` the biases start at zero (pair with an optimizer whose
    ``train_bias`` is off to keep them there).
    """
    if len(sizes) < 2:
        raise ShapeError("need at least input and output sizes")
    rng = np.random.default_rng(rng)
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(n_in)
        weights.append(rng.uniform(-bound, bound, size=(n_out, n_in)))
        b = rng.uniform(-bound, bound, size=n_out)
        biases.append(b if bias else np.zeros(n_out))
    return Network(weights, biases, head)


def zeros_network(sizes: Sequence[int], head: str = "linear") -> Network:
    return Network(
        [np.zeros((o, i)) for i, o in zip(sizes[:-1], sizes[1:])],
        [np.zeros(o) for o in sizes[1:]],
        head,
    )


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _as_batch(net: Network, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != net.n_inputs:
        raise ShapeError(f"expected input of length {net.n_inputs}, got shape {x.shape}")
    return X, single


def forward_cache(net: Network, X: np.ndarray) -> list[np.ndarray]:
    """Layer activations for a 2-D batch; the last entry holds the pre-head logits."""
    acts = [X]
    h = X
    last = len(net.weights) - 1
    for k, (W, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ W.T + b
        h = z if k == last else np.maximum(z, 0.0)
        acts.append(h)
    return acts


def forward(net: Network, x) -> np.ndarray:
    X, single = _as_batch(net, x)
    out = forward_cache(net, X)[-1]
    if net.head == "softmax":
        out = softmax(out)
    return out[0] if single else out


def backprop(net: Network, acts: list[np.ndarray], dz: np.ndarray) -> Gradient:
    """Gradient given d(objective)/d(logits) for every row of the batch."""
    gw, gb = [None] * len(net.weights), [None] * len(net.biases)
    for k in range(len(net.weights) - 1, -1, -1):
        gw[k] = dz.T @ acts[k]
        gb[k] = dz.sum(axis=0)
        if k:
            dz = (dz @ net.weights[k]) * (acts[k] > 0)
    return Gradient(gw, gb)


def backward(net: Network, x, upstream) -> Gradient:
    """Gradient of ``upstream . forward(net, x)`` (summed over a batch)."""
    X, single = _as_batch(net, x)
    u = np.asarray(upstream, dtype=float)
    U = u[None, :] if u.ndim == 1 and single else u
    if U.shape != (X.shape[0], net.n_outputs):
        raise ShapeError(f"upstream shape {u.shape} does not match output dimension {net.n_outputs}")
    acts = forward_cache(net, X)
    if net.head == "softmax":
        p = softmax(acts[-1])
        U = p * (U - np.sum(p * U, axis=1, keepdims=True))
    return backprop(net, acts, U)


def log_prob_grad(net: Network, x, action) -> Gradient:
    """Gradient of log p(action | x) for a softmax-head network.

    With a batch of inputs ``action`` is an index array and the per-row
    gradients are summed.
    """
    if net.head != "softmax":
        raise ShapeError("log_prob_grad needs a softmax head")
    X, single = _as_batch(net, x)
    a = np.atleast_1d(np.asarray(action))
    if a.shape != (X.shape[0],):
        raise ShapeError("one action per input row is required")
    if np.any(a < 0) or np.any(a >= net.n_outputs):
        raise IndexError(f"action out of range for {net.n_outputs} outputs")
    acts = forward_cache(net, X)
    dz = -softmax(acts[-1])
    dz[np.arange(len(a)), a] += 1.0
    return backprop(net, acts, dz)


def flatten(net) -> np.ndarray:
    return np.concatenate([a.ravel() for pair in zip(net.weights, net.biases) for a in pair])


def unflatten(vec, like: Network) -> Network:
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (like.n_params,):
        raise ShapeError(f"expected {like.n_params} parameters, got {vec.shape}")
    weights, biases, i = [], [], 0
    for W, b in zip(like.weights, like.biases):
        weights.append(vec[i:i + W.size].reshape(W.shape).copy())
        i += W.size
        biases.append(vec[i:i + b.size].copy())
        i += b.size
    return Network(weights, biases, like.head)


@dataclass
class Optimizer:
    """SGD or RMSProp; the squared-gradient cache lives here and is updated in place."""

    kind: str = "sgd"
    lr: float = 0.01
    decay: float = 0.95
    eps: float = 0.01
    cache: list[np.ndarray] | None = field(default=None, repr=False)
    train_bias: bool = True

    def __post_init__(self):
        if self.kind not in ("sgd", "rmsprop"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if not 0 < self.decay < 1 or self.eps <= 0:
            raise ValueError("RMSProp decay must lie in (0, 1) and eps must be positive")


def apply_update(net: Network, grad: Gradient, opt: Optimizer, ascent: bool = False) -> Network:
    """Return the updated network; ``ascent`` flips the step direction."""
    params = net.weights + net.biases
    grads = grad.weights + grad.biases
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise ShapeError("gradient is not congruent with the network")
    sign = 1.0 if ascent else -1.0
    n = len(net.weights)
    if not opt.train_bias:
        grads = grads[:n] + [np.zeros_like(b) for b in net.biases]
    if opt.kind == "sgd":
        new = [p + sign * opt.lr * g for p, g in zip(params, grads)]
    else:
        if opt.cache is None:
            opt.cache = [np.zeros_like(p) for p in params]
        new = []
        for k, (p, g) in enumerate(zip(params, grads)):
            c = opt.cache[k]
            c *= opt.decay
            c += (1.0 - opt.decay) * g * g
            new.append(p + sign * opt.lr * g / np.sqrt(c + opt.eps))
    return Network(new[:n], new[n:], net.head)


def to_bytes(net: Network) -> bytes:
    parts = [MAGIC, struct.pack("<BI", _HEAD_TAGS[net.head], len(net.weights))]
    for W in net.weights:
        parts.append(struct.pack("<II", W.shape[0], W.shape[1]))
    for W, b in zip(net.weights, net.biases):
        parts.append(np.ascontiguousarray(W, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return b"".join(parts)


def from_bytes(data: bytes) -> Network:
    if data[:4] != MAGIC:
        raise ModelFormatError("bad magic, not an A2T1 model")
    try:
        tag, n_layers = struct.unpack_from("<BI", data, 4)
        head = {v: k for k, v in _HEAD_TAGS.items()}[tag]
        off = 9
        dims = []
        for _ in range(n_layers):
            dims.append(struct.unpack_from("<II", data, off))
            off += 8
    except (struct.error, KeyError) as exc:
        raise ModelFormatError(f"corrupt model header: {exc}") from None
    expected = off + 8 * sum(o * i + o for o, i in dims)
    if len(data) != expected:
        raise ModelFormatError(f"model body has {len(data)} bytes, expected {expected}")
    weights, biases = [], []
    for o, i in dims:
        weights.append(np.frombuffer(data, "<f8", o * i, off).reshape(o, i).astype(float))
        off += 8 * o * i
        biases.append(np.frombuffer(data, "<f8", o, off).astype(float))
        off += 8 * o
    return Network(weights, biases, head)


def save_model(net: Network, path) -> None:
    Path(path).write_bytes(to_bytes(net))


def load_model(path) -> Network:
    return from_bytes(Path(path).read_bytes())
