"""Small float64 MLPs with hand-written backprop, Adam, soft target updates and replay."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

ACTIVATIONS = ("relu", "tanh", "identity")
CHECKPOINT_VERSION = 1


class StaleCacheError(RuntimeError):
    """backward() called without a matching forward() pass."""


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name, z, a, g):
    if name == "relu":
        # subgradient 0 at the kink
        return g * (z > 0)
    if name == "tanh":
        return g * (1.0 - a * a)
    return g


class Mlp:
    """Fully connected network; ``activations[i]`` follows layer ``i``.

    Inputs may be a single vector or a ``(batch, in)`` matrix.
    """

    def __init__(self, sizes: Sequence[int], activations: Sequence[str], rng: np.random.Generator | None = None):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError(f"invalid layer sizes {sizes}")
        if len(activations) != len(sizes) - 1:
            raise ValueError("need one activation per layer")
        for a in activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        self.sizes = sizes
        self.activations = list(activations)
        rng = rng or np.random.default_rng(0)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            lim = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
            self.biases.append(rng.uniform(-lim, lim, size=fan_out))
        self._cache = None

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "Mlp":
        net = Mlp.__new__(Mlp)
        net.sizes = list(self.sizes)
        net.activations = list(self.activations)
        net.weights = [w.copy() for w in self.weights]
        net.biases = [b.copy() for b in self.biases]
        net._cache = None
        return net

    def same_architecture(self, other: "Mlp") -> bool:
        return self.sizes == other.sizes and self.activations == other.activations

    def forward(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.sizes[0]:
            raise ValueError(f"expected input size {self.sizes[0]}, got {x.shape[-1]}")
        pre, post = [], [x]
        h = x
        for w, b, act in zip(self.weights, self.biases, self.activations):
            z = h @ w + b
            h = _act(act, z)
            pre.append(z)
            post.append(h)
        self._cache = (x, pre, post)
        return h

    __call__ = forward

    def predict(self, x) -> np.ndarray:
        """Forward pass that leaves the backprop cache untouched."""
        h = np.asarray(x, dtype=float)
        for w, b, act in zip(self.weights, self.biases, self.activations):
            h = _act(act, h @ w + b)
        return h

    def backward(self, x, output_gradient):
        """Gradients of ``sum(output * output_gradient)``.

        Returns ``(param_grads, input_grad)`` with ``param_grads`` ordered as
        :attr:`params`.  ``x`` must be the input of the latest forward().
        """
        if self._cache is None:
            raise StaleCacheError("no forward pass cached")
        cx, pre, post = self._cache
        x = np.asarray(x, dtype=float)
        if x is not cx and not (x.shape == cx.shape and np.array_equal(x, cx)):
            raise StaleCacheError("cached forward pass was computed for a different input")
        g = np.asarray(output_gradient, dtype=float)
        if g.shape != post[-1].shape:
            raise ValueError(f"output gradient shape {g.shape} != output shape {post[-1].shape}")
        grads = [None] * (2 * len(self.weights))
        for i in range(len(self.weights) - 1, -1, -1):
            g = _act_grad(self.activations[i], pre[i], post[i + 1], g)
            h = post[i]
            if h.ndim == 1:
                grads[2 * i] = np.outer(h, g)
                grads[2 * i + 1] = g.copy()
            else:
                grads[2 * i] = h.T @ g
                grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i].T
        return grads, g


def forward(net: Mlp, x) -> np.ndarray:
    return net.forward(x)


def backward(net: Mlp, x, output_gradient):
    return net.backward(x, output_gradient)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState) -> list[np.ndarray]:
    """Bias-corrected Adam update applied to ``params`` in place."""
    if len(params) != len(grads):
        raise ValueError("parameter and gradient lists differ in length")
    for p, g in zip(params, grads):
        if p.shape != np.shape(g):
            raise ValueError(f"gradient shape {np.shape(g)} does not match parameter shape {p.shape}")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    elif any(m.shape != p.shape for m, p in zip(state.m, params)) or len(state.m) != len(params):
        raise ValueError("optimizer state does not match parameters")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1**state.t
    c2 = 1 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


def soft_update(target: Mlp, online: Mlp, tau: float) -> Mlp:
    """``target <- tau * online + (1 - tau) * target`` elementwise."""
    if not target.same_architecture(online):
        raise ValueError("target and online networks differ in architecture")
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    for t, o in zip(target.params, online.params):
        t *= 1.0 - tau
        t += tau * o
    return target


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray

    def __len__(self):
        return len(self.rewards)


class ReplayBuffer:
    """Fixed-capacity ring buffer with uniform sampling (with replacement)."""

    def __init__(self, capacity: int = 10_000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.cursor = 0
        self.size = 0
        self._s = self._a = self._r = self._s2 = self._d = None

    def __len__(self):
        return self.size

    def push(self, tr: Transition) -> None:
        s = np.asarray(tr.state, dtype=float)
        a = np.asarray(tr.action, dtype=float)
        if self._s is None:
            n = self.capacity
            self._s = np.zeros((n, s.size))
            self._a = np.zeros((n, a.size))
            self._r = np.zeros(n)
            self._s2 = np.zeros((n, s.size))
            self._d = np.zeros(n, dtype=bool)
        i = self.cursor
        self._s[i] = s
        self._a[i] = a
        self._r[i] = tr.reward
        self._s2[i] = tr.next_state
        self._d[i] = tr.done
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        if self.size < batch_size:
            raise RuntimeError(f"buffer holds {self.size} transitions, need {batch_size}")
        idx = rng.integers(0, self.size, size=batch_size)
        return Batch(self._s[idx], self._a[idx], self._r[idx], self._s2[idx], self._d[idx])


# checkpoints ------------------------------------------------------------------

def save_networks(path, nets: dict[str, Mlp], header: dict | None = None) -> None:
    """Write networks (and an optional JSON header) to a ``.npz`` file."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "header": header or {},
        "nets": {name: {"sizes": n.sizes, "activations": n.activations} for name, n in nets.items()},
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)}
    for name, net in nets.items():
        for i, p in enumerate(net.params):
            arrays[f"{name}/{i}"] = p
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    tmp.replace(path)


def load_networks(path) -> tuple[dict[str, Mlp], dict]:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        nets = {}
        for name, spec in meta["nets"].items():
            net = Mlp(spec["sizes"], spec["activations"])
            for i, p in enumerate(net.params):
                p[...] = data[f"{name}/{i}"]
            nets[name] = net
    return nets, meta["header"]
