"""Small dense networks with hand-written reverse-mode gradients.

Just enough for actor-critic training on a CPU: ReLU hidden layers, an
optional squashing output, Adam and RMSProp, and Polyak target updates.
Arrays are float64 and batches are row-major ``(batch, features)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CHECKPOINT_FORMAT = "fmec-densenet"
CHECKPOINT_VERSION = 1

_OUTPUTS = ("linear", "sigmoid", "tanh")


def _squash(name, z):
    if name == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    if name == "tanh":
        return np.tanh(z)
    return z


def _squash_grad(name, y):
    # derivative expressed through the output value
    if name == "sigmoid":
        return y * (1.0 - y)
    if name == "tanh":
        return 1.0 - y * y
    return np.ones_like(y)


class DenseNet:
    def __init__(self, weights, biases, output="linear"):
        if output not in _OUTPUTS:
            raise ValueError(f"unknown output squashing {output!r}")
        self.weights = [np.array(w, dtype=float) for w in weights]
        self.biases = [np.array(b, dtype=float) for b in biases]
        self.output = output
        for a, b in zip(self.weights, self.weights[1:]):
            if a.shape[1] != b.shape[0]:
                raise ValueError("inconsistent layer sizes")
        for w, b in zip(self.weights, self.biases):
            if b.shape != (w.shape[1],):
                raise ValueError("bias shape does not match weight matrix")

    @classmethod
    def init(cls, sizes, rng: np.random.Generator, output="linear", final_scale=3e-3):
        """Fan-in uniform initialisation; the last layer starts near zero."""
        sizes = list(sizes)
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        ws, bs = [], []
        for k, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
            last = k == len(sizes) - 2
            lim = final_scale if last else 1.0 / np.sqrt(n_in)
            ws.append(rng.uniform(-lim, lim, size=(n_in, n_out)))
            bs.append(rng.uniform(-lim, lim, size=n_out))
        return cls(ws, bs, output)

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "DenseNet":
        return DenseNet([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                        self.output)

    def forward(self, x):
        return self.forward_cache(x)[0]

    def __call__(self, x):
        return self.forward(x)

    def forward_cache(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        h = x[None, :] if single else x
        if h.shape[1] != self.sizes[0]:
            raise ValueError(f"input width {h.shape[1]} != {self.sizes[0]}")
        acts = [h]
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            h = _squash(self.output, z) if k == last else np.maximum(z, 0.0)
            acts.append(h)
        y = h[0] if single else h
        return y, (single, acts)

    def backward(self, cache, grad_out):
        """Pull ``grad_out`` (dL/dy) back through the net.

        Returns ``(param_grads, grad_input)``; ``param_grads`` is ordered like
        :meth:`params` and is summed over the batch.
        """
        single, acts = cache
        g = np.asarray(grad_out, dtype=float)
        if single:
            g = g[None, :]
        n_layers = len(self.weights)
        grads = [None] * (2 * n_layers)
        g = g * _squash_grad(self.output, acts[-1])
        for k in range(n_layers - 1, -1, -1):
            grads[2 * k] = acts[k].T @ g
            grads[2 * k + 1] = g.sum(axis=0)
            g = g @ self.weights[k].T
            if k > 0:
                g = g * (acts[k] > 0.0)
        return grads, (g[0] if single else g)

    # ---- persistence
    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "output": self.output,
            "sizes": self.sizes,
            "layers": [{"w_shape": list(w.shape), "w": w.ravel().tolist(), "b": b.tolist()}
                       for w, b in zip(self.weights, self.biases)],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DenseNet":
        if data.get("format") != CHECKPOINT_FORMAT:
            raise ValueError("not a network checkpoint")
        if data.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"network checkpoint version {data.get('version')!r} not supported")
        ws = [np.array(L["w"], float).reshape(L["w_shape"]) for L in data["layers"]]
        bs = [np.array(L["b"], float) for L in data["layers"]]
        return cls(ws, bs, data["output"])


def grad(net: DenseNet, x, head):
    """Gradients of a scalar head ``L = head(y)`` w.r.t. parameters and input.

    ``head`` maps the network output to ``(L, dL/dy)``.
    """
    y, cache = net.forward_cache(x)
    value, g_out = head(y)
    pgrads, g_in = net.backward(cache, g_out)
    return value, pgrads, g_in


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params, grads):
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def to_dict(self) -> dict:
        return {"kind": "adam", "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2,
                "eps": self.eps, "t": self.t, **_moments(m=self.m, v=self.v)}


@dataclass
class RMSProp:
    lr: float = 1e-3
    decay: float = 0.9
    eps: float = 1e-8
    t: int = 0
    v: list = field(default_factory=list)

    def step(self, params, grads):
        if not self.v:
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        for p, g, v in zip(params, grads, self.v):
            v *= self.decay
            v += (1.0 - self.decay) * g * g
            p -= self.lr * g / (np.sqrt(v) + self.eps)

    def to_dict(self) -> dict:
        return {"kind": "rmsprop", "lr": self.lr, "decay": self.decay, "eps": self.eps,
                "t": self.t, **_moments(v=self.v)}


def _moments(**arrays):
    return {k: [{"shape": list(a.shape), "values": a.ravel().tolist()} for a in v]
            for k, v in arrays.items()}


def optimizer_from_dict(data: dict):
    def arrays(key):
        return [np.array(a["values"], float).reshape(a["shape"]) for a in data.get(key, [])]

    if data["kind"] == "adam":
        return Adam(data["lr"], data["beta1"], data["beta2"], data["eps"], data["t"],
                    arrays("m"), arrays("v"))
    if data["kind"] == "rmsprop":
        return RMSProp(data["lr"], data["decay"], data["eps"], data["t"], arrays("v"))
    raise ValueError(f"unknown optimizer kind {data['kind']!r}")


def step_adam(net: DenseNet, grads, opt: Adam) -> DenseNet:
    opt.step(net.params(), grads)
    return net


def step_rmsprop(net: DenseNet, grads, opt: RMSProp) -> DenseNet:
    opt.step(net.params(), grads)
    return net


def soft_update(target: DenseNet, online: DenseNet, tau: float) -> DenseNet:
    """In place: target <- tau * online + (1 - tau) * target."""
    for t, o in zip(target.params(), online.params()):
        if t.shape != o.shape:
            raise ValueError("target and online networks differ in shape")
        t *= 1.0 - tau
        t += tau * o
    return target
