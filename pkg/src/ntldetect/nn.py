"""Minimal feed-forward network engine shared by the autoencoder and GAN.

Layers are plain numpy objects; batches are row-major (samples, features).
Backpropagation is hand-derived per layer and verified against central
finite differences by :func:`gradient_check`.  Batch normalization keeps
running statistics as non-trainable parameters, so a layer of width d
accounts for 4*d parameters (scale, shift, running mean, running variance).
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Dense",
    "BatchNorm",
    "ReLU",
    "Sigmoid",
    "NeuralNet",
    "Adam",
    "DivergenceError",
    "count_params",
    "mse_loss",
    "bce_loss",
    "raw_mean_loss",
    "train_step",
    "gradient_check",
    "net_to_dict",
    "net_from_dict",
    "save_net",
    "load_net",
]

SCHEMA_VERSION = 1


class DivergenceError(RuntimeError):
    """Loss became NaN or infinite during training."""


def glorot_uniform(in_dim: int, out_dim: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (in_dim + out_dim))
    return rng.uniform(-limit, limit, size=(in_dim, out_dim))


class Dense:
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator | None = None):
        self.in_dim = in_dim
        self.out_dim = out_dim
        if rng is None:
            self.W = np.zeros((in_dim, out_dim))
        else:
            self.W = glorot_uniform(in_dim, out_dim, rng)
        self.b = np.zeros(out_dim)

    def forward(self, x, training=False, update_running=False):
        return x @ self.W + self.b, x

    def backward(self, cache, dy, training=False):
        x = cache
        dW = x.T @ dy
        db = dy.sum(axis=0)
        dx = dy @ self.W.T
        return (dW, db), dx

    def trainable(self):
        return [self.W, self.b]

    def param_count(self) -> int:
        return self.in_dim * self.out_dim + self.out_dim

    def out_width(self, in_width):
        if in_width != self.in_dim:
            raise ValueError(f"dense layer expects width {self.in_dim}, got {in_width}")
        return self.out_dim


class BatchNorm:
    def __init__(self, dim: int, momentum: float = 0.99, eps: float = 1e-5):
        self.dim = dim
        self.momentum = momentum
        self.eps = eps
        self.gamma = np.ones(dim)
        self.beta = np.zeros(dim)
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)

    def forward(self, x, training=False, update_running=False):
        if training:
            if x.shape[0] < 2:
                raise ValueError("batchnorm in training mode needs batch size >= 2")
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            if update_running:
                self.running_mean = self.momentum * self.running_mean + (1 - self.momentum) * mean
                self.running_var = self.momentum * self.running_var + (1 - self.momentum) * var
        else:
            mean = self.running_mean
            var = self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        x_hat = (x - mean) * inv_std
        return self.gamma * x_hat + self.beta, (x, x_hat, mean, var, inv_std)

    def backward(self, cache, dy, training=False):
        x, x_hat, mean, var, inv_std = cache
        dgamma = (dy * x_hat).sum(axis=0)
        dbeta = dy.sum(axis=0)
        dx_hat = dy * self.gamma
        if not training:
            return (dgamma, dbeta), dx_hat * inv_std
        n = x.shape[0]
        centered = x - mean
        dvar = (dx_hat * centered).sum(axis=0) * (-0.5) * inv_std**3
        dmean = (dx_hat * -inv_std).sum(axis=0) + dvar * (-2.0 / n) * centered.sum(axis=0)
        dx = dx_hat * inv_std + dvar * 2.0 * centered / n + dmean / n
        return (dgamma, dbeta), dx

    def trainable(self):
        return [self.gamma, self.beta]

    def param_count(self) -> int:
        # scale, shift, running mean, running variance
        return 4 * self.dim

    def out_width(self, in_width):
        if in_width != self.dim:
            raise ValueError(f"batchnorm expects width {self.dim}, got {in_width}")
        return in_width


class ReLU:
    def forward(self, x, training=False, update_running=False):
        mask = x > 0
        return x * mask, mask

    def backward(self, cache, dy, training=False):
        return (), dy * cache

    def trainable(self):
        return []

    def param_count(self) -> int:
        return 0

    def out_width(self, in_width):
        return in_width


class Sigmoid:
    def forward(self, x, training=False, update_running=False):
        y = 1.0 / (1.0 + np.exp(-x))
        return y, y

    def backward(self, cache, dy, training=False):
        y = cache
        return (), dy * y * (1.0 - y)

    def trainable(self):
        return []

    def param_count(self) -> int:
        return 0

    def out_width(self, in_width):
        return in_width


class NeuralNet:
    """An ordered stack of layers with explicit forward caches."""

    def __init__(self, layers, input_dim: int | None = None):
        self.layers = list(layers)
        if input_dim is not None:
            width = input_dim
            for layer in self.layers:
                width = layer.out_width(width)

    def forward(self, x, training=False, update_running=False):
        x = np.asarray(x, dtype=np.float64)
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x, training=training, update_running=update_running)
            caches.append(cache)
        return x, caches

    def predict(self, x):
        out, _ = self.forward(x, training=False)
        return out

    def backward(self, caches, dy, training=False):
        """Returns (per-parameter gradients aligned with trainable(), dx)."""
        grads: list[np.ndarray] = []
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            dparams, dy = layer.backward(cache, dy, training=training)
            grads = list(dparams) + grads
        return grads, dy

    def trainable(self):
        params = []
        for layer in self.layers:
            params.extend(layer.trainable())
        return params

    def set_trainable(self, values):
        params = self.trainable()
        if len(values) != len(params):
            raise ValueError("parameter list length mismatch")
        offset = 0
        for layer in self.layers:
            own = layer.trainable()
            for i, name in enumerate(_trainable_names(layer)):
                setattr(layer, name, np.asarray(values[offset + i], dtype=np.float64))
            offset += len(own)


def _trainable_names(layer):
    if isinstance(layer, Dense):
        return ["W", "b"]
    if isinstance(layer, BatchNorm):
        return ["gamma", "beta"]
    return []


def count_params(net: NeuralNet) -> int:
    """Total parameter count, trainable plus running statistics."""
    return sum(layer.param_count() for layer in net.layers)


@dataclass
class Adam:
    """Adaptive-moment optimizer over a fixed list of parameter arrays."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params, grads):
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        if len(params) != len(self.m):
            raise ValueError("optimizer was initialized for a different parameter set")
        self.step_count += 1
        t = self.step_count
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            m_hat = m / (1 - self.beta1**t)
            v_hat = v / (1 - self.beta2**t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def mse_loss(pred, target):
    diff = pred - target
    return float(np.mean(diff**2)), 2.0 * diff / diff.size


def bce_loss(pred, target):
    eps = 1e-12
    p = np.clip(pred, eps, 1.0 - eps)
    loss = -np.mean(target * np.log(p) + (1.0 - target) * np.log(1.0 - p))
    grad = (-(target / p) + (1.0 - target) / (1.0 - p)) / p.size
    return float(loss), grad


def raw_mean_loss(pred, target):
    """mean(pred * target): with +/-1 coefficients this is a signed mean score."""
    return float(np.mean(pred * target)), np.asarray(target, dtype=np.float64) / pred.size


_LOSSES = {"mse": mse_loss, "binary-cross-entropy": bce_loss, "raw-mean": raw_mean_loss}


def train_step(net: NeuralNet, optimizer: Adam, batch, targets, loss: str = "mse") -> float:
    """One forward/backward/update cycle; returns the pre-update loss."""
    loss_fn = _LOSSES[loss]
    out, caches = net.forward(batch, training=True, update_running=True)
    value, grad = loss_fn(out, np.asarray(targets, dtype=np.float64))
    if not np.isfinite(value):
        raise DivergenceError(f"{loss} loss diverged: {value}")
    grads, _ = net.backward(caches, grad, training=True)
    optimizer.step(net.trainable(), grads)
    return value


def gradient_check(net: NeuralNet, batch, targets, loss: str = "mse", h: float = 1e-5,
                   training: bool = False) -> float:
    """Max relative error between backprop and central-difference gradients.

    The network state is left untouched: forwards never update running
    statistics.  Relative error per parameter element is
    |g_bp - g_fd| / max(|g_bp|, |g_fd|, 1e-8).
    """
    loss_fn = _LOSSES[loss]
    targets = np.asarray(targets, dtype=np.float64)

    def loss_value():
        out, _ = net.forward(batch, training=training, update_running=False)
        return loss_fn(out, targets)[0]

    out, caches = net.forward(batch, training=training, update_running=False)
    _, grad = loss_fn(out, targets)
    grads, _ = net.backward(caches, grad, training=training)

    worst = 0.0
    for p, g in zip(net.trainable(), grads):
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_value()
            flat[i] = orig - h
            down = loss_value()
            flat[i] = orig
            fd = (up - down) / (2.0 * h)
            denom = max(abs(gflat[i]), abs(fd), 1e-8)
            worst = max(worst, abs(gflat[i] - fd) / denom)
    return worst


def _encode_array(a: np.ndarray) -> dict:
    return {
        "shape": list(a.shape),
        "data": base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii"),
    }


def _decode_array(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(d["shape"]).copy()


def net_to_dict(net: NeuralNet) -> dict:
    layers = []
    for layer in net.layers:
        if isinstance(layer, Dense):
            layers.append(
                {
                    "kind": "dense",
                    "in_dim": layer.in_dim,
                    "out_dim": layer.out_dim,
                    "weight": _encode_array(layer.W),
                    "bias": _encode_array(layer.b),
                }
            )
        elif isinstance(layer, BatchNorm):
            layers.append(
                {
                    "kind": "batchnorm",
                    "dim": layer.dim,
                    "momentum": layer.momentum,
                    "epsilon": layer.eps,
                    "gamma": _encode_array(layer.gamma),
                    "beta": _encode_array(layer.beta),
                    "running_mean": _encode_array(layer.running_mean),
                    "running_var": _encode_array(layer.running_var),
                }
            )
        elif isinstance(layer, ReLU):
            layers.append({"kind": "relu"})
        elif isinstance(layer, Sigmoid):
            layers.append({"kind": "sigmoid"})
        else:
            raise TypeError(f"cannot serialize layer {layer!r}")
    return {"schema_version": SCHEMA_VERSION, "layers": layers}


def net_from_dict(doc: dict) -> NeuralNet:
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(
            f"schema version mismatch: expected {SCHEMA_VERSION}, got {doc.get('schema_version')}"
        )
    layers = []
    for spec in doc["layers"]:
        kind = spec["kind"]
        if kind == "dense":
            layer = Dense(spec["in_dim"], spec["out_dim"])
            layer.W = _decode_array(spec["weight"])
            layer.b = _decode_array(spec["bias"])
        elif kind == "batchnorm":
            layer = BatchNorm(spec["dim"], momentum=spec["momentum"], eps=spec["epsilon"])
            layer.gamma = _decode_array(spec["gamma"])
            layer.beta = _decode_array(spec["beta"])
            layer.running_mean = _decode_array(spec["running_mean"])
            layer.running_var = _decode_array(spec["running_var"])
        elif kind == "relu":
            layer = ReLU()
        elif kind == "sigmoid":
            layer = Sigmoid()
        else:
            raise ValueError(f"unknown layer kind {kind!r}")
        layers.append(layer)
    return NeuralNet(layers)


def save_net(net: NeuralNet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(net_to_dict(net), fh)


def load_net(path) -> NeuralNet:
    with open(path, "r", encoding="utf-8") as fh:
        return net_from_dict(json.load(fh))
