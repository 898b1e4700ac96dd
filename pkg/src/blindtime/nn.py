"""Minimal fully-connected networks with exact reverse-mode gradients.

Everything runs in float64. Weight matrices are stored ``(out, in)`` and
inputs are row batches, so a layer computes ``x @ W.T + b``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "identity", "logistic")
BCE_EPS = 1e-7


@dataclass(frozen=True)
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        W = np.asarray(self.weight, dtype=float)
        b = np.asarray(self.bias, dtype=float).reshape(-1)
        if W.ndim != 2 or W.shape[0] != b.shape[0]:
            raise ValueError(f"weight {W.shape} and bias {b.shape} disagree")
        object.__setattr__(self, "weight", W)
        object.__setattr__(self, "bias", b)


@dataclass(frozen=True)
class MlpParams:
    layers: tuple[Layer, ...] = field(default_factory=tuple)

    def __post_init__(self):
        layers = tuple(self.layers)
        for a, b in zip(layers, layers[1:]):
            if a.weight.shape[0] != b.weight.shape[1]:
                raise ValueError("adjacent layer widths do not match")
        object.__setattr__(self, "layers", layers)

    @property
    def in_features(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def out_features(self) -> int:
        return self.layers[-1].weight.shape[0]

    def tensors(self) -> list[np.ndarray]:
        """Flat list ``[W0, b0, W1, b1, ...]``."""
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias]
        return out

    def with_tensors(self, tensors) -> MlpParams:
        tensors = list(tensors)
        return MlpParams(tuple(
            Layer(tensors[2 * i], tensors[2 * i + 1], layer.activation)
            for i, layer in enumerate(self.layers)
        ))

    def zeros_like(self) -> MlpParams:
        return self.with_tensors([np.zeros_like(a) for a in self.tensors()])


def init_mlp(sizes, activations, rng: np.random.Generator, zero_bias: bool = True) -> MlpParams:
    """He-style init for relu layers, Glorot-style otherwise."""
    if len(activations) != len(sizes) - 1:
        raise ValueError("need one activation per layer")
    layers = []
    for n_in, n_out, act in zip(sizes[:-1], sizes[1:], activations):
        scale = np.sqrt(2.0 / n_in) if act == "relu" else np.sqrt(1.0 / n_in)
        W = rng.normal(0.0, scale, size=(n_out, n_in))
        b = np.zeros(n_out) if zero_bias else rng.normal(0.0, 0.1, size=n_out)
        layers.append(Layer(W, b, act))
    return MlpParams(tuple(layers))


def linear_mlp(weight, bias=None) -> MlpParams:
    weight = np.asarray(weight, dtype=float)
    bias = np.zeros(weight.shape[0]) if bias is None else bias
    return MlpParams((Layer(weight, bias, "identity"),))


def logistic(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _activate(z, act):
    if act == "relu":
        return np.maximum(z, 0.0)
    if act == "logistic":
        return logistic(z)
    return z


def _activation_grad(z, a, act):
    if act == "relu":
        return (z > 0).astype(float)
    if act == "logistic":
        return a * (1.0 - a)
    return np.ones_like(z)


def mlp_forward(p: MlpParams, x):
    """Return ``(y, cache)``; ``x`` is a vector or a row batch."""
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    a = x[None, :] if squeeze else x
    if a.shape[1] != p.in_features:
        raise ValueError(f"input width {a.shape[1]} != layer width {p.in_features}")
    inputs, pre, post = [], [], []
    for layer in p.layers:
        inputs.append(a)
        z = a @ layer.weight.T + layer.bias
        a = _activate(z, layer.activation)
        pre.append(z)
        post.append(a)
    cache = {"inputs": inputs, "pre": pre, "post": post, "squeeze": squeeze}
    return (a[0] if squeeze else a), cache


def mlp_backward(p: MlpParams, cache, dy):
    """Gradients of a scalar objective given ``dy = dL/dy``.

    Returns ``(grads, dx)`` where ``grads`` is an :class:`MlpParams` holding
    the gradient of every tensor.
    """
    dy = np.asarray(dy, dtype=float)
    g = dy[None, :] if cache["squeeze"] else dy
    tensors = []
    for layer, x, z, a in reversed(list(zip(p.layers, cache["inputs"], cache["pre"], cache["post"]))):
        dz = g * _activation_grad(z, a, layer.activation)
        tensors = [dz.T @ x, dz.sum(axis=0)] + tensors
        g = dz @ layer.weight
    dx = g[0] if cache["squeeze"] else g
    return p.with_tensors(tensors), dx


# ---- losses -------------------------------------------------------------

def smooth_l1(r, beta: float = 1.0):
    """Elementwise smooth-L1 value and derivative."""
    r = np.asarray(r, dtype=float)
    a = np.abs(r)
    if beta <= 0:
        return a, np.sign(r)
    quad = a < beta
    val = np.where(quad, 0.5 * r * r / beta, a - 0.5 * beta)
    grad = np.where(quad, r / beta, np.sign(r))
    return val, grad


def score_loss(p_pred: float, p_target: float) -> tuple[float, float]:
    """Binary cross entropy and its derivative w.r.t. ``p_pred``."""
    p = float(np.clip(p_pred, BCE_EPS, 1.0 - BCE_EPS))
    y = float(p_target)
    loss = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    clamped = p != p_pred
    grad = 0.0 if clamped else (p - y) / (p * (1.0 - p))
    return float(loss), grad


def iou_target(iou: float, theta_low: float = 0.25, theta_high: float = 0.75) -> float:
    """Piecewise-linear confidence target from the IoU with ground truth."""
    if not theta_low < theta_high:
        raise ValueError(f"need theta_low < theta_high, got {theta_low}, {theta_high}")
    if iou < theta_low:
        return 0.0
    if iou >= theta_high:
        return 1.0
    return (iou - theta_low) / (theta_high - theta_low)


@dataclass(frozen=True)
class LossWeights:
    reg: float = 1.0
    score: float = 1.0

    def __post_init__(self):
        if self.reg < 0 or self.score < 0:
            raise ValueError("loss weights must be nonnegative")


# ---- optimizer ----------------------------------------------------------

@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def update(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        """One Adam step; returns new arrays and leaves ``params`` untouched."""
        self.step_count += 1
        k = self.step_count
        out = {}
        for name, value in params.items():
            g = grads[name]
            m = self.beta1 * self.m.get(name, np.zeros_like(value)) + (1 - self.beta1) * g
            v = self.beta2 * self.v.get(name, np.zeros_like(value)) + (1 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            m_hat = m / (1 - self.beta1 ** k)
            v_hat = v / (1 - self.beta2 ** k)
            out[name] = value - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return out
