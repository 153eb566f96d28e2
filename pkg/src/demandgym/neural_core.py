"""Minimal dense-network substrate: init, forward/backward, Adam, sampling.

Everything is 64-bit and explicitly seeded so that training runs are
bitwise reproducible. There is no autograd graph; the backward pass for
the fixed affine+activation stack is written by hand. All stochastic
operations take a ``numpy.random.Generator`` argument -- no global state.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("tanh", "relu", "identity")


def make_rng(seed: int) -> np.random.Generator:
    """Seeded portable 64-bit generator used throughout the package."""
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "identity"

    def __post_init__(self):
        if self.in_dim <= 0 or self.out_dim <= 0:
            raise ValueError(f"layer dims must be positive, got {self.in_dim}->{self.out_dim}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


def mlp_spec(dims, hidden_activation="tanh", out_activation="identity"):
    """Chain of LayerSpecs for dims like [obs, 64, 64, head]."""
    specs = []
    for i in range(len(dims) - 1):
        act = out_activation if i == len(dims) - 2 else hidden_activation
        specs.append(LayerSpec(dims[i], dims[i + 1], act))
    return specs


@dataclass
class ParamSet:
    """Weights/biases for a LayerSpec chain plus Adam moment state."""

    specs: tuple
    weights: list  # per layer, shape (in_dim, out_dim), float64, row-major
    biases: list  # per layer, shape (out_dim,)
    m_w: list = field(default_factory=list)
    v_w: list = field(default_factory=list)
    m_b: list = field(default_factory=list)
    v_b: list = field(default_factory=list)
    t: int = 0

    def copy(self) -> "ParamSet":
        return copy.deepcopy(self)

    @property
    def in_dim(self) -> int:
        return self.specs[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.specs[-1].out_dim

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.weights + self.biases])

    def set_flat(self, vec: np.ndarray) -> None:
        """Overwrite all weights/biases from a flat vector (moments untouched)."""
        vec = np.asarray(vec, dtype=np.float64)
        i = 0
        for arr in self.weights + self.biases:
            arr[...] = vec[i:i + arr.size].reshape(arr.shape)
            i += arr.size
        if i != vec.size:
            raise ValueError(f"flat vector size {vec.size} != parameter count {i}")


@dataclass
class Grads:
    """Gradient arrays mirroring a ParamSet's weights/biases."""

    d_w: list
    d_b: list

    def scale(self, c: float) -> "Grads":
        return Grads([c * g for g in self.d_w], [c * g for g in self.d_b])

    def add_(self, other: "Grads") -> "Grads":
        for a, b in zip(self.d_w, other.d_w):
            a += b
        for a, b in zip(self.d_b, other.d_b):
            a += b
        return self


def zero_grads(params: ParamSet) -> Grads:
    return Grads(
        [np.zeros_like(w) for w in params.weights],
        [np.zeros_like(b) for b in params.biases],
    )


@dataclass
class ForwardTrace:
    """Per-layer intermediates cached for the backward pass.

    ``x`` has shape (batch, in_dim); ``pre`` and ``act`` hold the
    pre-activation and activated output of every layer.
    """

    x: np.ndarray
    pre: list
    act: list


def mlp_init(specs, seed: int) -> ParamSet:
    """Uniform [-sqrt(1/in_dim), +sqrt(1/in_dim)] weights, zero biases."""
    specs = tuple(specs)
    if not specs:
        raise ValueError("empty layer spec")
    for a, b in zip(specs, specs[1:]):
        if a.out_dim != b.in_dim:
            raise ValueError(f"dimension mismatch in spec: {a.out_dim} != {b.in_dim}")
    rng = make_rng(seed)
    weights, biases = [], []
    for sp in specs:
        bound = np.sqrt(1.0 / sp.in_dim)
        weights.append(rng.uniform(-bound, bound, size=(sp.in_dim, sp.out_dim)))
        biases.append(np.zeros(sp.out_dim))
    ps = ParamSet(specs, weights, biases)
    ps.m_w = [np.zeros_like(w) for w in weights]
    ps.v_w = [np.zeros_like(w) for w in weights]
    ps.m_b = [np.zeros_like(b) for b in biases]
    ps.v_b = [np.zeros_like(b) for b in biases]
    return ps


def _activate(z, kind):
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    return z


def _activate_grad(z, a, kind):
    if kind == "tanh":
        return 1.0 - a * a
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    return np.ones_like(z)


def forward_batch(params: ParamSet, x: np.ndarray):
    """Forward pass over a (batch, in_dim) matrix. Returns (y, trace)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ValueError(f"input shape {x.shape} incompatible with in_dim {params.in_dim}")
    pre, act = [], []
    h = x
    for sp, w, b in zip(params.specs, params.weights, params.biases):
        z = h @ w + b
        h = _activate(z, sp.activation)
        pre.append(z)
        act.append(h)
    return h, ForwardTrace(x, pre, act)


def forward(params: ParamSet, x):
    """Single-vector forward pass. Returns (y, trace)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("forward expects a vector; use forward_batch for matrices")
    y, trace = forward_batch(params, x[None, :])
    return y[0], trace


def backward_batch(trace: ForwardTrace, params: ParamSet, grad_y: np.ndarray):
    """Reverse-mode gradients of sum(y * grad_y) w.r.t. all parameters.

    ``grad_y`` shape (batch, out_dim). Also returns d(sum)/dx for chained
    networks (e.g. critic back into an actor's action input).
    """
    grad_y = np.asarray(grad_y, dtype=np.float64)
    if grad_y.shape != trace.act[-1].shape:
        raise ValueError(f"grad_y shape {grad_y.shape} != output shape {trace.act[-1].shape}")
    if len(trace.pre) != len(params.specs):
        raise ValueError("trace depth does not match parameter layer count")
    d_w = [None] * len(params.specs)
    d_b = [None] * len(params.specs)
    delta = grad_y
    for i in range(len(params.specs) - 1, -1, -1):
        sp = params.specs[i]
        delta = delta * _activate_grad(trace.pre[i], trace.act[i], sp.activation)
        inp = trace.x if i == 0 else trace.act[i - 1]
        if inp.shape[1] != params.weights[i].shape[0]:
            raise ValueError("trace/params shape mismatch")
        d_w[i] = inp.T @ delta
        d_b[i] = delta.sum(axis=0)
        delta = delta @ params.weights[i].T
    return Grads(d_w, d_b), delta


def backward(trace: ForwardTrace, params: ParamSet, grad_y):
    """Vector form of backward_batch; returns only the parameter grads."""
    grad_y = np.asarray(grad_y, dtype=np.float64)
    if grad_y.ndim == 1:
        grad_y = grad_y[None, :]
    grads, _ = backward_batch(trace, params, grad_y)
    return grads


def adam_step(params: ParamSet, grads: Grads, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> ParamSet:
    """One bias-corrected Adam update, in place. Returns params."""
    if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
        raise ValueError("beta1/beta2 must be in [0, 1)")
    for g in grads.d_w + grads.d_b:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient; update rejected")
    params.t += 1
    t = params.t
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for w, g, m, v in zip(params.weights, grads.d_w, params.m_w, params.v_w):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        w -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    for b, g, m, v in zip(params.biases, grads.d_b, params.m_b, params.v_b):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        b -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params


def soft_update(target: ParamSet, online: ParamSet, tau: float) -> None:
    """target <- (1 - tau) * target + tau * online, elementwise."""
    for tw, ow in zip(target.weights, online.weights):
        tw *= 1.0 - tau
        tw += tau * ow
    for tb, ob in zip(target.biases, online.biases):
        tb *= 1.0 - tau
        tb += tau * ob


def softmax(logits: np.ndarray) -> np.ndarray:
    """Stable softmax along the last axis (max subtraction)."""
    logits = np.asarray(logits, dtype=np.float64)
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def sample_categorical(rng: np.random.Generator, logits):
    """Draw an index from softmax(logits) with one uniform draw.

    Returns (index, log_prob at index).
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.size == 0:
        raise ValueError("empty logits")
    if not np.all(np.isfinite(logits)):
        raise ValueError("logits must be finite")
    p = softmax(logits)
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(p), u, side="right"))
    idx = min(idx, logits.size - 1)
    return idx, float(log_softmax(logits)[idx])
