"""Dense feed-forward networks and first-order optimizers on top of :mod:`tabadv.autodiff`."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

ACTIVATIONS = {
    "relu": ad.relu,
    "tanh": ad.tanh,
    "sigmoid": ad.sigmoid,
    "softmax": ad.softmax,
    "linear": lambda t: t,
}


class DenseNet:
    """Stack of affine layers, each followed by its own activation.

    ``sizes`` lists layer widths including input and output, so a net with
    ``sizes=(4, 16, 2)`` has two layers and needs two activations.
    """

    def __init__(self, sizes, activations, rng: np.random.Generator):
        sizes = tuple(int(s) for s in sizes)
        activations = tuple(activations)
        if len(sizes) < 2:
            raise ValueError("a network needs at least an input and an output width")
        if len(activations) != len(sizes) - 1:
            raise ValueError(f"{len(sizes) - 1} layers but {len(activations)} activations")
        for act in activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        self.sizes = sizes
        self.activations = activations
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            # Xavier-uniform
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True))
            self.biases.append(Tensor(np.zeros((1, fan_out)), requires_grad=True))

    def __call__(self, x: Tensor) -> Tensor:
        x = ad.as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.sizes[0]:
            raise ValueError(f"expected input of width {self.sizes[0]}, got shape {x.shape}")
        for w, b, act in zip(self.weights, self.biases, self.activations):
            x = ACTIVATIONS[act](ad.add(ad.matmul(x, w), b))
        return x

    def parameters(self) -> list[Tensor]:
        params: list[Tensor] = []
        for w, b in zip(self.weights, self.biases):
            params.extend((w, b))
        return params

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict:
        return {
            "sizes": list(self.sizes),
            "activations": list(self.activations),
            "params": [p.data.tolist() for p in self.parameters()],
        }

    @classmethod
    def from_state_dict(cls, state: dict) -> "DenseNet":
        net = cls(state["sizes"], state["activations"], np.random.default_rng(0))
        for p, values in zip(net.parameters(), state["params"]):
            arr = np.array(values, dtype=np.float64).reshape(p.shape)
            p.data = arr
        return net


@dataclass
class AdamState:
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    t: int = 0


def adam_step(params, grads, state: AdamState, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """One bias-corrected Adam update, applied in place to ``params`` (arrays)."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"parameter/gradient shape mismatch: {p.shape} vs {g.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


def sgd_step(params, grads, lr: float) -> None:
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"parameter/gradient shape mismatch: {p.shape} vs {g.shape}")
        p -= lr * g


def weight_clip(params, c: float) -> None:
    for p in params:
        np.clip(p, -c, c, out=p)


class Adam:
    """Adam bound to a list of parameter tensors; missing grads count as zero."""

    def __init__(self, params, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = AdamState()

    def step(self) -> None:
        grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]
        adam_step([p.data for p in self.params], grads, self.state, self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
