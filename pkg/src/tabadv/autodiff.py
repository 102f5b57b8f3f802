"""Dense float64 tensors with tape-free reverse-mode differentiation.

Every operation returns a new :class:`Tensor` that remembers its parents and a
closure pushing its gradient back to them. Graphs are built per call, so two
computations never share state. ``min``/``max``/``clamp`` use the subgradient
convention: the selected branch receives the gradient, ties go to the first
argument.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "as_tensor",
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "relu",
    "tanh",
    "sigmoid",
    "softmax",
    "log_softmax",
    "log",
    "exp",
    "square",
    "minimum",
    "maximum",
    "clamp",
    "where",
    "sum",
    "mean",
    "l2_norm",
    "cross_entropy",
    "concat",
    "take_columns",
    "detach",
    "backward",
    "grad_check",
]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), _backward=None, op: str = ""):
        self.data = np.array(data, dtype=np.float64) if not isinstance(data, np.ndarray) else data.astype(np.float64, copy=False)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor({self.data!r}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return _index(self, idx)

    def sum(self, axis=None):
        return sum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _make(data: np.ndarray, parents: tuple[Tensor, ...], fn: Callable[[np.ndarray], None], op: str) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, fn, op)
    return Tensor(data, op=op)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"shape mismatch in {op}: {a.shape} vs {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    out_data = a.data + b.data

    def fn(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(out_data, (a, b), fn, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    out_data = a.data - b.data

    def fn(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _make(out_data, (a, b), fn, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    out_data = a.data * b.data

    def fn(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), fn, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    out_data = a.data / b.data

    def fn(g):
        _accum(a, _unbroadcast(g / b.data, a.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(out_data, (a, b), fn, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)

    def fn(g):
        _accum(a, -g)

    return _make(-a.data, (a,), fn, "neg")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"shape mismatch in matmul: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def fn(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _make(out_data, (a, b), fn, "matmul")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0

    def fn(g):
        _accum(a, g * mask)

    return _make(np.where(mask, a.data, 0.0), (a,), fn, "relu")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.tanh(a.data)

    def fn(g):
        _accum(a, g * (1.0 - out_data * out_data))

    return _make(out_data, (a,), fn, "tanh")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def fn(g):
        _accum(a, g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), fn, "sigmoid")


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def fn(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        _accum(a, out_data * (g - inner))

    return _make(out_data, (a,), fn, "softmax")


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse
    probs = np.exp(out_data)

    def fn(g):
        _accum(a, g - probs * g.sum(axis=axis, keepdims=True))

    return _make(out_data, (a,), fn, "log_softmax")


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise ValueError("log of non-positive value")

    def fn(g):
        _accum(a, g / a.data)

    return _make(np.log(a.data), (a,), fn, "log")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def fn(g):
        _accum(a, g * out_data)

    return _make(out_data, (a,), fn, "exp")


def square(a) -> Tensor:
    a = as_tensor(a)

    def fn(g):
        _accum(a, 2.0 * g * a.data)

    return _make(a.data * a.data, (a,), fn, "square")


def maximum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "maximum")
    pick_a = a.data >= b.data

    def fn(g):
        _accum(a, _unbroadcast(g * pick_a, a.shape))
        _accum(b, _unbroadcast(g * ~pick_a, b.shape))

    return _make(np.where(pick_a, a.data, b.data), (a, b), fn, "maximum")


def minimum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "minimum")
    pick_a = a.data <= b.data

    def fn(g):
        _accum(a, _unbroadcast(g * pick_a, a.shape))
        _accum(b, _unbroadcast(g * ~pick_a, b.shape))

    return _make(np.where(pick_a, a.data, b.data), (a, b), fn, "minimum")


def clamp(x, lo, hi) -> Tensor:
    """``min(hi, max(lo, x))``; gradient follows the selected branch."""
    return minimum(hi, maximum(lo, x))


def where(mask, a, b) -> Tensor:
    """Hard selection; ``mask`` carries no gradient."""
    mask = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)

    def fn(g):
        _accum(a, _unbroadcast(np.where(mask, g, 0.0), a.shape))
        _accum(b, _unbroadcast(np.where(mask, 0.0, g), b.shape))

    return _make(np.where(mask, a.data, b.data), (a, b), fn, "where")


def sum(a, axis=None) -> Tensor:  # noqa: A001
    a = as_tensor(a)

    def fn(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.shape))

    return _make(np.asarray(a.data.sum(axis=axis)), (a,), fn, "sum")


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else a.shape[axis]

    def fn(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g / count, a.shape))

    return _make(np.asarray(a.data.mean(axis=axis)), (a,), fn, "mean")


def l2_norm(a, axis=None) -> Tensor:
    """Euclidean norm; the subgradient at the origin is taken as zero."""
    a = as_tensor(a)
    out_data = np.sqrt((a.data * a.data).sum(axis=axis))

    def fn(g):
        norm = out_data if axis is None else np.expand_dims(out_data, axis)
        gg = g if axis is None else np.expand_dims(g, axis)
        safe = np.where(norm > 0, norm, 1.0)
        _accum(a, np.where(norm > 0, gg * a.data / safe, 0.0))

    return _make(np.asarray(out_data), (a,), fn, "l2_norm")


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(f"shape mismatch in cross_entropy: {logits.shape} vs labels {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ValueError("label outside the label set")
    n = logits.shape[0]
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    out_data = np.asarray((lse - shifted[rows, labels]).mean())

    def fn(g):
        probs = np.exp(shifted - lse[:, None])
        probs[rows, labels] -= 1.0
        _accum(logits, g * probs / n)

    return _make(out_data, (logits,), fn, "cross_entropy")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum(sizes)[:-1]

    def fn(g):
        for t, part in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(t, part)

    return _make(out_data, tuple(tensors), fn, "concat")


def take_columns(a, cols: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    cols = np.asarray(cols, dtype=np.int64)

    def fn(g):
        full = np.zeros(a.shape)
        np.add.at(full, (slice(None), cols), g)
        _accum(a, full)

    return _make(a.data[:, cols], (a,), fn, "take_columns")


def _index(a: Tensor, idx) -> Tensor:
    def fn(g):
        full = np.zeros(a.shape)
        np.add.at(full, idx, g)
        _accum(a, full)

    return _make(np.array(a.data[idx]), (a,), fn, "index")


def detach(a) -> Tensor:
    return Tensor(as_tensor(a).data.copy())


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(output: Tensor) -> None:
    """Accumulate d(output)/d(leaf) into ``leaf.grad`` for every leaf requiring grad."""
    if output.data.size != 1:
        raise ValueError(f"backward needs a scalar output, got shape {output.shape}")
    if not output.requires_grad:
        raise ValueError("output does not depend on any tensor requiring grad")
    order = _topo_order(output)
    interior = [t for t in order if t._backward is not None]
    # interior grads are scratch space for this pass only
    for t in interior:
        t.grad = None
    output.grad = np.ones_like(output.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def grad_check(fn: Callable[[Tensor], Tensor], point, h: float = 1e-5, floor: float = 1e-6) -> float:
    """Worst per-coordinate relative error between backward() and central differences.

    The relative error of a coordinate is ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``.
    """
    x0 = np.array(point, dtype=np.float64)
    x = Tensor(x0.copy(), requires_grad=True)
    out = fn(x)
    backward(out)
    analytic = np.zeros_like(x0) if x.grad is None else x.grad
    numeric = np.zeros_like(x0)
    flat = x0.reshape(-1)
    for i in range(flat.size):
        plus = flat.copy()
        minus = flat.copy()
        plus[i] += h
        minus[i] -= h
        f_plus = fn(Tensor(plus.reshape(x0.shape))).item()
        f_minus = fn(Tensor(minus.reshape(x0.shape))).item()
        numeric.reshape(-1)[i] = (f_plus - f_minus) / (2.0 * h)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if x0.size else 0.0


def parameters_grad_check(loss_fn: Callable[[], Tensor], params: Iterable[Tensor], h: float = 1e-5, floor: float = 1e-6) -> float:
    """Like :func:`grad_check` but perturbs parameter tensors in place."""
    params = list(params)
    for p in params:
        p.grad = None
    backward(loss_fn())
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        flat = p.data.reshape(-1)
        numeric = np.zeros(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = loss_fn().item()
            flat[i] = orig - h
            f_minus = loss_fn().item()
            flat[i] = orig
            numeric[i] = (f_plus - f_minus) / (2.0 * h)
        a = analytic.reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), floor)
        worst = max(worst, float(np.max(np.abs(a - numeric) / denom)) if flat.size else 0.0)
    return worst
