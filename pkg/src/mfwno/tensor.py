"""Dense float64 tensors with reverse-mode automatic differentiation.

The graph is rebuilt on every forward pass (define-by-run): each operation
returns a fresh Tensor holding parent links and the vector-Jacobian products
needed to push a cotangent back to its parents.  ``backward`` walks that
implicit graph once, in reverse topological order, and accumulates gradients
into the leaves.  Repeated calls to ``backward`` keep accumulating into leaf
``.grad`` arrays until ``zero_grad`` is called (PyTorch-style contract).
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "GradientError",
    "TrainingDiverged",
    "no_grad",
    "finite_checks",
    "make_node",
    "backward",
    "zero_grad",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "power",
    "sqrt",
    "matmul_last",
    "channel_mix",
    "gelu",
    "tanh",
    "identity",
    "tensor_sum",
    "tensor_mean",
    "concat",
    "reshape",
    "getitem",
    "ACTIVATIONS",
    "AdamState",
    "adam_step",
    "finite_difference_gradient",
]

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

_grad_enabled = True
_finite_checks = True


class GradientError(ValueError):
    """Raised on autodiff contract violations (non-scalar loss, bad shapes)."""


class TrainingDiverged(RuntimeError):
    """Raised when an operation or a training step produces non-finite values."""


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextmanager
def finite_checks(enabled: bool):
    """Toggle the per-operation finiteness guard (on by default)."""
    global _finite_checks
    prev = _finite_checks
    _finite_checks = enabled
    try:
        yield
    finally:
        _finite_checks = prev


def _ensure_finite(arr: np.ndarray, where: str) -> None:
    if not _finite_checks or arr.size == 0:
        return
    # A single summation pass: NaN and +/-Inf both poison the total.
    total = float(arr.sum())
    if not math.isfinite(total):
        raise TrainingDiverged(f"non-finite values produced by '{where}'")


class Tensor:
    """A dense n-dimensional float64 array, optionally tracked by autodiff."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjps", "_op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        _ensure_finite(arr, "tensor")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjps: tuple[Callable[[np.ndarray], np.ndarray], ...] = ()
        self._op = ""

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def copy(self) -> "Tensor":
        out = Tensor(self.data.copy(), requires_grad=self.requires_grad)
        return out

    def backward(self) -> dict["Tensor", np.ndarray]:
        return backward(self)

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # arithmetic sugar
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

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_node(
    data: np.ndarray,
    parents: Sequence[Tensor],
    vjps: Sequence[Callable[[np.ndarray], np.ndarray]],
    op: str = "",
) -> Tensor:
    """Create a graph node; primitives outside this module register through here."""
    requires = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor.__new__(Tensor)
    arr = np.asarray(data, dtype=np.float64)
    _ensure_finite(arr, op or "op")
    out.data = arr
    out.requires_grad = requires
    out.grad = None
    out._op = op
    if requires:
        out._parents = tuple(parents)
        out._vjps = tuple(vjps)
    else:
        out._parents = ()
        out._vjps = ()
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return make_node(
        a.data + b.data,
        (a, b),
        (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return make_node(
        a.data - b.data,
        (a, b),
        (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return make_node(
        a.data * b.data,
        (a, b),
        (
            lambda g: _unbroadcast(g * b.data, a.shape),
            lambda g: _unbroadcast(g * a.data, b.shape),
        ),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return make_node(
        a.data / b.data,
        (a, b),
        (
            lambda g: _unbroadcast(g / b.data, a.shape),
            lambda g: _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
        "div",
    )


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return make_node(-a.data, (a,), (lambda g: -g,), "neg")


def power(a, p: float) -> Tensor:
    a = _as_tensor(a)
    p = float(p)
    return make_node(
        a.data**p,
        (a,),
        (lambda g: g * p * a.data ** (p - 1.0),),
        "power",
    )


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    out = np.sqrt(a.data)
    return make_node(out, (a,), (lambda g: g * 0.5 / out,), "sqrt")


def matmul_last(x, w) -> Tensor:
    """Contract the last axis of ``x`` with a 2-D weight matrix ``w``."""
    x, w = _as_tensor(x), _as_tensor(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise GradientError(
            f"matmul_last shape mismatch: x {x.shape} vs w {w.shape}"
        )

    def vjp_x(g):
        return g @ w.data.T

    def vjp_w(g):
        xr = x.data.reshape(-1, x.shape[-1])
        gr = g.reshape(-1, w.shape[1])
        return xr.T @ gr

    return make_node(x.data @ w.data, (x, w), (vjp_x, vjp_w), "matmul_last")


def channel_mix(x, w) -> Tensor:
    """Per-position channel mixing: x (B, X, Ci) with weights w (X, Ci, Co)."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 3 or w.ndim != 3 or x.shape[1:] != w.shape[:2]:
        raise GradientError(
            f"channel_mix shape mismatch: x {x.shape} vs w {w.shape}"
        )
    out = np.matmul(x.data[:, :, None, :], w.data)[:, :, 0, :]

    def vjp_x(g):
        return np.matmul(g[:, :, None, :], w.data.transpose(0, 2, 1))[:, :, 0, :]

    def vjp_w(g):
        return np.matmul(x.data.transpose(1, 2, 0), g.transpose(1, 0, 2))

    return make_node(out, (x, w), (vjp_x, vjp_w), "channel_mix")


def gelu(a) -> Tensor:
    """Exact GELU, x * Phi(x) with the Gaussian CDF."""
    a = _as_tensor(a)
    phi = 0.5 * (1.0 + erf(a.data / _SQRT2))
    out = a.data * phi

    def vjp(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * a.data * a.data)
        return g * (phi + a.data * pdf)

    return make_node(out, (a,), (vjp,), "gelu")


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.data)
    return make_node(out, (a,), (lambda g: g * (1.0 - out * out),), "tanh")


def identity(a) -> Tensor:
    return _as_tensor(a)


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "gelu": gelu,
    "tanh": tanh,
    "identity": identity,
}


def tensor_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, a.shape).copy()
        g_exp = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(g_exp, a.shape).copy()

    return make_node(out, (a,), (vjp,), "sum")


def tensor_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.size / max(out.size, 1)

    def vjp(g):
        if axis is None:
            g_exp = g
        else:
            g_exp = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(g_exp, a.shape) / count

    return make_node(out, (a,), (vjp,), "mean")


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    parts = [_as_tensor(t) for t in tensors]
    datas = [p.data for p in parts]
    out = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i):
        lo, hi = offsets[i], offsets[i + 1]

        def vjp(g):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            return g[tuple(sl)]

        return vjp

    return make_node(out, parts, [make_vjp(i) for i in range(len(parts))], "concat")


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = _as_tensor(a)
    return make_node(
        a.data.reshape(shape),
        (a,),
        (lambda g: g.reshape(a.shape),),
        "reshape",
    )


def getitem(a, idx) -> Tensor:
    """Basic (slice / int / ellipsis) indexing; advanced indexing is unsupported."""
    a = _as_tensor(a)
    out = a.data[idx]

    def vjp(g):
        full = np.zeros(a.shape)
        full[idx] = g
        return full

    return make_node(out, (a,), (vjp,), "getitem")


def _toposort(root: Tensor) -> list[Tensor]:
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Reverse-accumulate d(loss)/d(leaf) for every reachable leaf.

    Returns the gradient map keyed by leaf identity.  Leaf gradients
    accumulate across calls (documented accumulation contract); intermediate
    node accumulators are freshly zero-initialized on every pass.  A
    parameter not reachable from ``loss`` simply receives no entry, which
    callers must read as a zero gradient.
    """
    if loss.data.size != 1:
        raise GradientError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = _toposort(loss)
    for node in order:
        if node._parents:
            node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node.grad is None or not node._parents:
            continue
        for parent, vjp in zip(node._parents, node._vjps):
            if not (parent.requires_grad or parent._parents):
                continue
            contrib = vjp(node.grad)
            if parent.grad is None:
                parent.grad = np.asarray(contrib, dtype=np.float64).reshape(parent.shape)
            else:
                parent.grad = parent.grad + contrib
    return {
        node: node.grad
        for node in order
        if not node._parents and node.requires_grad and node.grad is not None
    }


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


class AdamState:
    """First/second moment accumulators plus the shared step counter."""

    def __init__(self, params: Sequence[Tensor]):
        self.step = 0
        self.m: dict[Tensor, np.ndarray] = {p: np.zeros(p.shape) for p in params}
        self.v: dict[Tensor, np.ndarray] = {p: np.zeros(p.shape) for p in params}


def adam_step(
    params: Sequence[Tensor],
    grads,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
):
    """One Adam update with bias correction, in place on ``params``.

    ``grads`` maps parameter identity to a gradient array (the return value
    of ``backward``); a missing entry counts as a zero gradient.
    """
    if lr <= 0:
        raise GradientError("adam_step needs lr > 0")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for p in params:
        g = grads.get(p) if hasattr(grads, "get") else None
        if g is None:
            g = p.grad
        if g is None:
            g = np.zeros(p.shape)
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape:
            raise GradientError(
                f"adam_step gradient shape {g.shape} != param shape {p.data.shape}"
            )
        m = state.m[p]
        v = state.v[p]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        update = (lr / c1) * m / (np.sqrt(v / c2) + eps)
        p.data -= update
        _ensure_finite(p.data, "adam_step")
    return params, state


def finite_difference_gradient(f, x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, the autodiff oracle."""
    if h <= 0:
        raise GradientError("finite_difference_gradient needs h > 0")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    flat = base.reshape(-1)
    out = np.empty_like(flat)

    def evaluate(values: np.ndarray) -> float:
        res = f(Tensor(values.reshape(base.shape)))
        return float(res.data) if isinstance(res, Tensor) else float(res)

    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + h
        fp = evaluate(base)
        flat[i] = saved - h
        fm = evaluate(base)
        flat[i] = saved
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise TrainingDiverged(
                f"finite_difference_gradient: non-finite f at coordinate {i}"
            )
        out[i] = (fp - fm) / (2.0 * h)
    return out.reshape(base.shape)
