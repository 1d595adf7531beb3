"""Minimal reverse-mode automatic differentiation over numpy arrays.

Every value is float64. Each forward operation checks its output for
non-finite entries and raises :class:`NonFiniteError` naming the operation,
so a NaN is caught where it is born rather than three layers later.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np

_state = threading.local()


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""

    def __init__(self, op: str, where: str = "forward"):
        super().__init__(f"non-finite value produced by {op!r} during {where} pass")
        self.op = op
        self.where = where


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph construction in the current thread."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def as_tensor(x) -> "Tensor":
    return x if isinstance(x, Tensor) else Tensor(x)


class Tensor:
    """An n-dimensional float64 array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- graph plumbing -------------------------------------------------

    @classmethod
    def _make(cls, data, parents, op, backward):
        data = np.asarray(data, dtype=np.float64)
        if not np.isfinite(data).all():
            raise NonFiniteError(op)
        out = cls(data, op=op)
        if is_grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        """Populate ``.grad`` of every tracked ancestor with d(self)/d(ancestor)."""
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                node.grad = g if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if not np.isfinite(pg).all():
                    raise NonFiniteError(node.op, "backward")
                key = id(p)
                grads[key] = grads[key] + pg if key in grads else pg

    # -- elementwise arithmetic ----------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        a, b = self.shape, other.shape
        return Tensor._make(
            self.data + other.data, (self, other), "add",
            lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)),
        )

    __radd__ = __add__

    def __neg__(self):
        return Tensor._make(-self.data, (self,), "neg", lambda g: (-g,))

    def __sub__(self, other):
        other = as_tensor(other)
        a, b = self.shape, other.shape
        return Tensor._make(
            self.data - other.data, (self, other), "sub",
            lambda g: (_unbroadcast(g, a), _unbroadcast(-g, b)),
        )

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        x, y = self.data, other.data
        return Tensor._make(
            x * y, (self, other), "mul",
            lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        x, y = self.data, other.data
        return Tensor._make(
            x / y, (self, other), "div",
            lambda g: (_unbroadcast(g / y, x.shape), _unbroadcast(-g * x / (y * y), y.shape)),
        )

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, exponent: float):
        x = self.data
        return Tensor._make(
            x ** exponent, (self,), "pow",
            lambda g: (g * exponent * x ** (exponent - 1),),
        )

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data
        if a.ndim < 2 or b.ndim < 2:
            raise ValueError("matmul operands must be at least 2-D")
        if a.ndim > 2 and b.ndim == 2:
            # batched rows times a weight matrix: one 2-D product each way
            a2 = a.reshape(-1, a.shape[-1])

            def backward_2d(g):
                g2 = g.reshape(-1, g.shape[-1])
                return (g2 @ b.T).reshape(a.shape), a2.T @ g2

            return Tensor._make((a2 @ b).reshape(a.shape[:-1] + (b.shape[1],)), (self, other), "matmul", backward_2d)

        def backward(g):
            ga = g @ np.swapaxes(b, -1, -2)
            gb = np.swapaxes(a, -1, -2) @ g
            return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

        return Tensor._make(a @ b, (self, other), "matmul", backward)

    # -- reductions and shape ------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        shape = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), "sum", backward)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        old = self.shape
        return Tensor._make(self.data.reshape(*shape), (self,), "reshape", lambda g: (g.reshape(old),))

    def transpose(self, *axes):
        axes = axes or tuple(reversed(range(self.ndim)))
        inv = np.argsort(axes)
        return Tensor._make(
            self.data.transpose(axes), (self,), "transpose", lambda g: (g.transpose(inv),)
        )

    @property
    def T(self):
        return self.transpose()

    def swapaxes(self, a: int, b: int):
        return Tensor._make(
            np.swapaxes(self.data, a, b), (self,), "swapaxes", lambda g: (np.swapaxes(g, a, b),)
        )

    def __getitem__(self, idx):
        shape = self.shape

        def backward(g):
            out = np.zeros(shape)
            np.add.at(out, idx, g)
            return (out,)

        return Tensor._make(self.data[idx], (self,), "getitem", backward)


# -- free functions -----------------------------------------------------


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return Tensor._make(y, (x,), "exp", lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    d = x.data
    return Tensor._make(np.log(d), (x,), "log", lambda g: (g / d,))


def sqrt(x: Tensor) -> Tensor:
    y = np.sqrt(x.data)
    return Tensor._make(y, (x,), "sqrt", lambda g: (g * 0.5 / y,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return Tensor._make(y, (x,), "tanh", lambda g: (g * (1.0 - y * y),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._make(x.data * mask, (x,), "relu", lambda g: (g * mask,))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    d = x.data
    inner = _GELU_C * (d + 0.044715 * d * d * d)
    t = np.tanh(inner)
    y = 0.5 * d * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * d * d)
        return (g * (0.5 * (1.0 + t) + 0.5 * d * (1.0 - t * t) * dinner),)

    return Tensor._make(y, (x,), "gelu", backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor._make(y, (x,), "softmax", backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def backward(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return Tensor._make(y, (x,), "log_softmax", backward)


def logsumexp(x: Tensor, axis: int = -1, where: np.ndarray | None = None) -> Tensor:
    """log(sum(exp(x))) along ``axis``, optionally restricted to ``where``."""
    d = x.data
    w = np.ones_like(d, dtype=bool) if where is None else np.broadcast_to(where, d.shape)
    if not w.any(axis=axis).all():
        raise ValueError("logsumexp over an empty selection")
    masked = np.where(w, d, -np.inf)
    mx = masked.max(axis=axis, keepdims=True)
    e = np.where(w, np.exp(masked - mx), 0.0)
    s = e.sum(axis=axis, keepdims=True)
    y = (np.log(s) + mx).squeeze(axis)
    p = e / s

    def backward(g):
        return (np.expand_dims(g, axis) * p,)

    return Tensor._make(y, (x,), "logsumexp", backward)


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    d = x.data
    n = np.sqrt((d * d).sum(axis=axis, keepdims=True))
    n = np.maximum(n, eps)
    y = d / n

    def backward(g):
        return ((g - y * (g * y).sum(axis=axis, keepdims=True)) / n,)

    return Tensor._make(y, (x,), "l2_normalize", backward)


def layer_norm(x: Tensor, weight: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    d = x.data
    mu = d.mean(axis=-1, keepdims=True)
    xc = d - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    w, b = weight.data, bias.data
    y = xhat * w + b
    n = d.shape[-1]

    def backward(g):
        gw = _unbroadcast(g * xhat, w.shape)
        gb = _unbroadcast(g, b.shape)
        gx_hat = g * w
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).sum(axis=-1, keepdims=True) / n)
        return gx, gw, gb

    return Tensor._make(y, (x, weight, bias), "layer_norm", backward)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), "concat", backward)


def stack(tensors: list[Tensor], axis: int = 0) -> Tensor:
    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return Tensor._make(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), "stack", backward)
