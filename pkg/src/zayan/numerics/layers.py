"""Parameter containers and the dense building blocks used by both models."""

from __future__ import annotations

from collections.abc import Iterator

import numpy as np

from .tensor import Tensor, gelu, layer_norm, softmax


class ParameterSet:
    """Named tensors with insertion-ordered, run-stable iteration."""

    def __init__(self, items=None):
        self._items: dict[str, Tensor] = {}
        for name, t in (items or {}).items():
            self[name] = t

    def __setitem__(self, name: str, t: Tensor) -> None:
        if name in self._items:
            raise KeyError(f"duplicate parameter name {name!r}")
        self._items[name] = t

    def __getitem__(self, name: str) -> Tensor:
        return self._items[name]

    def __contains__(self, name: str) -> bool:
        return name in self._items

    def __iter__(self) -> Iterator[str]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def items(self):
        return self._items.items()

    def values(self):
        return self._items.values()

    def count(self) -> int:
        """Total number of scalar parameters."""
        return int(sum(t.size for t in self._items.values()))

    def zero_grad(self) -> None:
        for t in self._items.values():
            t.grad = np.zeros_like(t.data)

    def grads(self) -> dict[str, np.ndarray]:
        return {
            k: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for k, t in self._items.items()
        }

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._items.items()}

    def load(self, values: dict[str, np.ndarray]) -> None:
        for k, t in self._items.items():
            v = np.asarray(values[k], dtype=np.float64)
            if v.shape != t.shape:
                raise ValueError(f"shape mismatch for {k}: {v.shape} vs {t.shape}")
            t.data = v.copy()

    def __or__(self, other: "ParameterSet") -> "ParameterSet":
        out = ParameterSet(self._items)
        for k, t in other.items():
            out[k] = t
        return out


def param(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, op="param")


class Module:
    """Base class: parameters are discovered from attributes in definition order."""

    training = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, v in enumerate(value):
                    if isinstance(v, Module):
                        yield from v.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> ParameterSet:
        return ParameterSet(dict(self.named_parameters()))

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for v in value:
                    if isinstance(v, Module):
                        yield from v.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        bound = 1.0 / np.sqrt(n_in)
        self.weight = param(rng.uniform(-bound, bound, size=(n_in, n_out)))
        self.bias = param(np.zeros(n_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.weight = param(np.ones(dim))
        self.bias = param(np.zeros(dim))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.weight, self.bias, self.eps)


class Dropout(Module):
    """Inverted dropout; the caller supplies the random stream."""

    def __init__(self, p: float):
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {p}")
        self.p = p

    def __call__(self, x: Tensor, rng: np.random.Generator | None) -> Tensor:
        if not self.training or self.p == 0.0 or rng is None:
            return x
        keep = rng.random(x.shape) >= self.p
        return x * (keep / (1.0 - self.p))


class MultiHeadAttention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator, dropout: float = 0.0):
        if dim % heads:
            raise ValueError(f"heads ({heads}) must divide model width ({dim})")
        self.heads = heads
        self.head_dim = dim // heads
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.out = Linear(dim, dim, rng)
        self.drop = Dropout(dropout)

    def _split(self, x: Tensor) -> Tensor:
        b, m, _ = x.shape
        return x.reshape(b, m, self.heads, self.head_dim).transpose(0, 2, 1, 3)

    def __call__(self, x: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        b, m, d = x.shape
        q, k, v = self._split(self.q(x)), self._split(self.k(x)), self._split(self.v(x))
        scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(self.head_dim))
        attn = self.drop(softmax(scores, axis=-1), rng)
        ctx = (attn @ v).transpose(0, 2, 1, 3).reshape(b, m, d)
        return self.out(ctx)


class FeedForward(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator, dropout: float = 0.0):
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)
        self.drop = Dropout(dropout)

    def __call__(self, x: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        return self.fc2(self.drop(gelu(self.fc1(x)), rng))


class EncoderLayer(Module):
    """Pre-norm Transformer encoder block."""

    def __init__(self, dim: int, heads: int, ff_dim: int, rng: np.random.Generator, dropout: float = 0.0):
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng, dropout)
        self.norm2 = LayerNorm(dim)
        self.ff = FeedForward(dim, ff_dim, rng, dropout)
        self.drop = Dropout(dropout)

    def __call__(self, x: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        x = x + self.drop(self.attn(self.norm1(x), rng), rng)
        return x + self.drop(self.ff(self.norm2(x), rng), rng)
