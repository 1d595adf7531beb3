"""Central-difference verification of reverse-mode gradients."""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from .layers import ParameterSet
from .tensor import Tensor, no_grad


@dataclass(frozen=True)
class TensorCheck:
    name: str
    max_rel_error: float
    passed: bool


@dataclass(frozen=True)
class GradCheckReport:
    entries: tuple[TensorCheck, ...]
    rtol: float
    eps: float

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def max_rel_error(self) -> float:
        return max((e.max_rel_error for e in self.entries), default=0.0)

    def failures(self) -> list[TensorCheck]:
        return [e for e in self.entries if not e.passed]


def relative_error(a: np.ndarray, n: np.ndarray) -> np.ndarray:
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: ParameterSet,
    eps: float = 1e-4,
    rtol: float = 1e-3,
) -> GradCheckReport:
    """Compare backward() gradients against finite differences entry by entry.

    ``loss_fn`` must be deterministic and read the current values of
    ``params``. Losses with kinks (hard masks, ReLU at zero) are outside what
    this can certify.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    params.zero_grad()
    loss_fn().backward()
    analytic = {k: g.copy() for k, g in params.grads().items()}

    entries = []
    with no_grad():
        for name, p in params.items():
            p.data = np.ascontiguousarray(p.data)
            flat = p.data.reshape(-1)
            numeric = np.empty_like(flat)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                up = loss_fn().item()
                flat[i] = orig - eps
                down = loss_fn().item()
                flat[i] = orig
                numeric[i] = (up - down) / (2 * eps)
            err = relative_error(analytic[name].reshape(-1), numeric)
            worst = float(err.max()) if err.size else 0.0
            entries.append(TensorCheck(name, worst, worst <= rtol))
    return GradCheckReport(tuple(entries), rtol, eps)
