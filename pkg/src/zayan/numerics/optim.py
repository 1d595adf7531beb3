"""Adam with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import ParameterSet


@dataclass
class OptimizerState:
    lr: float
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.weight_decay < 0:
            raise ValueError(f"weight decay must be non-negative, got {self.weight_decay}")


def adam_step(params: ParameterSet, opt: OptimizerState) -> ParameterSet:
    """Apply one in-place update to ``params`` from their populated gradients.

    Weight decay shrinks parameters directly (``p -= lr * wd * p``) and is not
    folded into the moment estimates.
    """
    opt.step += 1
    bc1 = 1.0 - opt.beta1 ** opt.step
    bc2 = 1.0 - opt.beta2 ** opt.step
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = opt.first_moment.get(name)
        if m is None:
            m = opt.first_moment[name] = np.zeros_like(p.data)
            opt.second_moment[name] = np.zeros_like(p.data)
        v = opt.second_moment[name]
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        if opt.weight_decay:
            p.data = p.data * (1.0 - opt.lr * opt.weight_decay)
        p.data = p.data - opt.lr * (m / bc1) / (np.sqrt(v / bc2) + opt.eps)
    return params
