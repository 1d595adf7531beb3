"""Differentiable float64 computation: tensors, layers, optimizer, gradient checks."""

from .checkpoint import load_matrix, load_tensors, save_matrix, save_tensors
from .gradcheck import GradCheckReport, check_gradients
from .layers import (
    Dropout,
    EncoderLayer,
    FeedForward,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    ParameterSet,
    param,
)
from .optim import OptimizerState, adam_step
from .tensor import (
    NonFiniteError,
    Tensor,
    as_tensor,
    concat,
    exp,
    gelu,
    l2_normalize,
    layer_norm,
    log,
    log_softmax,
    logsumexp,
    no_grad,
    relu,
    softmax,
    sqrt,
    stack,
    tanh,
)


def backward(loss: Tensor, params: ParameterSet | None = None) -> dict:
    """Run the reverse pass and return gradients keyed by parameter name.

    Parameters in ``params`` that the loss does not reach get zero gradients.
    """
    if params is not None:
        params.zero_grad()
    loss.backward()
    return params.grads() if params is not None else {}


__all__ = [
    "Dropout", "EncoderLayer", "FeedForward", "GradCheckReport", "LayerNorm", "Linear",
    "Module", "MultiHeadAttention", "NonFiniteError", "OptimizerState", "ParameterSet",
    "Tensor", "adam_step", "as_tensor", "backward", "check_gradients", "concat", "exp", "gelu",
    "l2_normalize", "layer_norm", "load_matrix", "load_tensors", "log", "log_softmax",
    "logsumexp", "no_grad", "param", "relu", "save_matrix", "save_tensors", "softmax",
    "sqrt", "stack", "tanh",
]
