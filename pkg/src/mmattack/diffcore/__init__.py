"""Minimal reverse-mode differentiation over dense float64 tensors."""

from .grad import Expression, evaluate, finite_diff_check, value_and_grad
from .losses import embedding_distance, kl_embedding_loss
from .tensor import (
    Tensor,
    broadcast_to,
    compute_dtype,
    concat,
    constant,
    embedding_lookup,
    exp,
    gelu,
    l2_norm,
    layer_norm,
    log,
    log_softmax,
    matmul,
    mean,
    parameter,
    reshape,
    softmax,
    sqrt,
    take_index,
    tanh,
    transpose,
    tsum,
)

__all__ = [
    "Expression",
    "Tensor",
    "broadcast_to",
    "compute_dtype",
    "concat",
    "constant",
    "embedding_distance",
    "embedding_lookup",
    "evaluate",
    "exp",
    "finite_diff_check",
    "gelu",
    "l2_norm",
    "kl_embedding_loss",
    "layer_norm",
    "log",
    "log_softmax",
    "matmul",
    "mean",
    "parameter",
    "reshape",
    "softmax",
    "sqrt",
    "take_index",
    "tanh",
    "transpose",
    "tsum",
    "value_and_grad",
]
