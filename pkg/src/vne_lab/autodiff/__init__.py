"""Minimal dense reverse-mode autodiff and the layers the policies use."""
from .nn import (
    MLP,
    Adam,
    EdgeAwareGatLayer,
    EdgeAwareGNN,
    GapPooling,
    GraphBatch,
    GRUCell,
    Linear,
    Module,
    Parameter,
    adam_step,
    load_checkpoint,
    positional_encode,
    save_checkpoint,
)
from .tensor import (
    Tensor,
    as_tensor,
    concat,
    gather_rows,
    masked_log_softmax,
    masked_softmax,
    minimum,
    no_grad,
    stack,
    where,
)

__all__ = [
    "MLP", "Adam", "EdgeAwareGatLayer", "EdgeAwareGNN", "GapPooling", "GraphBatch", "GRUCell",
    "Linear", "Module", "Parameter", "adam_step", "load_checkpoint", "positional_encode",
    "save_checkpoint", "Tensor", "as_tensor", "concat", "gather_rows", "masked_log_softmax",
    "masked_softmax", "minimum", "no_grad", "stack", "where",
]
