"""Minimal dense autodiff engine: tensors, ops, Adam, RNG, gradient checks."""

from .adam import AdamState, adam_step
from .gradcheck import GradReport, check_gradients, numeric_gradient, relative_error
from .rng import Rng
from .tensor import (
    DEFAULT_DTYPE,
    OpRecord,
    TensorNode,
    add,
    add_const,
    backward,
    clip,
    concat,
    constant,
    cos,
    dot_last,
    dropout,
    einsum2,
    gather,
    interleave_last,
    layer_norm,
    leaky_relu,
    log,
    mask_fill,
    matmul,
    mean_all,
    mul,
    no_graph,
    pair_swap,
    parameter,
    pow_const,
    reshape,
    scale,
    set_strict,
    sigmoid,
    silu,
    sin,
    softmax_last,
    sum_all,
    tensor,
    transpose,
)

__all__ = [
    "AdamState",
    "adam_step",
    "GradReport",
    "check_gradients",
    "numeric_gradient",
    "relative_error",
    "Rng",
    "DEFAULT_DTYPE",
    "OpRecord",
    "TensorNode",
    "add",
    "add_const",
    "backward",
    "clip",
    "concat",
    "constant",
    "cos",
    "dot_last",
    "dropout",
    "einsum2",
    "gather",
    "interleave_last",
    "layer_norm",
    "leaky_relu",
    "log",
    "mask_fill",
    "matmul",
    "mean_all",
    "mul",
    "no_graph",
    "pair_swap",
    "parameter",
    "pow_const",
    "reshape",
    "scale",
    "set_strict",
    "sigmoid",
    "silu",
    "sin",
    "softmax_last",
    "sum_all",
    "tensor",
    "transpose",
]
