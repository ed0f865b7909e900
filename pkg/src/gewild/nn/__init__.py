"""Minimal tape-based autodiff engine: tensors, layers, SGD, gradient checks."""

from .tensor import (
    Tensor,
    no_grad,
    add,
    sub,
    mul,
    matmul,
    conv2d,
    maxpool2d,
    relu,
    gelu,
    softmax,
    layer_norm,
    cross_entropy,
    reshape,
    transpose,
    swapaxes,
    concat,
    broadcast_to,
    mean,
    sum_,
    take,
)
from .layers import (
    Parameter,
    Module,
    Linear,
    Conv2d,
    LayerNorm,
    MultiHeadAttention,
    TransformerEncoderLayer,
    PreNormTransformerBlock,
    sinusoidal_positional_encoding,
    bind_parameter_names,
)
from .optim import SGD
from .gradcheck import grad_check, model_grad_check, GradCheckReport

__all__ = [
    "Tensor", "no_grad", "add", "sub", "mul", "matmul", "conv2d", "maxpool2d",
    "relu", "gelu", "softmax", "layer_norm", "cross_entropy", "reshape",
    "transpose", "swapaxes", "concat", "broadcast_to", "mean", "sum_", "take",
    "Parameter", "Module", "Linear", "Conv2d", "LayerNorm",
    "MultiHeadAttention", "TransformerEncoderLayer", "PreNormTransformerBlock",
    "sinusoidal_positional_encoding", "bind_parameter_names",
    "SGD", "grad_check", "model_grad_check", "GradCheckReport",
]
