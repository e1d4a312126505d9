from .gradcheck import NonFiniteLoss, grad_check
from .tensor import (
    SIGMOID_CLAMP,
    ShapeError,
    Tape,
    Tensor,
    add,
    as_tensor,
    concat,
    default_dtype,
    dropout,
    embedding_gather,
    exp,
    gelu,
    layernorm,
    linear,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    precision,
    reshape,
    scale,
    sigmoid,
    softmax,
    sub,
    sum,
    take,
    transpose,
)

__all__ = [
    "NonFiniteLoss", "grad_check", "SIGMOID_CLAMP", "ShapeError", "Tape", "Tensor", "add",
    "as_tensor", "concat", "default_dtype", "dropout", "embedding_gather", "exp", "gelu",
    "layernorm", "linear", "log", "log_softmax", "matmul", "mean", "mul", "precision",
    "reshape", "scale", "sigmoid", "softmax", "sub", "sum", "take", "transpose",
]
