from .checkpoint import decode_params, encode_params, load_checkpoint, save_checkpoint
from .optim import Adam, OptimizerState, OptimizerStateError, adam_step
from .tensor import (
    DimensionError,
    NumericError,
    Tensor,
    add,
    as_tensor,
    bce_with_logits,
    concat,
    l2_normalize,
    matmul,
    mean,
    mul,
    reshape,
    scale,
    sigmoid,
    softmax,
    softmax_rows,
    sub,
    sum_,
    take,
    transpose,
)

__all__ = [
    "Adam",
    "DimensionError",
    "NumericError",
    "OptimizerState",
    "OptimizerStateError",
    "Tensor",
    "adam_step",
    "add",
    "as_tensor",
    "bce_with_logits",
    "concat",
    "decode_params",
    "encode_params",
    "l2_normalize",
    "load_checkpoint",
    "matmul",
    "mean",
    "mul",
    "reshape",
    "save_checkpoint",
    "scale",
    "sigmoid",
    "softmax",
    "softmax_rows",
    "sub",
    "sum_",
    "take",
    "transpose",
]
