from .tensor import (
    DimensionError,
    Param,
    ParameterError,
    Tape,
    Tensor,
    UndefinedLossError,
    add,
    as_tensor,
    attention,
    concat,
    cross_entropy,
    gelu,
    layer_norm,
    linear,
    matmul,
    mean_all,
    mul,
    no_tape,
    repeat_cols,
    reshape,
    scale,
    scatter_rows,
    softmax_rows,
    sum_all,
    take_rows,
    transpose,
)
from .optim import AdamState, ConsistencyError, LrSchedule, adam_step, lr_at
from .gradcheck import EvaluationError, grad_check
from .rng import make_rng
from . import checkpoint

__all__ = [
    "AdamState", "ConsistencyError", "DimensionError", "EvaluationError", "LrSchedule",
    "Param", "ParameterError", "Tape", "Tensor", "UndefinedLossError", "adam_step", "add",
    "as_tensor", "attention", "checkpoint", "concat", "cross_entropy", "gelu", "grad_check",
    "layer_norm", "linear", "lr_at", "make_rng", "matmul", "mean_all", "mul", "no_tape",
    "repeat_cols", "reshape", "scale", "scatter_rows", "softmax_rows", "sum_all", "take_rows",
    "transpose",
]
