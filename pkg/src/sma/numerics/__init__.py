from .adam import AdamState, adam_step
from .gradcheck import GradCheckReport, NonDeterministicForward, check_gradients
from .tensor import (
    EmptySupportError,
    Tape,
    Tensor,
    add,
    as_tensor,
    backward,
    bce_with_logits,
    broadcast_to,
    concat,
    default_dtype,
    gelu,
    getitem,
    layer_norm,
    matmul,
    mean,
    mul,
    precision,
    relu,
    reshape,
    set_default_dtype,
    softmax,
    sub,
    transpose,
    tsum,
)

__all__ = [
    "AdamState",
    "EmptySupportError",
    "GradCheckReport",
    "NonDeterministicForward",
    "Tape",
    "Tensor",
    "adam_step",
    "add",
    "as_tensor",
    "backward",
    "bce_with_logits",
    "broadcast_to",
    "check_gradients",
    "concat",
    "default_dtype",
    "gelu",
    "getitem",
    "layer_norm",
    "matmul",
    "mean",
    "mul",
    "precision",
    "relu",
    "reshape",
    "set_default_dtype",
    "softmax",
    "sub",
    "transpose",
    "tsum",
]
