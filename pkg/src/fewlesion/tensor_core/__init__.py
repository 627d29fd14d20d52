from .tensor import Tape, Tensor, as_tensor, backward, is_grad_enabled, no_grad
from .ops import (
    BCE_EPS,
    add,
    avg_pool2d,
    bce_loss,
    clamp,
    concat,
    conv2d,
    div,
    exp,
    flatten,
    global_avg_pool,
    index,
    linear,
    log,
    log_softmax,
    matmul,
    max_pool2d,
    mean,
    mul,
    nll_loss,
    relu,
    reshape,
    sigmoid,
    sqrt,
    stack_rows,
    sub,
    sum,
    transpose,
    power,
    neg,
    upsample_nearest,
)
from .adam import Adam, AdamState, adam_step
from .gradcheck import GradCheckReport, check_leaves, grad_check, relative_error
from . import checkpoint

__all__ = [
    "Tape", "Tensor", "as_tensor", "backward", "is_grad_enabled", "no_grad",
    "BCE_EPS", "add", "avg_pool2d", "bce_loss", "clamp", "concat", "conv2d", "div", "exp",
    "flatten", "global_avg_pool", "index", "linear", "log", "log_softmax", "matmul",
    "max_pool2d", "mean", "mul", "nll_loss", "relu", "reshape", "sigmoid", "sqrt", "stack_rows", "sub", "sum", "transpose", "power", "neg",
    "upsample_nearest", "Adam", "AdamState", "adam_step", "GradCheckReport", "check_leaves",
    "grad_check", "relative_error", "checkpoint",
]
