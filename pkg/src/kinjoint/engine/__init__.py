"""Minimal reverse-mode tensor engine."""
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import GradCheckReport, finite_diff_check, finite_diff_report
from .kernels import BACKEND
from .optim import Adam, AdamState, adam_step
from .tensor import (
    LOG_FLOOR,
    GradTape,
    ShapeError,
    Tensor,
    add,
    as_tensor,
    backward,
    build_tape,
    clamp_min,
    concat,
    conv2d,
    exp,
    flatten,
    gather,
    get_default_dtype,
    getitem,
    is_grad_enabled,
    log,
    matmul,
    maxpool2d,
    mean,
    mul,
    neg,
    no_grad,
    relu,
    reshape,
    set_default_dtype,
    sigmoid,
    softmax,
    stack,
    sub,
    tmin,
    transpose,
    tsum,
    upsample2d,
    weighted_cross_entropy,
)

_OPS = {
    "add": add,
    "mul": mul,
    "matmul": matmul,
    "conv2d": conv2d,
    "relu": relu,
    "sigmoid": sigmoid,
    "maxpool2d": maxpool2d,
    "flatten": flatten,
    "concat": lambda *xs, axis=0: concat(xs, axis=axis),
    "log": log,
    "exp": exp,
}


def forward_op(kind, *inputs, **params):
    """Dispatch one of the named primitive ops by string."""
    try:
        fn = _OPS[kind]
    except KeyError:
        raise ValueError(f"unknown op kind {kind!r}; expected one of {sorted(_OPS)}") from None
    return fn(*inputs, **params)
