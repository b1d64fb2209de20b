from .functional import (
    NORM_EPS,
    avg_pool2d,
    batch_norm,
    conv2d,
    cross_entropy,
    global_avg_pool,
    l2_norm,
    linear,
    normalize,
)
from .optim import SGD, SgdState, sgd_step
from .tensor import (
    GradTape,
    Tensor,
    absolute,
    add,
    backward,
    div,
    exp,
    log,
    matmul,
    mul,
    neg,
    no_grad,
    power,
    relu,
    reshape,
    sqrt,
    sub,
    transpose,
    tmean,
    tsum,
)

__all__ = [
    "NORM_EPS",
    "SGD",
    "GradTape",
    "SgdState",
    "Tensor",
    "absolute",
    "add",
    "avg_pool2d",
    "backward",
    "batch_norm",
    "conv2d",
    "cross_entropy",
    "div",
    "exp",
    "global_avg_pool",
    "l2_norm",
    "linear",
    "log",
    "matmul",
    "mul",
    "neg",
    "no_grad",
    "normalize",
    "power",
    "relu",
    "reshape",
    "sgd_step",
    "sqrt",
    "sub",
    "tmean",
    "transpose",
    "tsum",
]
