from nodecast.autograd.gradcheck import grad_check
from nodecast.autograd.optim import OptimizerState, WarmupCosine, adam_step
from nodecast.autograd.tensor import (
    Tensor,
    add,
    as_tensor,
    clip,
    concat,
    div,
    dropout,
    exp,
    getitem,
    layer_norm,
    log,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    pearson,
    relu,
    reshape,
    sigmoid,
    softmax,
    sqrt,
    square,
    sub,
    swapaxes,
    tanh,
    track_kinks,
    transpose,
    tsum,
)

__all__ = [
    "OptimizerState",
    "Tensor",
    "WarmupCosine",
    "adam_step",
    "add",
    "as_tensor",
    "clip",
    "concat",
    "div",
    "dropout",
    "exp",
    "getitem",
    "grad_check",
    "layer_norm",
    "log",
    "matmul",
    "mean",
    "mul",
    "neg",
    "no_grad",
    "pearson",
    "relu",
    "reshape",
    "sigmoid",
    "softmax",
    "sqrt",
    "square",
    "sub",
    "swapaxes",
    "tanh",
    "track_kinks",
    "transpose",
    "tsum",
]
