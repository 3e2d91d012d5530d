"""Dense float64 primitives with reverse-mode gradients."""

from .check import GradCheckReport, finite_diff_check
from .optim import sgd_step, zero_grad
from .rng import RngStream
from .tensor import (
    EVAL,
    TRAIN,
    Parameter,
    Tensor,
    add,
    affine,
    as_tensor,
    backward,
    cross_entropy,
    dropout,
    matmul,
    mean,
    mul,
    neg,
    relu,
    reshape,
    softmax,
    sq_euclidean,
    sub,
    tsum,
)

__all__ = [
    "EVAL",
    "TRAIN",
    "GradCheckReport",
    "Parameter",
    "RngStream",
    "Tensor",
    "add",
    "affine",
    "as_tensor",
    "backward",
    "cross_entropy",
    "dropout",
    "finite_diff_check",
    "matmul",
    "mean",
    "mul",
    "neg",
    "relu",
    "reshape",
    "sgd_step",
    "softmax",
    "sq_euclidean",
    "sub",
    "tsum",
    "zero_grad",
]
