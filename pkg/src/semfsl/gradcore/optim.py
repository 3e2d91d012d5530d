"""SGD with heavy-ball momentum and L2 weight decay folded into the velocity."""

from __future__ import annotations

from collections.abc import Iterable

from .tensor import Parameter


def zero_grad(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()


def sgd_step(params: Iterable[Parameter], lr: float, momentum: float = 0.0, weight_decay: float = 0.0) -> None:
    """``v <- m*v + grad + wd*value``; ``value <- value - lr*v``."""
    for p in params:
        v = p.momentum
        v *= momentum
        v += p.grad
        if weight_decay:
            v += weight_decay * p.data
        if lr:
            p.data -= lr * v
