"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from collections.abc import Callable, Mapping
from dataclasses import dataclass

import numpy as np

from ..errors import GradientCheckError
from .tensor import Parameter, Tensor, backward


@dataclass
class GradCheckReport:
    n_checked: int
    worst_param: str | None
    worst_index: tuple | None
    analytic: float
    numeric: float
    rel_error: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.rel_error <= self.tol

    def __str__(self):
        if self.worst_param is None:
            return "checked 0 coordinates"
        return (
            f"checked {self.n_checked} coordinates; worst {self.worst_param}{list(self.worst_index)}: "
            f"analytic={self.analytic!r} numeric={self.numeric!r} rel_error={self.rel_error:.3e} (tol {self.tol:g})"
        )


def _as_named(params) -> dict[str, Parameter]:
    if isinstance(params, Mapping):
        return dict(params)
    return {p.name or f"param{i}": p for i, p in enumerate(params)}


def finite_diff_check(
    loss_fn: Callable[[], Tensor],
    params,
    eps: float = 1e-5,
    tol: float = 1e-4,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
    raise_on_failure: bool = True,
) -> GradCheckReport:
    """Compare backprop gradients of ``loss_fn()`` against central differences.

    ``loss_fn`` must be deterministic (no train-mode dropout).  When
    ``max_coords`` is set and the parameters hold more coordinates than that,
    a random subset of ``max_coords`` coordinates drawn from ``rng`` is checked.
    The error measure is ``|analytic - numeric| / max(1, |analytic|)``.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    named = _as_named(params)
    for p in named.values():
        p.zero_grad()
    backward(loss_fn())
    analytic = {name: p.grad.copy() for name, p in named.items()}

    coords = [(name, idx) for name, p in named.items() for idx in np.ndindex(p.data.shape)]
    if max_coords is not None and len(coords) > max_coords:
        rng = rng if rng is not None else np.random.default_rng(0)
        pick = np.sort(rng.choice(len(coords), size=max_coords, replace=False))
        coords = [coords[i] for i in pick]

    worst = (None, None, 0.0, 0.0, -1.0)
    for name, idx in coords:
        buf = named[name].data
        orig = buf[idx]
        buf[idx] = orig + eps
        up = float(loss_fn().data)
        buf[idx] = orig - eps
        down = float(loss_fn().data)
        buf[idx] = orig
        numeric = (up - down) / (2.0 * eps)
        a = float(analytic[name][idx])
        err = abs(a - numeric) / max(1.0, abs(a))
        if err > worst[4]:
            worst = (name, idx, a, numeric, err)

    report = GradCheckReport(len(coords), worst[0], worst[1], worst[2], worst[3], max(worst[4], 0.0), tol)
    if raise_on_failure and not report.passed:
        raise GradientCheckError(f"gradient mismatch: {report}")
    return report
