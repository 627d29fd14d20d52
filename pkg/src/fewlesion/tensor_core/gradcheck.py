"""Central finite-difference check of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .tensor import Tensor, backward, no_grad

Builder = Callable[[np.random.Generator, dict], tuple[dict, Callable[[], Tensor]]]


@dataclass
class GradCheckReport:
    worst: float
    per_leaf: dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-4
    checked: int = 0

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.worst) and self.worst < self.tolerance)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps near-zero gradients from amplifying rounding noise."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def _make_input(rng: np.random.Generator, spec) -> Tensor:
    if isinstance(spec, tuple) and len(spec) == 2 and isinstance(spec[0], tuple):
        shape, (lo, hi) = spec
        return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)
    return Tensor(rng.standard_normal(spec), requires_grad=True)


def check_leaves(loss_fn: Callable[[], Tensor], leaves: Mapping[str, Tensor], tolerance: float = 1e-4,
                 h: float = 1e-5) -> GradCheckReport:
    for t in leaves.values():
        t.grad = None
    backward(loss_fn())
    report = GradCheckReport(worst=0.0, tolerance=tolerance)
    for name, t in leaves.items():
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = np.zeros_like(t.data)
        t.data = np.ascontiguousarray(t.data)
        flat = t.data.reshape(-1)
        with no_grad():
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = loss_fn().item()
                flat[i] = orig - h
                down = loss_fn().item()
                flat[i] = orig
                numeric.reshape(-1)[i] = (up - down) / (2 * h)
        err = float(relative_error(analytic, numeric).max()) if t.size else 0.0
        report.per_leaf[name] = err
        report.worst = max(report.worst, err)
        report.checked += t.size
    return report


def grad_check(builder: Builder, input_spec: Mapping[str, object], tolerance: float = 1e-4,
               h: float = 1e-5, seed: int = 0) -> GradCheckReport:
    """Compare analytic and numeric gradients for every parameter and input element.

    ``input_spec`` maps input names to a shape (standard normal draw) or a
    ``(shape, (low, high))`` pair (uniform draw). ``builder(rng, inputs)``
    returns the parameter tensors and a zero-argument loss closure.
    """
    rng = np.random.default_rng(seed)
    inputs = {name: _make_input(rng, spec) for name, spec in input_spec.items()}
    params, loss_fn = builder(rng, inputs)
    leaves = {**params, **{f"input:{k}": v for k, v in inputs.items()}}
    return check_leaves(loss_fn, leaves, tolerance=tolerance, h=h)
