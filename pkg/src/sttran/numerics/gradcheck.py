"""Central-difference verification of taped gradients."""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from . import tensor as _tensor
from .params import Parameter
from .tensor import Tensor


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: str
    n_checked: int
    per_param: dict[str, float] = field(default_factory=dict)

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error <= tol


@contextlib.contextmanager
def corrupted_backward():
    """Make matmul report a wrong gradient (negative control for grad_check)."""
    saved = _tensor._CORRUPT_BACKWARD
    _tensor._CORRUPT_BACKWARD = True
    try:
        yield
    finally:
        _tensor._CORRUPT_BACKWARD = saved


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def grad_check(
    f: Callable[[], Tensor],
    params: Iterable[Parameter],
    seed: int = 0,
    h: float = 1e-5,
    max_per_param: int | None = None,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare the taped gradient of ``f()`` with central differences.

    ``f`` must rebuild its graph on every call and be deterministic. When
    ``max_per_param`` is set, that many entries of each parameter are probed,
    chosen with ``seed``; otherwise every entry is probed.
    """
    params = list(params)
    for p in params:
        p.grad = None
    f().backward()
    analytic = {p.name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for p in params}

    rng = np.random.default_rng(seed)
    worst, worst_name, total = 0.0, "", 0
    per_param: dict[str, float] = {}
    for p in params:
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_per_param is not None and flat.size > max_per_param:
            idx = np.sort(rng.choice(flat.size, size=max_per_param, replace=False))
        numeric = np.empty(len(idx))
        for n, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            up = f().item()
            flat[i] = orig - h
            down = f().item()
            flat[i] = orig
            numeric[n] = (up - down) / (2.0 * h)
        err = relative_error(analytic[p.name].reshape(-1)[idx], numeric, floor)
        e = float(err.max()) if err.size else 0.0
        per_param[p.name] = e
        total += len(idx)
        if e > worst:
            worst, worst_name = e, p.name
    for p in params:
        p.grad = None
    return GradCheckReport(worst, worst_name, total, per_param)
