"""Gradient clipping and the AdamW optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .params import Parameter


def clip_global_norm(params: Iterable[Parameter], max_norm: float) -> float:
    """Rescale all gradients so their joint L2 norm is at most ``max_norm``.

    Returns the norm measured before clipping.
    """
    params = [p for p in params if p.grad is not None]
    total = float(np.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params)))
    if total > max_norm:
        scale = max_norm / total
        for p in params:
            p.grad = p.grad * scale
    return total


@dataclass
class OptimizerState:
    lr: float = 1e-5
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    exp_avg: dict[str, np.ndarray] = field(default_factory=dict)
    exp_avg_sq: dict[str, np.ndarray] = field(default_factory=dict)


class AdamW:
    """Adam with decoupled weight decay.

    The decay term shrinks each parameter by ``lr * weight_decay`` directly
    and never enters the moment estimates.
    """

    def __init__(self, params: Iterable[Parameter], lr=1e-5, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.params = list(params)
        self.state = OptimizerState(lr=lr, betas=tuple(betas), eps=eps, weight_decay=weight_decay)
        for p in self.params:
            self.state.exp_avg[p.name] = np.zeros_like(p.data)
            self.state.exp_avg_sq[p.name] = np.zeros_like(p.data)

    def step(self) -> None:
        st = self.state
        st.step += 1
        b1, b2 = st.betas
        bc1 = 1.0 - b1**st.step
        bc2 = 1.0 - b2**st.step
        for p in self.params:
            if st.weight_decay:
                p.data *= 1.0 - st.lr * st.weight_decay
            if p.grad is None:
                continue
            g = p.grad
            m = st.exp_avg[p.name]
            v = st.exp_avg_sq[p.name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            denom = np.sqrt(v / bc2) + st.eps
            p.data -= (st.lr / bc1) * m / denom

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
