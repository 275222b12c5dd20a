"""Adam with bias correction."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import Parameter


class Adam:
    def __init__(
        self,
        params: Sequence[Parameter],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            p.m = self.beta1 * p.m + (1.0 - self.beta1) * g
            p.v = self.beta2 * p.v + (1.0 - self.beta2) * (g * g)
            m_hat = p.m / bc1
            v_hat = p.v / bc2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def adam_step(
    params: Sequence[Parameter],
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    t: int = 1,
) -> None:
    """One-shot functional update; ``t`` is the 1-based step count for bias correction."""
    opt = Adam(params, lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    opt.t = t - 1
    opt.step()
