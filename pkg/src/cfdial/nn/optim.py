"""Adam optimizer over a ParamSet."""

from __future__ import annotations

import numpy as np

from .params import ParamSet


class Adam:
    """Standard Adam with bias correction.

    With zero moments the very first update reduces to
    ``-lr * g / (|g| + eps)``; a unit test pins that behaviour.
    Missing gradients are an error: silently skipping a parameter that
    never received one hides wiring bugs.
    """

    def __init__(self, params: ParamSet, lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("lr must be positive")
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            if p.grad is None:
                raise ValueError(f"parameter {name!r} has no gradient; "
                                 "was it left out of the loss?")
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
        self.params.zero_grad()
