"""Adam optimizer with bias correction, matching the reference update rule."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class Adam:
    def __init__(
        self,
        params: list[tuple[str, Tensor]],
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
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for _, p in self.params]
        self._v = [np.zeros_like(p.data) for _, p in self.params]

    def step(self, grads: list[Tensor]) -> None:
        if len(grads) != len(self.params):
            raise ValueError("gradient list does not match parameter list")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for i, ((name, p), g) in enumerate(zip(self.params, grads)):
            gd = g.data
            if not np.all(np.isfinite(gd)):
                raise FloatingPointError(
                    f"non-finite gradient for parameter '{name}' at step {t}"
                )
            m = self._m[i]
            v = self._v[i]
            m *= self.beta1
            m += (1.0 - self.beta1) * gd
            v *= self.beta2
            v += (1.0 - self.beta2) * gd * gd
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
