"""RMSProp with a per-slot learning rate, operating on one packed array.

v_t = rho * v_{t-1} + (1 - rho) * g^2
p  -= lr * g / (sqrt(v_t) + eps)

A zero gradient leaves parameters bit-identical (the update term is exactly
zero), which is what keeps frozen density untouched during distillation.
"""

from __future__ import annotations

import numpy as np


class RMSProp:
    def __init__(self, params: np.ndarray, lr, rho: float = 0.95, eps: float = 1e-8):
        if rho <= 0.0 or rho >= 1.0:
            raise ValueError(f"rho must be in (0, 1), got {rho}")
        self.lr = np.asarray(lr, dtype=params.dtype)
        self.rho = rho
        self.eps = eps
        self.v = np.zeros_like(params)

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        self.v *= self.rho
        self.v += (1.0 - self.rho) * grad * grad
        params -= self.lr * grad / (np.sqrt(self.v) + self.eps)
