"""AdaGrad with per-coordinate accumulated squared gradients."""

from __future__ import annotations

import numpy as np


class AdaGrad:
    """Classic AdaGrad: step_i = lr * g_i / (sqrt(sum g_i^2) + eps).

    ``step`` returns the increment for gradient *ascent*; negate the gradient
    for descent. The accumulator is nonnegative and nondecreasing.
    """

    def __init__(self, shape, lr: float, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.lr = float(lr)
        self.eps = float(eps)
        self.accum = np.zeros(shape)

    def step(self, grad: np.ndarray) -> np.ndarray:
        grad = np.asarray(grad, dtype=np.float64)
        self.accum += grad * grad
        return self.lr * grad / (np.sqrt(self.accum) + self.eps)
