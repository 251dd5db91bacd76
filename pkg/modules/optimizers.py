"""
📉 Adam Optimizer
Adaptive moment estimation over named numpy arrays.

    m_t = b1 * m_{t-1} + (1 - b1) * g
    v_t = b2 * v_{t-1} + (1 - b2) * g^2
    theta -= lr * m_hat / (sqrt(v_hat) + eps)
"""

from typing import Dict

import numpy as np

from modules.exceptions import ValidationError


class Adam:
    """Adam state for a fixed set of named parameters; owned by one optimization loop"""

    def __init__(self, shapes: Dict[str, tuple], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if lr < 0:
            raise ValidationError(f"Learning rate must be >= 0 (got {lr})")
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ValidationError(f"Adam betas must be in [0, 1) (got {beta1}, {beta2})")
        if eps <= 0:
            raise ValidationError(f"Adam eps must be > 0 (got {eps})")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros(shape) for name, shape in shapes.items()}
        self.v = {name: np.zeros(shape) for name, shape in shapes.items()}

    def step(self, values: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
        """
        Apply one update

        Args:
            values: Current parameters (not modified)
            grads: Gradients with the same names

        Returns:
            Updated parameters
        """
        self.t += 1
        updated = {}
        bias1 = 1.0 - self.beta1 ** self.t
        bias2 = 1.0 - self.beta2 ** self.t
        for name, value in values.items():
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / bias1
            v_hat = self.v[name] / bias2
            updated[name] = value - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return updated
