"""Optimizers and gradient clipping for diffcore parameters."""

from typing import List, Sequence, Tuple

import numpy as np

from .diffcore import Tensor


def clip_grad_norm(grads: Sequence[np.ndarray], max_norm: float) -> Tuple[List[np.ndarray], float]:
    """Rescale gradients so their global L2 norm is at most ``max_norm``.

    Args:
        grads: Gradient arrays, one per parameter
        max_norm: Norm ceiling; values <= 0 disable clipping

    Returns:
        Tuple of (clipped gradients, pre-clip global norm)
    """
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if max_norm <= 0 or total <= max_norm:
        return [np.array(g) for g in grads], total
    scale = max_norm / (total + 1e-12)
    return [g * scale for g in grads], total


def sgd_step(params: Sequence[Tensor], grads: Sequence[Tensor], lr: float) -> List[Tensor]:
    """One plain gradient-descent step recorded on the tape.

    Used inside unrolled inner loops, where the updated parameters must stay
    differentiable with respect to whatever produced ``grads``.
    """
    return [p - g * lr for p, g in zip(params, grads)]


class Adam:
    """Adam over leaf tensors, updating ``tensor.data`` in place of the old array."""

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float = 1e-3,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: Sequence[np.ndarray]) -> None:
        """Apply one update with the given gradient arrays."""
        self.t += 1
        bias1 = 1.0 - self.beta1**self.t
        bias2 = 1.0 - self.beta2**self.t
        for i, (p, g) in enumerate(zip(self.params, grads)):
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / bias1
            v_hat = self.v[i] / bias2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
