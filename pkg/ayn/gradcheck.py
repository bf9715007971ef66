"""
Central-difference verification of analytic gradients.
"""

__all__ = ['finite_difference_check']

from typing import Callable, Sequence

import numpy as np

from .errors import DeterminismError
from .tensor import Tensor, zero_grad


def finite_difference_check(
        f: Callable[[], Tensor],
        params: Sequence[Tensor],
        step: float = 1e-5) -> float:
    """
    Worst relative error between backprop and central differences.

    `f` recomputes a scalar loss from the current values of `params`.
    Each entry is compared as |a - n| / max(|a|, |n|, 1e-8) where
    n = (f(p + step) - f(p - step)) / (2 step).
    """
    if not step > 0:
        raise ValueError(f'finite difference step must be > 0, got {step}')
    params = list(params)
    for param in params:
        # Entries are perturbed in place through a flat view.
        param.data = np.ascontiguousarray(param.data)
    zero_grad(params)
    loss = f()
    loss.backward()
    analytic = [
        p.grad.copy() if p.grad is not None else np.zeros(p.shape)
        for p in params]

    again = f().item()
    if again != loss.item():
        raise DeterminismError(
            f'objective is not deterministic: {loss.item()!r} != {again!r}')

    worst = 0.0
    for param, grad in zip(params, analytic):
        flat = param.data.reshape(-1)
        grad = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            plus = f().item()
            flat[i] = orig - step
            minus = f().item()
            flat[i] = orig
            numeric = (plus - minus) / (2.0 * step)
            denom = max(abs(grad[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(grad[i] - numeric) / denom)
    zero_grad(params)
    return worst
