"""
First-order optimizers over named parameter tensors.
"""

__all__ = ['OptimizerState', 'optimizer_step', 'Optimizer', 'OPTIMIZER_KINDS']

from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .errors import InvalidValueError, ShapeError
from .tensor import Tensor

OPTIMIZER_KINDS = ('adam', 'sgd-momentum')


@dataclass
class OptimizerState:
    """
    Hyperparameters, step count and per-parameter moment buffers.

    `beta1` doubles as the momentum coefficient for `sgd-momentum`, which
    keeps a single (velocity) buffer; adam keeps two.
    """
    kind: str = 'adam'
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    moments: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in OPTIMIZER_KINDS:
            raise ValueError(f'Unknown optimizer kind {self.kind!r}')
        if self.learning_rate <= 0:
            raise ValueError('learning_rate must be positive')

    def _buffers(self, name: str, shape: tuple) -> list:
        count = 2 if self.kind == 'adam' else 1
        buffers = self.moments.get(name)
        if buffers is None:
            buffers = [np.zeros(shape) for _ in range(count)]
            self.moments[name] = buffers
        elif buffers[0].shape != shape:
            raise ShapeError(
                f'Moment buffer for {name} has shape {buffers[0].shape}, '
                f'parameter has {shape}')
        return buffers


def optimizer_step(
        state: OptimizerState,
        params: Mapping[str, Tensor],
        grads: Optional[Mapping[str, np.ndarray]] = None
        ) -> tuple[Mapping[str, Tensor], OptimizerState]:
    """
    Apply one update to every parameter in `params`.

    `grads` defaults to each parameter's `.grad`; a missing gradient counts
    as zero. Parameter arrays are replaced, not mutated.
    """
    checked = {}
    for name, param in params.items():
        grad = grads.get(name) if grads is not None else param.grad
        if grad is None:
            grad = np.zeros(param.shape)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != param.shape:
            raise ShapeError(
                f'Gradient for {name} has shape {grad.shape}, '
                f'parameter has {param.shape}',
                parameter=name)
        if not np.all(np.isfinite(grad)):
            raise InvalidValueError(f'Non-finite gradient for {name}', parameter=name)
        checked[name] = grad

    state.step += 1
    t = state.step
    lr = state.learning_rate
    for name, grad in checked.items():
        param = params[name]
        if state.kind == 'adam':
            m, v = state._buffers(name, param.shape)
            m *= state.beta1
            m += (1.0 - state.beta1) * grad
            v *= state.beta2
            v += (1.0 - state.beta2) * grad * grad
            m_hat = m / (1.0 - state.beta1 ** t)
            v_hat = v / (1.0 - state.beta2 ** t)
            param.data = param.data - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        else:
            (velocity,) = state._buffers(name, param.shape)
            velocity *= state.beta1
            velocity += grad
            param.data = param.data - lr * velocity
    return params, state


class Optimizer:
    """Binds an `OptimizerState` to a fixed parameter dict."""

    def __init__(self, params: Mapping[str, Tensor], state: OptimizerState):
        self.params = params
        self.state = state

    def zero_grad(self):
        for param in self.params.values():
            param.zero_grad()

    def step(self):
        optimizer_step(self.state, self.params)
