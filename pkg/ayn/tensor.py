"""
Dense float64 tensors with reverse-mode differentiation.

Every op is a `Function` subclass: `forward` works on plain numpy arrays and
`backward` maps the output gradient to one gradient per parent (or None).
Calling `Tensor.backward()` on a scalar walks the recorded graph and
accumulates into the `.grad` of every leaf that requires it. Gradients
accumulate across calls until `zero_grad()` is invoked.
"""

__all__ = [
    'Tensor', 'Function', 'no_grad', 'is_grad_enabled', 'parameter',
    'constant', 'add', 'sub', 'mul', 'linear', 'sigmoid', 'tanh',
    'apply_nonlinearity', 'tensor_sum', 'concat', 'take_rows', 'reshape',
    'pad_axis', 'cross_entropy', 'l2_normalize', 'softmax', 'zero_grad',
    'glorot_uniform']

import contextlib
import threading
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import InvalidValueError, ShapeError

_local = threading.local()

NORM_EPS = 1e-12


def is_grad_enabled() -> bool:
    return getattr(_local, 'grad_enabled', True)


@contextlib.contextmanager
def no_grad():
    """Skip graph recording on this thread, e.g. for inference."""
    prev = is_grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


def _check_finite(arr: np.ndarray, where: str):
    if not np.all(np.isfinite(arr)):
        raise InvalidValueError(f'Non-finite value produced by {where}', op=where)


class Tensor:
    __slots__ = ('data', 'grad', 'requires_grad', 'name', '_ctx')

    def __init__(
            self,
            data,
            requires_grad: bool = False,
            name: Optional[str] = None,
            _ctx: Optional['Function'] = None):
        data = np.asarray(data, dtype=np.float64)
        if _ctx is None:
            _check_finite(data, name or 'tensor')
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._ctx = _ctx

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f', name={self.name!r}' if self.name else ''
        return f'Tensor(shape={self.shape}{label})'

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, idx):
        return GetItem.apply(self, idx=idx)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """
        Populate `.grad` of every reachable leaf with d(self)/d(leaf).

        Only valid on a single-element tensor.
        """
        if self.data.size != 1:
            raise ShapeError(
                f'backward() needs a scalar loss, got shape {self.shape}',
                shape=list(self.shape))
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(_toposort(self)):
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            if node._ctx is None:
                if node.requires_grad:
                    _check_finite(grad, f'gradient of {node.name or "leaf"}')
                    node.grad = grad.copy() if node.grad is None \
                        else node.grad + grad
                continue
            parent_grads = node._ctx.backward(grad)
            for parent, parent_grad in zip(node._ctx.parents, parent_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + parent_grad
                else:
                    grads[key] = parent_grad


def _toposort(root: Tensor) -> list:
    # Iterative post-order: long recurrent unrolls exceed the recursion limit.
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        if node._ctx is not None:
            for parent in node._ctx.parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
    return order


def parameter(data, name: Optional[str] = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def constant(data) -> Tensor:
    if isinstance(data, Tensor):
        return data
    return Tensor(data)


def zero_grad(params: Iterable[Tensor]):
    for param in params:
        param.zero_grad()


class Function:
    def __init__(self, *parents: Tensor):
        self.parents = parents

    @classmethod
    def apply(cls, *args, **kwargs) -> Tensor:
        parents = tuple(constant(arg) for arg in args)
        fn = cls(*parents)
        out = fn.forward(*[p.data for p in parents], **kwargs)
        _check_finite(out, cls.__name__)
        requires_grad = is_grad_enabled() and any(
            p.requires_grad for p in parents)
        return Tensor(
            out,
            requires_grad=requires_grad,
            _ctx=fn if requires_grad else None)

    def forward(self, *args, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> tuple:
        raise NotImplementedError


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Add(Function):
    def forward(self, x, y):
        self.shapes = x.shape, y.shape
        return x + y

    def backward(self, grad):
        return _unbroadcast(grad, self.shapes[0]), _unbroadcast(grad, self.shapes[1])


class Sub(Function):
    def forward(self, x, y):
        self.shapes = x.shape, y.shape
        return x - y

    def backward(self, grad):
        return _unbroadcast(grad, self.shapes[0]), _unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    def forward(self, x, y):
        self.x, self.y = x, y
        return x * y

    def backward(self, grad):
        return (
            _unbroadcast(grad * self.y, self.x.shape),
            _unbroadcast(grad * self.x, self.y.shape))


class Linear(Function):
    """`x @ w.T (+ b)` with `w` stored as (out, in)."""

    def forward(self, x, w, b=None):
        if w.ndim != 2 or x.shape[-1] != w.shape[1]:
            raise ShapeError(
                f'linear: input {x.shape} does not match weight {w.shape}',
                input=list(x.shape), weight=list(w.shape))
        self.x, self.w = x, w
        out = x @ w.T
        if b is not None:
            if b.shape != (w.shape[0],):
                raise ShapeError(
                    f'linear: bias {b.shape} does not match weight {w.shape}')
            out = out + b
        return out

    def backward(self, grad):
        n_in = self.w.shape[1]
        n_out = self.w.shape[0]
        grad_2d = grad.reshape(-1, n_out)
        grad_x = grad @ self.w
        grad_w = grad_2d.T @ self.x.reshape(-1, n_in)
        grads = (grad_x, grad_w)
        if len(self.parents) == 3:
            grads += (grad_2d.sum(axis=0),)
        return grads


class Sigmoid(Function):
    def forward(self, x):
        self.out = np.exp(-np.logaddexp(0.0, -x))
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1.0 - self.out),)


class Tanh(Function):
    def forward(self, x):
        self.out = np.tanh(x)
        return self.out

    def backward(self, grad):
        return (grad * (1.0 - self.out ** 2),)


class Sum(Function):
    def forward(self, x, axis=None):
        self.shape = x.shape
        self.axis = axis
        return np.sum(x, axis=axis)

    def backward(self, grad):
        if self.axis is not None:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, self.shape),)


class Concat(Function):
    def forward(self, *xs, axis=-1):
        self.axis = axis
        self.splits = np.cumsum([x.shape[axis] for x in xs])[:-1]
        return np.concatenate(xs, axis=axis)

    def backward(self, grad):
        return tuple(np.split(grad, self.splits, axis=self.axis))


class GetItem(Function):
    def forward(self, x, idx=None):
        self.shape = x.shape
        self.idx = idx
        return x[idx]

    def backward(self, grad):
        out = np.zeros(self.shape)
        if _is_basic_index(self.idx):
            out[self.idx] = grad
        else:
            np.add.at(out, self.idx, grad)
        return (out,)


def _is_basic_index(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(
        isinstance(part, (int, np.integer, slice)) or part is Ellipsis
        or part is None
        for part in parts)


class TakeRows(Function):
    def forward(self, table, ids=None):
        self.shape = table.shape
        self.ids = ids
        return table[ids]

    def backward(self, grad):
        out = np.zeros(self.shape)
        np.add.at(out, self.ids, grad)
        return (out,)


class Reshape(Function):
    def forward(self, x, shape=None):
        self.shape = x.shape
        return x.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.shape),)


class CrossEntropy(Function):
    def forward(self, logits, targets=None, weights=None):
        shifted = logits - logits.max(axis=-1, keepdims=True)
        log_norm = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        log_probs = shifted - log_norm
        rows = np.arange(logits.shape[0])
        nll = -log_probs[rows, targets]
        self.weights = weights / weights.sum()
        self.probs = np.exp(log_probs)
        self.rows, self.targets = rows, targets
        return np.asarray(np.sum(self.weights * nll))

    def backward(self, grad):
        delta = self.probs.copy()
        delta[self.rows, self.targets] -= 1.0
        return (grad * delta * self.weights[:, None],)


class L2Normalize(Function):
    def forward(self, x):
        norm = np.sqrt(np.sum(x * x, axis=-1, keepdims=True))
        self.live = norm > NORM_EPS
        self.norm = np.where(self.live, norm, 1.0)
        self.out = np.where(self.live, x / self.norm, 0.0)
        return self.out

    def backward(self, grad):
        y = self.out
        proj = np.sum(y * grad, axis=-1, keepdims=True)
        return (np.where(self.live, (grad - y * proj) / self.norm, 0.0),)


def add(x, y) -> Tensor:
    return Add.apply(x, y)


def sub(x, y) -> Tensor:
    return Sub.apply(x, y)


def mul(x, y) -> Tensor:
    return Mul.apply(x, y)


def linear(x, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    if b is None:
        return Linear.apply(x, w)
    return Linear.apply(x, w, b)


def sigmoid(x) -> Tensor:
    return Sigmoid.apply(x)


def tanh(x) -> Tensor:
    return Tanh.apply(x)


_NONLINEARITIES = {'sigmoid': sigmoid, 'tanh': tanh}


def apply_nonlinearity(kind: str, x) -> Tensor:
    """
    Elementwise sigma(v) = 1 / (1 + e^-v) or phi(v) = 2 sigma(2v) - 1.
    """
    try:
        fn = _NONLINEARITIES[kind]
    except KeyError:
        raise ValueError(f'Unknown nonlinearity {kind!r}') from None
    x = constant(x)
    _check_finite(x.data, kind)
    return fn(x)


def tensor_sum(x, axis: Optional[int] = None) -> Tensor:
    return Sum.apply(x, axis=axis)


def concat(xs: Sequence, axis: int = -1) -> Tensor:
    return Concat.apply(*xs, axis=axis)


def take_rows(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    return TakeRows.apply(table, ids=ids)


def reshape(x, shape: tuple) -> Tensor:
    return Reshape.apply(x, shape=tuple(shape))


def pad_axis(x: Tensor, length: int, axis: int) -> Tensor:
    """Zero-pad `x` at the end of `axis` up to `length`."""
    x = constant(x)
    axis = axis % x.ndim
    missing = length - x.shape[axis]
    if missing <= 0:
        return x
    pad_shape = list(x.shape)
    pad_shape[axis] = missing
    return concat([x, Tensor(np.zeros(pad_shape))], axis=axis)


def cross_entropy(logits, target, weights=None) -> Tensor:
    """
    Mean of -log softmax(logits)[target], optionally weighted.

    `logits` is a vector with an integer `target`, or an (N, C) matrix with
    N integer targets. With weights the result is sum(w * nll) / sum(w).
    """
    logits = constant(logits)
    targets = np.atleast_1d(np.asarray(target, dtype=np.int64))
    if logits.ndim == 1:
        logits = reshape(logits, (1, logits.shape[0]))
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeError(
            f'cross_entropy: logits {logits.shape} vs targets {targets.shape}')
    n_classes = logits.shape[1]
    if np.any(targets < 0) or np.any(targets >= n_classes):
        raise IndexError(
            f'cross_entropy: target out of range for {n_classes} classes')
    if weights is None:
        weights = np.ones(targets.shape[0])
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != targets.shape or weights.sum() <= 0:
        raise ValueError('cross_entropy: weights must match targets and sum > 0')
    return CrossEntropy.apply(logits, targets=targets, weights=weights)


def l2_normalize(x) -> Tensor:
    """
    Divide each vector (last axis) by its L2 norm.

    (Near-)zero vectors map to zero vectors rather than failing.
    """
    return L2Normalize.apply(x)


def glorot_uniform(rng: np.random.Generator, shape: tuple) -> np.ndarray:
    """Uniform in [-a, a] with a = sqrt(6 / (fan_in + fan_out))."""
    fan_out, fan_in = shape[0], int(np.prod(shape[1:])) if len(shape) > 1 else 1
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)
