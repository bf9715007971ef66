"""
Multimodal fusion of the question encoding Psi(q) with the visual encoding Phi(x).
"""

__all__ = ['FUSION_MODES', 'FusionParams', 'fuse', 'fused_dim']

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ShapeError
from .tensor import Tensor, concat, constant, glorot_uniform, l2_normalize, linear, parameter

FUSION_MODES = ('concat', 'multiply', 'sum')


@dataclass
class FusionParams:
    mode: str = 'sum'
    W_ve: Optional[Tensor] = None
    normalize_visual: bool = True

    def __post_init__(self):
        if self.mode not in FUSION_MODES:
            raise ValueError(f'Unknown fusion mode {self.mode!r}')
        if self.mode != 'concat' and self.W_ve is None:
            raise ValueError(f'{self.mode} fusion needs a W_ve matrix')

    def tensors(self) -> dict[str, Tensor]:
        return {} if self.W_ve is None else {'W_ve': self.W_ve}

    @classmethod
    def init(
            cls,
            rng: np.random.Generator,
            mode: str,
            question_dim: int,
            visual_dim: int,
            normalize_visual: bool = True) -> 'FusionParams':
        W_ve = None
        if mode != 'concat':
            W_ve = parameter(glorot_uniform(rng, (question_dim, visual_dim)))
        return cls(mode, W_ve, normalize_visual)


def fused_dim(mode: str, question_dim: int, visual_dim: int) -> int:
    return question_dim + visual_dim if mode == 'concat' else question_dim


def fuse(q_enc: Tensor, v_enc, params: FusionParams) -> Tensor:
    """
    concat: [q ; v]; multiply: q * (W_ve v); sum: q + W_ve v.

    With `normalize_visual` the raw v is L2-normalized first.
    """
    v_enc = constant(v_enc)
    if q_enc.shape[:-1] != v_enc.shape[:-1]:
        raise ShapeError(
            f'fuse: question batch {q_enc.shape} vs visual batch {v_enc.shape}')
    if params.normalize_visual:
        v_enc = l2_normalize(v_enc)
    if params.mode == 'concat':
        return concat([q_enc, v_enc], axis=-1)
    if params.W_ve.shape != (q_enc.shape[-1], v_enc.shape[-1]):
        raise ShapeError(
            f'fuse: W_ve {params.W_ve.shape} does not map visual '
            f'{v_enc.shape[-1]} to question {q_enc.shape[-1]}')
    projected = linear(v_enc, params.W_ve)
    if params.mode == 'multiply':
        return q_enc * projected
    return q_enc + projected
