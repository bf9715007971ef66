"""
Answer decoders.

Classification picks the argmax of a softmax over the top answer classes.
Generation feeds the question and then its own predictions through the
shared recurrent cell, one word per step, until the end token.
"""

__all__ = [
    'END_TOKEN', 'AnswerVocabulary', 'GenerationConfig', 'GeneratedAnswer',
    'SequenceDecoder', 'classify_answer', 'generate_answer_sequence',
    'training_targets', 'step_inputs']

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .encoders import CellParams, EmbeddingTable, embed_tokens, run_recurrent
from .errors import ShapeError
from .tensor import Tensor, concat, constant, l2_normalize, linear, no_grad, softmax

END_TOKEN = '$'


class AnswerVocabulary:
    """
    Ordered answer entries.

    Class vocabularies hold whole (possibly multi-word) answers. Word
    vocabularies (`generative=True`) hold single words followed by the end
    token, which appears exactly once.
    """
    def __init__(self, entries: Sequence[str], generative: bool = False):
        entries = list(entries)
        if len(set(entries)) != len(entries):
            raise ValueError('Answer vocabulary entries must be unique')
        if generative:
            if END_TOKEN in entries:
                raise ValueError(f'{END_TOKEN!r} is reserved for the end token')
            entries.append(END_TOKEN)
        if not entries:
            raise ValueError('Answer vocabulary is empty')
        self.entries = entries
        self.generative = generative
        self.index = {entry: i for i, entry in enumerate(entries)}

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, entry: str) -> bool:
        return entry in self.index

    def __getitem__(self, i: int) -> str:
        return self.entries[i]

    @property
    def end_index(self) -> Optional[int]:
        return len(self.entries) - 1 if self.generative else None

    @property
    def words(self) -> list:
        return self.entries[:-1] if self.generative else list(self.entries)


@dataclass
class GenerationConfig:
    max_length: int = 10
    dedup: bool = True

    def __post_init__(self):
        if self.max_length < 1:
            raise ValueError('max_length must be >= 1')


@dataclass
class GeneratedAnswer:
    words: list
    truncated: bool = False


@dataclass
class SequenceDecoder:
    """
    Everything generation needs: the embedding table and recurrent cell
    shared with the question encoder, plus the output layer over
    `vocabulary`.
    """
    table: EmbeddingTable
    cell: str
    cell_params: CellParams
    W_out: Tensor
    b_out: Tensor
    vocabulary: AnswerVocabulary
    use_vision: bool = True
    normalize_visual: bool = True


def classify_answer(fused, W: Tensor, b: Optional[Tensor] = None):
    """
    Argmax class and full softmax(W fused + b).

    Ties resolve to the lowest index. Batched input (B, n) returns arrays.
    """
    with no_grad():
        logits = linear(constant(fused), W, b).data
    if logits.shape[-1] != W.shape[0]:
        raise ShapeError('classify_answer: logits do not match class count')
    probs = softmax(logits)
    index = np.argmax(probs, axis=-1)
    if probs.ndim == 1:
        return int(index), probs
    return index, probs


def training_targets(
        question: Sequence[str],
        answer: Sequence[str]) -> tuple[list, list]:
    """
    q^ = [q, a, $] and its loss mask.

    Predictions up to and including the last question word are masked out.
    """
    if not answer:
        raise ValueError('training_targets needs a non-empty answer')
    if not question:
        raise ValueError('training_targets needs a non-empty question')
    sequence = list(question) + list(answer) + [END_TOKEN]
    mask = [0] * len(question) + [1] * (len(answer) + 1)
    return sequence, mask


def step_inputs(embedded: Tensor, visual, use_vision: bool, normalize: bool) -> Tensor:
    """v_t = [Phi(x), w_t] for every step of `embedded` (..., T, d)."""
    if not use_vision:
        return embedded
    visual = constant(visual)
    if normalize:
        visual = l2_normalize(visual)
    steps = embedded.shape[-2]
    tiled = np.broadcast_to(
        np.expand_dims(visual.data, -2),
        visual.shape[:-1] + (steps, visual.shape[-1]))
    return concat([Tensor(tiled), embedded], axis=-1)


def generate_answer_sequence(
        question: Sequence[str],
        visual,
        decoder: SequenceDecoder,
        config: Optional[GenerationConfig] = None) -> GeneratedAnswer:
    """
    Greedy decoding: consume the question, then emit argmax words until the
    end token or `max_length` words. With `dedup`, words already emitted
    are excluded from the argmax.
    """
    config = config or GenerationConfig()
    vocab = decoder.vocabulary
    if not vocab.generative:
        raise ValueError('generation needs a word vocabulary with an end token')
    with no_grad():
        inputs = step_inputs(
            embed_tokens(question, decoder.table), visual,
            decoder.use_vision, decoder.normalize_visual)
        state = run_recurrent(inputs, decoder.cell, decoder.cell_params)
        words = []
        used = np.zeros(len(vocab), dtype=bool)
        for _ in range(config.max_length):
            logits = linear(state.h, decoder.W_out, decoder.b_out).data.copy()
            if config.dedup:
                logits[used] = -np.inf
            index = int(np.argmax(logits))
            if index == vocab.end_index:
                return GeneratedAnswer(words, truncated=False)
            used[index] = True
            word = vocab[index]
            words.append(word)
            step = step_inputs(
                embed_tokens([word], decoder.table), visual,
                decoder.use_vision, decoder.normalize_visual)
            state = run_recurrent(step, decoder.cell, decoder.cell_params, state=state)
        return GeneratedAnswer(words, truncated=True)
