"""
Non-neural baselines: the global and per-question-type modal answers, the
question lookup table and the two nearest-neighbour searches.

Each baseline is fit once on training instances and then answers test
instances; it never changes afterwards, so concurrent queries are safe.
Answers are canonical answer strings (see `data.answer_key`); the empty
string is the "no answer" prediction.
"""

__all__ = [
    'QUESTION_TYPES', 'BASELINE_KINDS', 'classify_question_type',
    'constant_baseline', 'ConstantBaseline', 'PerTypeConstant',
    'LookupTable', 'NearestQuestion', 'NearestVisual', 'per_type_constant',
    'lookup_table', 'nn_question_only', 'nn_visual', 'question_vector',
    'cosine_similarities', 'lookup_key', 'make_baseline']

import logging
import re
from collections import Counter
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .data import QAInstance, answer_key, most_frequent_answer
from .features import VisualFeatureStore

logger = logging.getLogger(__name__)

BASELINE_KINDS = ('constant', 'per-type', 'lookup', 'nn-question', 'nn-visual')

QUESTION_TYPES = [
    ('color', re.compile(r'what (is |the )?(the )?colou?r')),
    ('count', re.compile(r'how many')),
    ('size', re.compile(
        r'\blargest\b|\bsmallest\b|\blarge\b|\bsmall\b|\bbig\b|\bbiggest\b')),
    ('spatial', re.compile(
        r'\bfront\b|\bleft\b|\bright\b|\bbelow\b|\babove\b|\bbeneath\b|'
        r'\bunder\b|\bbehind\b|\bbeside\b|\bacross\b|\bahead\b|\baround\b')),
    ('other', re.compile(r'')),
]

_ARTICLES = frozenset(('the', 'a', 'an'))

Question = Union[str, Sequence[str]]


def _text(question: Question) -> str:
    if isinstance(question, str):
        return ' '.join(question.lower().split())
    return ' '.join(question).lower()


def classify_question_type(question: Question) -> str:
    """First rule whose pattern matches the lowercased question."""
    text = _text(question)
    if not text:
        raise ValueError('Cannot classify an empty question')
    for name, pattern in QUESTION_TYPES:
        if pattern.search(text):
            return name
    return 'other'


def _mode(keys: Iterable[str]) -> str:
    counts = Counter(keys)
    if not counts:
        raise ValueError('Cannot take the modal answer of an empty training set')
    return min(counts, key=lambda key: (-counts[key], key))


def _training_answer(item) -> str:
    if isinstance(item, QAInstance):
        return answer_key(most_frequent_answer(item.answers))
    return answer_key(item)


def constant_baseline(train: Iterable) -> str:
    """Most frequent training answer; ties broken lexicographically."""
    return _mode(_training_answer(item) for item in train)


class ConstantBaseline:
    def __init__(self, train: Sequence[QAInstance]):
        self.constant = constant_baseline(train)

    def answer(self, instance: QAInstance) -> str:
        return self.constant


class PerTypeConstant:
    """Modal answer per question type; empty types fall back to the global mode."""
    def __init__(self, train: Sequence[QAInstance]):
        buckets = {}
        for inst in train:
            buckets.setdefault(classify_question_type(inst.tokens), []).append(inst)
        self.fallback = constant_baseline(train)
        self.by_type = {
            name: constant_baseline(insts) for name, insts in sorted(buckets.items())}

    def answer(self, instance: QAInstance) -> str:
        return self.by_type.get(
            classify_question_type(instance.tokens), self.fallback)


def lookup_key(tokens: Sequence[str], strip_articles: bool = False) -> str:
    if strip_articles:
        tokens = [t for t in tokens if t not in _ARTICLES]
    return ' '.join(tokens)


class LookupTable:
    """Question text -> its modal training answer; unseen questions get ''."""
    def __init__(self, train: Sequence[QAInstance], strip_articles: bool = False):
        self.strip_articles = strip_articles
        grouped = {}
        for inst in train:
            key = lookup_key(inst.tokens, strip_articles)
            grouped.setdefault(key, []).append(_training_answer(inst))
        self.table = {key: _mode(answers) for key, answers in grouped.items()}

    def answer(self, instance: QAInstance) -> str:
        return self.table.get(lookup_key(instance.tokens, self.strip_articles), '')


def question_vector(
        tokens: Sequence[str],
        embeddings: Mapping[str, np.ndarray],
        dim: int,
        reduction: str = 'sum') -> np.ndarray:
    """Bag of word embeddings; words without an embedding contribute nothing."""
    rows = [embeddings[t] for t in tokens if t in embeddings]
    if not rows:
        return np.zeros(dim)
    stacked = np.asarray(rows, dtype=np.float64)
    if reduction == 'sum':
        return stacked.sum(axis=0)
    if reduction == 'mean':
        return stacked.mean(axis=0)
    raise ValueError(f'Unknown BOW reduction {reduction!r}')


def cosine_similarities(matrix: np.ndarray, vector: np.ndarray) -> np.ndarray:
    """Cosine of `vector` against every row; zero vectors score 0."""
    norms = np.linalg.norm(matrix, axis=1) * np.linalg.norm(vector)
    dots = matrix @ vector
    out = np.zeros(matrix.shape[0])
    nonzero = norms > 0
    out[nonzero] = dots[nonzero] / norms[nonzero]
    return out


def _embedding_dim(embeddings: Mapping[str, np.ndarray]) -> int:
    for vector in embeddings.values():
        return int(np.asarray(vector).shape[-1])
    raise ValueError('Empty embedding table')


class NearestQuestion:
    """
    Answers with the training answer of the most similar training question
    (cosine between bag-of-embedding vectors; ties to the lowest index).
    """
    def __init__(
            self,
            train: Sequence[QAInstance],
            embeddings: Mapping[str, np.ndarray],
            reduction: str = 'sum'):
        if not train:
            raise ValueError('Nearest-neighbour baseline needs training instances')
        self.train = list(train)
        self.embeddings = embeddings
        self.reduction = reduction
        self.dim = _embedding_dim(embeddings)
        self.answers = [_training_answer(inst) for inst in self.train]
        self.matrix = np.stack([
            question_vector(inst.tokens, embeddings, self.dim, reduction)
            for inst in self.train])

    def similarities(self, tokens: Sequence[str]) -> np.ndarray:
        query = question_vector(tokens, self.embeddings, self.dim, self.reduction)
        return cosine_similarities(self.matrix, query)

    def nearest(self, tokens: Sequence[str], k: int) -> list:
        sims = self.similarities(tokens)
        order = np.argsort(-sims, kind='stable')
        return [int(i) for i in order[:k]]

    def answer_tokens(self, tokens: Sequence[str]) -> str:
        return self.answers[self.nearest(tokens, 1)[0]]

    def answer(self, instance: QAInstance) -> str:
        return self.answer_tokens(instance.tokens)


class NearestVisual(NearestQuestion):
    """
    The `k` most similar training questions are candidates; the one whose
    image feature is closest (cosine) to the test image wins.
    """
    def __init__(
            self,
            train: Sequence[QAInstance],
            embeddings: Mapping[str, np.ndarray],
            features: VisualFeatureStore,
            k: int = 4,
            reduction: str = 'sum'):
        super().__init__(train, embeddings, reduction)
        if k < 1:
            raise ValueError('k must be >= 1')
        self.features = features
        self.k = k

    def answer(self, instance: QAInstance) -> str:
        candidates = []
        for i in self.nearest(instance.tokens, self.k):
            image = self.train[i].image
            if image not in self.features:
                logger.warning(
                    'Skipping candidate %s: no features for image %s',
                    self.train[i].id, image)
                continue
            candidates.append(i)
        if not candidates:
            return ''
        if instance.image not in self.features:
            logger.warning(
                'No features for test image %s; using the nearest question',
                instance.image)
            return self.answers[candidates[0]]
        matrix = np.stack([self.features[self.train[i].image] for i in candidates])
        sims = cosine_similarities(matrix, self.features[instance.image])
        return self.answers[candidates[int(np.argmax(sims))]]


def per_type_constant(train: Sequence[QAInstance]) -> PerTypeConstant:
    return PerTypeConstant(train)


def lookup_table(train: Sequence[QAInstance], strip_articles: bool = False) -> LookupTable:
    return LookupTable(train, strip_articles)


def nn_question_only(
        train: Sequence[QAInstance],
        embeddings: Mapping[str, np.ndarray],
        question: Union[QAInstance, Sequence[str]],
        reduction: str = 'sum') -> str:
    tokens = question.tokens if isinstance(question, QAInstance) else list(question)
    return NearestQuestion(train, embeddings, reduction).answer_tokens(tokens)


def nn_visual(
        train: Sequence[QAInstance],
        embeddings: Mapping[str, np.ndarray],
        features: VisualFeatureStore,
        instance: QAInstance,
        k: int = 4,
        reduction: str = 'sum') -> str:
    return NearestVisual(train, embeddings, features, k, reduction).answer(instance)


def make_baseline(
        kind: str,
        train: Sequence[QAInstance],
        embeddings: Optional[Mapping[str, np.ndarray]] = None,
        features: Optional[VisualFeatureStore] = None,
        strip_articles: bool = False,
        reduction: str = 'sum'):
    """Build a fitted baseline by kind; callers check required resources."""
    if kind == 'constant':
        return ConstantBaseline(train)
    if kind == 'per-type':
        return PerTypeConstant(train)
    if kind == 'lookup':
        return LookupTable(train, strip_articles)
    if kind == 'nn-question':
        return NearestQuestion(train, embeddings, reduction)
    if kind == 'nn-visual':
        return NearestVisual(train, embeddings, features, reduction=reduction)
    raise ValueError(f'Unknown baseline kind {kind!r}')
