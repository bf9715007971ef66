"""
QA corpora: parsing, question preprocessing, answer normalization,
answer-class vocabularies, training-answer selection and validation splits.
"""

__all__ = [
    'QAInstance', 'TrainingTarget', 'ANSWER_STRATEGIES', 'normalize_answer',
    'answer_key', 'answer_words', 'preprocess_question', 'load_daquar_txt',
    'load_qa_jsonl', 'write_qa_jsonl', 'load_qa', 'question_words',
    'build_answer_classes', 'build_answer_words', 'select_training_answer',
    'split_validation', 'most_frequent_answer']

import json
import logging
import math
import re
import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .decoders import AnswerVocabulary
from .errors import FormatError

logger = logging.getLogger(__name__)

ANSWER_STRATEGIES = ('random', 'confident-random', 'all', 'most-frequent')

_IMAGE_TOKEN = re.compile(r'\bimage(\d+)\b')
_IMAGE_PHRASE = re.compile(r'(?:\s+in\s+the|\s+in|\s+of\s+the)?\s+image\d+\b')
_EDGE_PUNCT = string.punctuation


@dataclass
class QAInstance:
    id: str
    image: str
    question: str
    tokens: list
    answers: list
    confident: Optional[list] = field(default=None)

    def __post_init__(self):
        if not self.tokens:
            raise ValueError(f'Instance {self.id}: empty question')
        if not self.answers or any(not a for a in self.answers):
            raise ValueError(f'Instance {self.id}: empty reference answer')


@dataclass(frozen=True)
class TrainingTarget:
    answer: frozenset
    weight: float = 1.0


def normalize_answer(text: str) -> frozenset:
    """
    Lowercase, trim, drop trailing punctuation and split on commas into
    a set of answer elements.
    """
    elements = set()
    for part in text.lower().split(','):
        part = ' '.join(part.split()).rstrip(_EDGE_PUNCT).strip()
        if part:
            elements.add(part)
    return frozenset(elements)


def answer_key(answer: Union[frozenset, set, str]) -> str:
    """Canonical string of an answer set: sorted elements joined by ', '."""
    if isinstance(answer, str):
        answer = normalize_answer(answer)
    return ', '.join(sorted(answer))


def answer_words(answer: Union[frozenset, set, str]) -> list:
    """Words of an answer set in canonical order, for sequence generation."""
    return answer_key(answer).replace(',', ' ').split()


def preprocess_question(raw: str) -> list:
    """Lowercase, drop '?', split on whitespace, strip edge punctuation."""
    tokens = []
    for token in raw.lower().replace('?', ' ').split():
        token = token.strip(_EDGE_PUNCT)
        if token:
            tokens.append(token)
    if not tokens:
        raise ValueError(f'Question is empty after cleaning: {raw!r}')
    return tokens


def load_daquar_txt(path) -> list:
    """
    Alternating question / answer lines. The question names its image with
    an `image<N>` token; answers are comma-separated elements.
    """
    path = str(path)
    with open(path, encoding='utf-8') as f:
        lines = [
            (lineno, line.strip())
            for lineno, line in enumerate(f, start=1)
            if line.strip()]
    if len(lines) % 2:
        raise FormatError(
            f'odd number of non-empty lines ({len(lines)}); expected '
            'question/answer pairs', path=path, line=lines[-1][0])
    instances = []
    spaced = unspaced = 0
    for n in range(0, len(lines), 2):
        (q_lineno, q_line), (a_lineno, a_line) = lines[n], lines[n + 1]
        match = _IMAGE_TOKEN.search(q_line)
        if match is None:
            raise FormatError(
                'question lacks an image<N> token', path=path, line=q_lineno)
        if q_line.endswith(' ?'):
            spaced += 1
        elif q_line.endswith('?'):
            unspaced += 1
        question = _IMAGE_PHRASE.sub('', q_line, count=1)
        question = ' '.join(question.replace(' ?', '?').split())
        try:
            tokens = preprocess_question(question)
        except ValueError as e:
            raise FormatError(str(e), path=path, line=q_lineno) from e
        answer = normalize_answer(a_line)
        if not answer:
            raise FormatError('empty answer', path=path, line=a_lineno)
        instances.append(QAInstance(
            id=f'daquar-{n // 2}',
            image=match.group(0),
            question=question,
            tokens=tokens,
            answers=[answer]))
    if spaced or unspaced:
        logger.info(
            'DAQUAR layout in %s: %d questions with " ?", %d with "?"',
            path, spaced, unspaced)
    return instances


def load_qa_jsonl(path) -> list:
    """
    One object per line: {"id", "image", "question", "answers": [...],
    "confident": [...]?}. Each answer string is one reference set.
    """
    path = str(path)
    instances = []
    with open(path, encoding='utf-8') as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise FormatError(f'malformed JSON: {e.msg}', path=path, line=lineno) from e
            if not isinstance(obj, dict):
                raise FormatError('expected a JSON object', path=path, line=lineno)
            for key in ('id', 'image', 'question', 'answers'):
                if key not in obj:
                    raise FormatError(f'missing "{key}"', path=path, line=lineno)
            answers = obj['answers']
            if not isinstance(answers, list) or not answers:
                raise FormatError('"answers" must be a non-empty list', path=path, line=lineno)
            answers = [normalize_answer(str(a)) for a in answers]
            if any(not a for a in answers):
                raise FormatError('empty answer string', path=path, line=lineno)
            confident = obj.get('confident')
            if confident is not None and (
                    not isinstance(confident, list) or len(confident) != len(answers)):
                raise FormatError(
                    '"confident" must list one flag per answer', path=path, line=lineno)
            try:
                tokens = preprocess_question(str(obj['question']))
            except ValueError as e:
                raise FormatError(str(e), path=path, line=lineno) from e
            instances.append(QAInstance(
                id=str(obj['id']),
                image=str(obj['image']),
                question=str(obj['question']),
                tokens=tokens,
                answers=answers,
                confident=[bool(c) for c in confident] if confident is not None else None))
    return instances


def write_qa_jsonl(instances: Iterable[QAInstance], path):
    with open(path, 'w', encoding='utf-8') as f:
        for inst in instances:
            obj = {
                'id': inst.id,
                'image': inst.image,
                'question': inst.question,
                'answers': [answer_key(a) for a in inst.answers]}
            if inst.confident is not None:
                obj['confident'] = list(inst.confident)
            f.write(json.dumps(obj) + '\n')


def load_qa(path) -> list:
    """Dispatch on suffix: `.jsonl` / `.json` or DAQUAR text."""
    if Path(path).suffix in ('.jsonl', '.json'):
        return load_qa_jsonl(path)
    return load_daquar_txt(path)


def question_words(instances: Iterable[QAInstance]) -> list:
    words = set()
    for inst in instances:
        words.update(inst.tokens)
    return sorted(words)


def most_frequent_answer(answers: Sequence[frozenset]) -> frozenset:
    counts = Counter(answer_key(a) for a in answers)
    best = min(counts, key=lambda key: (-counts[key], key))
    return normalize_answer(best)


def build_answer_classes(items: Iterable, top_k: int) -> AnswerVocabulary:
    """
    The `top_k` most frequent training answers, ties broken lexicographically.

    Items are answer sets / strings, or instances (their most frequent
    reference is used).
    """
    if top_k < 1:
        raise ValueError('top_k must be >= 1')
    counts = Counter()
    for item in items:
        if isinstance(item, QAInstance):
            item = most_frequent_answer(item.answers)
        counts[answer_key(item)] += 1
    ranked = sorted(counts, key=lambda key: (-counts[key], key))
    return AnswerVocabulary(ranked[:top_k])


def build_answer_words(instances: Iterable[QAInstance]) -> AnswerVocabulary:
    """Generation vocabulary: every word of every training answer, plus '$'."""
    words = set()
    for inst in instances:
        for answer in inst.answers:
            words.update(answer_words(answer))
    return AnswerVocabulary(sorted(words), generative=True)


def select_training_answer(
        instance: QAInstance,
        strategy: str,
        rng: np.random.Generator) -> list:
    """
    Training target(s) among the K references.

    `all` returns K targets of weight 1/K; `confident-random` draws among
    confidently annotated answers when any exist.
    """
    answers = instance.answers
    if strategy == 'most-frequent':
        return [TrainingTarget(most_frequent_answer(answers))]
    if strategy == 'all':
        weight = 1.0 / len(answers)
        return [TrainingTarget(a, weight) for a in answers]
    if strategy == 'random':
        return [TrainingTarget(answers[int(rng.integers(len(answers)))])]
    if strategy == 'confident-random':
        pool = list(range(len(answers)))
        if instance.confident:
            confident = [i for i in pool if instance.confident[i]]
            pool = confident or pool
        return [TrainingTarget(answers[pool[int(rng.integers(len(pool)))]])]
    raise ValueError(f'Unknown answer strategy {strategy!r}')


def split_validation(instances: Sequence, fraction: float) -> tuple[list, list]:
    """The last ceil(fraction * N) instances, in file order, validate."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f'validation fraction must lie in (0, 1), got {fraction}')
    instances = list(instances)
    n_val = math.ceil(fraction * len(instances))
    cut = len(instances) - n_val
    return instances[:cut], instances[cut:]
