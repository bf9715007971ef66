"""
Corpus evaluation: accuracy, WUPS at a threshold, the average / min
consensus metrics over several human answers, VQA consensus accuracy and
inter-human agreement splits.

Per-instance functions return scores in [0, 1]; corpus functions return
percentages. Corpus reductions always sum in record order.
"""

__all__ = [
    'MU_BACKENDS', 'CONSENSUS_MODES', 'AGREEMENT_PREDICATES', 'SPLITS',
    'MetricConfig', 'PredictionRecord', 'make_mu', 'wups_instance',
    'consensus_instance', 'wups_corpus', 'consensus_score', 'accuracy',
    'vqa_accuracy', 'agreement_split', 'score_record', 'metric_columns']

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

from .data import answer_key, normalize_answer
from .errors import ConfigError
from .taxonomy import DOWN_WEIGHT, Taxonomy, mu_thresholded

logger = logging.getLogger(__name__)

MU_BACKENDS = ('taxonomy', 'exact-match')
CONSENSUS_MODES = ('single', 'average', 'min')
AGREEMENT_PREDICATES = ('identity', 'overlap')
SPLITS = ('none', 'partial', 'at-least-half', 'full')
VQA_HUMANS = 10

Mu = Callable[[str, str], float]


@dataclass
class MetricConfig:
    thresholds: tuple = (0.9, 0.0)
    mu: str = 'taxonomy'
    consensus: str = 'single'
    down_weight: float = DOWN_WEIGHT
    agreement: str = 'identity'
    vqa: bool = False
    chunks: int = 1

    def __post_init__(self):
        self.thresholds = tuple(float(t) for t in self.thresholds)
        if not self.thresholds:
            raise ConfigError('at least one WUPS threshold is required')
        for t in self.thresholds:
            if not 0.0 <= t <= 1.0:
                raise ConfigError(f'WUPS threshold must lie in [0, 1], got {t}', threshold=t)
        if self.mu not in MU_BACKENDS:
            raise ConfigError(f'Unknown similarity backend {self.mu!r}', mu=self.mu)
        if self.consensus not in CONSENSUS_MODES:
            raise ConfigError(f'Unknown consensus mode {self.consensus!r}')
        if self.agreement not in AGREEMENT_PREDICATES:
            raise ConfigError(f'Unknown agreement predicate {self.agreement!r}')
        if not 0.0 <= self.down_weight <= 1.0:
            raise ConfigError('down_weight must lie in [0, 1]')
        if self.chunks < 1:
            raise ConfigError('chunks must be >= 1')

    @classmethod
    def from_dict(cls, values: dict) -> 'MetricConfig':
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f'Unknown metric setting(s): {unknown}', keys=unknown)
        return cls(**values)

    def with_overrides(self, **overrides) -> 'MetricConfig':
        """Replace fields whose override is not None."""
        values = dataclasses.asdict(self)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return type(self).from_dict(values)


@dataclass
class PredictionRecord:
    id: str
    prediction: frozenset
    references: list
    question: Optional[str] = field(default=None)

    def __post_init__(self):
        if not self.references:
            raise ValueError(f'Record {self.id}: no reference answers')
        if any(not ref for ref in self.references):
            raise ValueError(f'Record {self.id}: empty reference answer')

    @classmethod
    def from_strings(
            cls,
            id: str,
            prediction: str,
            references: Sequence[str],
            question: Optional[str] = None) -> 'PredictionRecord':
        return cls(
            id,
            normalize_answer(prediction),
            [normalize_answer(ref) for ref in references],
            question)


def make_mu(
        taxonomy: Optional[Taxonomy],
        threshold: float,
        down_weight: float = DOWN_WEIGHT) -> Mu:
    """Word similarity mu_tau; `taxonomy=None` gives the exact-match indicator."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f'threshold must lie in [0, 1], got {threshold}')

    def mu(a: str, b: str) -> float:
        return mu_thresholded(a, b, taxonomy, threshold, down_weight)
    return mu


def wups_instance(A: Iterable[str], T: Iterable[str], mu: Mu) -> float:
    """
    min(prod_a max_t mu(a, t), prod_t max_a mu(a, t)).

    Symmetric in A and T whenever mu is.
    """
    A, T = sorted(A), sorted(T)
    if not A or not T:
        raise ValueError('wups_instance needs non-empty answer sets')
    forward = math.prod(max(mu(a, t) for t in T) for a in A)
    backward = math.prod(max(mu(a, t) for a in A) for t in T)
    return min(forward, backward)


def consensus_instance(
        A: Iterable[str],
        references: Sequence[Iterable[str]],
        mu: Mu,
        mode: str) -> float:
    """Mean (`average`) or max (`min` consensus) of WUPS over the references."""
    if not references:
        raise ValueError('consensus needs at least one reference')
    scores = [wups_instance(A, ref, mu) for ref in references]
    if mode == 'average':
        return sum(scores) / len(scores)
    if mode == 'min':
        return max(scores)
    if mode == 'single':
        return scores[0]
    raise ValueError(f'Unknown consensus mode {mode!r}')


def _percent(scores: Sequence[float]) -> float:
    if not scores:
        raise ValueError('cannot score an empty corpus')
    total = 0.0
    for score in scores:
        total += score
    return 100.0 * total / len(scores)


def wups_corpus(
        records: Sequence[PredictionRecord],
        threshold: float,
        taxonomy: Optional[Taxonomy] = None,
        down_weight: float = DOWN_WEIGHT) -> float:
    """
    WUPS@threshold in percent against each record's first reference.

    Records with an empty prediction score 0.
    """
    mu = make_mu(taxonomy, threshold, down_weight)
    return _percent([
        wups_instance(r.prediction, r.references[0], mu) if r.prediction else 0.0
        for r in records])


def consensus_score(
        records: Sequence[PredictionRecord],
        threshold: float,
        mode: str,
        taxonomy: Optional[Taxonomy] = None,
        down_weight: float = DOWN_WEIGHT) -> float:
    """Average (`average`) or min (`min`) consensus metric in percent."""
    if mode not in ('average', 'min'):
        raise ValueError(f'consensus mode must be average or min, got {mode!r}')
    mu = make_mu(taxonomy, threshold, down_weight)
    return _percent([
        consensus_instance(r.prediction, r.references, mu, mode) if r.prediction else 0.0
        for r in records])


def accuracy(records: Sequence[PredictionRecord]) -> float:
    """Percentage of predictions equal (as sets) to the first reference."""
    return _percent([
        1.0 if r.prediction and r.prediction == r.references[0] else 0.0
        for r in records])


def vqa_accuracy(predicted: str, human_answers: Sequence[str]) -> float:
    """min(#humans giving exactly the predicted answer / 3, 1)."""
    if not human_answers:
        raise ValueError('vqa_accuracy needs at least one human answer')
    if len(human_answers) != VQA_HUMANS:
        logger.warning(
            'VQA accuracy expects %d human answers, got %d',
            VQA_HUMANS, len(human_answers))
    key = answer_key(predicted)
    if not key:
        return 0.0
    matches = sum(1 for answer in human_answers if answer_key(answer) == key)
    return min(matches / 3.0, 1.0)


def agreement_split(
        references: Sequence[Iterable[str]],
        predicate: str = 'identity') -> str:
    """
    Bucket by m, the largest number of references agreeing with one of them.

    `full` if m = K, `at-least-half` if m >= ceil(K / 2), `none` if m = 1,
    otherwise `partial`. Agreement is set identity, or sharing at least one
    element with `predicate='overlap'`.
    """
    refs = [frozenset(ref) for ref in references]
    k = len(refs)
    if k < 2:
        raise ValueError(f'agreement_split needs at least 2 references, got {k}')
    if predicate == 'identity':
        agrees = lambda x, y: x == y  # noqa: E731
    elif predicate == 'overlap':
        agrees = lambda x, y: bool(x & y)  # noqa: E731
    else:
        raise ValueError(f'Unknown agreement predicate {predicate!r}')
    m = max(sum(1 for other in refs if agrees(ref, other)) for ref in refs)
    if m == k:
        return 'full'
    if m >= math.ceil(k / 2):
        return 'at-least-half'
    if m == 1:
        return 'none'
    return 'partial'


def _label(threshold: float) -> str:
    return f'{threshold:g}' if threshold not in (0.0, 1.0) else f'{threshold:.1f}'


def metric_columns(config: MetricConfig, multi_reference: bool) -> list:
    """Report columns, in order, for a metric config."""
    columns = ['Accuracy']
    columns += [f'WUPS@{_label(t)}' for t in config.thresholds]
    if multi_reference:
        columns += [f'ACM@{_label(t)}' for t in config.thresholds]
        columns += [f'MCM@{_label(t)}' for t in config.thresholds]
    if config.vqa:
        columns.append('VQA')
    return columns


def score_record(
        record: PredictionRecord,
        config: MetricConfig,
        taxonomy: Optional[Taxonomy],
        multi_reference: bool) -> dict:
    """Every per-instance score in [0, 1], keyed by report column."""
    taxonomy = taxonomy if config.mu == 'taxonomy' else None
    A = record.prediction
    scores = {
        'Accuracy': 1.0 if A and A == record.references[0] else 0.0}
    for t in config.thresholds:
        mu = make_mu(taxonomy, t, config.down_weight)
        label = _label(t)
        if not A:
            scores[f'WUPS@{label}'] = 0.0
            if multi_reference:
                scores[f'ACM@{label}'] = scores[f'MCM@{label}'] = 0.0
            continue
        scores[f'WUPS@{label}'] = consensus_instance(
            A, record.references, mu, config.consensus)
        if multi_reference:
            scores[f'ACM@{label}'] = consensus_instance(A, record.references, mu, 'average')
            scores[f'MCM@{label}'] = consensus_instance(A, record.references, mu, 'min')
    if config.vqa:
        scores['VQA'] = vqa_accuracy(
            answer_key(A), [answer_key(ref) for ref in record.references])
    return scores
