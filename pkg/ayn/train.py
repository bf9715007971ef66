"""
Seeded training with tail-of-file validation, box-filter smoothing of the
validation curve and best-epoch selection, plus batched prediction.
"""

__all__ = [
    'TrainResult', 'Example', 'make_rng', 'train', 'predict_answers',
    'smooth_curve', 'bucket_batches', 'build_examples']

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from .config import RunConfig
from .data import (
    QAInstance, answer_key, answer_words, build_answer_classes,
    build_answer_words, question_words, select_training_answer,
    split_validation)
from .encoders import EmbeddingTable
from .errors import DivergenceError, InvalidValueError, MissingResourceError, ShapeError
from .features import VisualFeatureStore
from .model import VqaModel
from .optim import Optimizer, OptimizerState
from .tensor import cross_entropy

logger = logging.getLogger(__name__)


def make_rng(seed: int) -> np.random.Generator:
    """The one PRNG every run draws from: numpy's PCG64 seeded with `seed`."""
    return np.random.Generator(np.random.PCG64(seed))


@dataclass
class Example:
    tokens: list
    target: object
    visual: Optional[np.ndarray]
    weight: float = 1.0

    @property
    def bucket(self) -> tuple:
        if isinstance(self.target, list):
            return (len(self.tokens), len(self.target))
        return (len(self.tokens),)


@dataclass
class TrainResult:
    model: VqaModel
    log: list
    best_epoch: int
    skipped: dict = field(default_factory=dict)


def smooth_curve(values: Sequence[float], window: int) -> list:
    """Centered box filter; the edges average over what is available."""
    series = pd.Series(list(values), dtype='float64')
    return series.rolling(window, center=True, min_periods=1).mean().tolist()


def _visual_for(inst: QAInstance, features: Optional[VisualFeatureStore], use_vision: bool):
    if not use_vision:
        return None
    return features.get(inst.image) if features is not None else None


def build_examples(
        model: VqaModel,
        instances: Sequence[QAInstance],
        targets: Sequence[list],
        features: Optional[VisualFeatureStore]) -> tuple[list, dict]:
    """
    One example per training target. Classification drops targets outside
    the answer classes; every mode drops instances without features.
    """
    use_vision = model.config.use_vision
    examples = []
    skipped = {'out_of_vocabulary': 0, 'missing_features': 0}
    for inst, inst_targets in zip(instances, targets):
        visual = _visual_for(inst, features, use_vision)
        if use_vision and visual is None:
            skipped['missing_features'] += 1
            continue
        for target in inst_targets:
            if model.generative:
                label = answer_words(target.answer)
            else:
                label = model.answers.index.get(answer_key(target.answer))
                if label is None:
                    skipped['out_of_vocabulary'] += 1
                    continue
            examples.append(Example(list(inst.tokens), label, visual, target.weight))
    if skipped['missing_features']:
        logger.warning(
            'Skipped %d training instance(s) without image features',
            skipped['missing_features'])
    if skipped['out_of_vocabulary']:
        logger.info(
            'Excluded %d training target(s) outside the top %d answer classes',
            skipped['out_of_vocabulary'], len(model.answers))
    return examples, skipped


def bucket_batches(examples: Sequence[Example], batch_size: int, rng: np.random.Generator) -> list:
    """
    Batches of equal-length examples: group by length, shuffle within each
    group, cut into batches, then shuffle the batch order.
    """
    buckets = {}
    for example in examples:
        buckets.setdefault(example.bucket, []).append(example)
    batches = []
    for key in sorted(buckets):
        group = buckets[key]
        order = rng.permutation(len(group))
        for start in range(0, len(group), batch_size):
            batches.append([group[i] for i in order[start:start + batch_size]])
    return [batches[i] for i in rng.permutation(len(batches))]


def _batch_loss(model: VqaModel, batch: Sequence[Example]):
    questions = [ex.tokens for ex in batch]
    weights = np.array([ex.weight for ex in batch])
    visual = np.stack([ex.visual for ex in batch]) if model.config.use_vision else None
    if model.generative:
        loss = model.generation_loss(questions, [ex.target for ex in batch], visual, weights)
        return loss, None
    logits = model.logits(questions, visual)
    targets = np.array([ex.target for ex in batch])
    loss = cross_entropy(logits, targets, weights)
    correct = int(np.sum(np.argmax(logits.data, axis=-1) == targets))
    return loss, correct


def predict_answers(
        model: VqaModel,
        instances: Sequence[QAInstance],
        features: Optional[VisualFeatureStore],
        batch_size: int = 128) -> list:
    """
    Canonical answer per instance, in input order. Instances whose image has
    no features get the empty answer.
    """
    answers = [''] * len(instances)
    use_vision = model.config.use_vision
    missing = 0
    pending = []
    for i, inst in enumerate(instances):
        visual = _visual_for(inst, features, use_vision)
        if use_vision and visual is None:
            missing += 1
            continue
        if visual is not None and visual.shape[-1] != model.visual_dim:
            raise ShapeError(
                f'feature dimension {visual.shape[-1]} does not match the '
                f'model ({model.visual_dim})')
        pending.append((i, inst, visual))
    if missing:
        logger.warning('No image features for %d instance(s); answering empty', missing)
    if model.generative:
        for i, inst, visual in pending:
            answers[i] = ', '.join(model.generate(inst.tokens, visual).words)
        return answers
    by_length = {}
    for item in pending:
        by_length.setdefault(len(item[1].tokens), []).append(item)
    for _, group in sorted(by_length.items()):
        for start in range(0, len(group), batch_size):
            chunk = group[start:start + batch_size]
            visual = np.stack([v for _, _, v in chunk]) if use_vision else None
            classes = model.classify([inst.tokens for _, inst, _ in chunk], visual)
            for (i, _, _), c in zip(chunk, classes):
                answers[i] = model.answers[int(c)]
    return answers


def _correct(answers: Sequence[str], instances: Sequence[QAInstance]) -> int:
    return sum(
        1 for answer, inst in zip(answers, instances)
        if answer and answer_key(answer) == answer_key(inst.answers[0]))


def _build_model(
        config: RunConfig,
        instances: Sequence[QAInstance],
        targets: Sequence[list],
        visual_dim: int,
        pretrained: Optional[Mapping[str, np.ndarray]],
        rng: np.random.Generator) -> VqaModel:
    words = question_words(instances)
    if config.decoder == 'generate':
        answers = build_answer_words(instances)
        words = sorted(set(words) | set(answers.words))
    else:
        answers = build_answer_classes(
            [t.answer for ts in targets for t in ts], config.top_k)
    if config.embedding_mode == 'learned':
        table = EmbeddingTable.learned(words, config.embedding_dim, rng)
    else:
        if pretrained is None:
            raise MissingResourceError(
                'embeddings', f'embedding_mode={config.embedding_mode} needs pretrained embeddings')
        table = EmbeddingTable.from_pretrained(words, pretrained, config.embedding_mode, rng)
    return VqaModel.init(config, table, answers, visual_dim, rng)


def _fit(
        config: RunConfig,
        instances: Sequence[QAInstance],
        features: Optional[VisualFeatureStore],
        pretrained: Optional[Mapping[str, np.ndarray]],
        epochs: int,
        validation: Optional[Sequence[QAInstance]]):
    rng = make_rng(config.seed)
    if not instances:
        raise ValueError('no training instances')
    visual_dim = features.dim if features is not None else 1
    if config.use_vision and features is None:
        raise MissingResourceError('features', 'training with vision needs a feature file')
    targets = [select_training_answer(inst, config.answer_strategy, rng) for inst in instances]
    model = _build_model(config, instances, targets, visual_dim, pretrained, rng)
    examples, skipped = build_examples(model, instances, targets, features)
    if not examples:
        raise ValueError('no usable training examples')
    optimizer = Optimizer(model.parameters(), OptimizerState(
        kind=config.optimizer,
        learning_rate=config.learning_rate,
        beta1=config.momentum,
        beta2=config.beta2,
        eps=config.eps))

    window = config.smoothing_window
    half = window // 2
    rows = []
    val_correct = []
    snapshots = {}
    best_epoch, best_value = None, -math.inf
    finalized = 0

    def finalize(upto: int):
        nonlocal best_epoch, best_value, finalized
        smoothed = smooth_curve(val_correct, window)
        for epoch in range(finalized + 1, upto + 1):
            if smoothed[epoch - 1] > best_value:
                best_epoch, best_value = epoch, smoothed[epoch - 1]
        finalized = max(finalized, upto)

    for epoch in range(1, epochs + 1):
        total_loss, total_weight, correct, seen = 0.0, 0.0, 0, 0
        for batch_no, batch in enumerate(bucket_batches(examples, config.batch_size, rng)):
            optimizer.zero_grad()
            try:
                loss, batch_correct = _batch_loss(model, batch)
                value = loss.item()
                if not math.isfinite(value):
                    raise InvalidValueError('non-finite loss')
                loss.backward()
                optimizer.step()
            except InvalidValueError as e:
                raise DivergenceError(
                    f'Training diverged at epoch {epoch}, batch {batch_no}: {e}',
                    epoch=epoch, batch=batch_no) from e
            total_loss += value * len(batch)
            total_weight += len(batch)
            if batch_correct is not None:
                correct += batch_correct
                seen += len(batch)
        row = {
            'epoch': epoch,
            'loss': total_loss / total_weight,
            'train_accuracy': correct / seen if seen else None,
            'val_accuracy': None,
            'smoothed_val_accuracy': None,
            'seed': config.seed}
        if validation:
            answers = predict_answers(model, validation, features, config.batch_size)
            val_correct.append(float(_correct(answers, validation)))
            row['val_accuracy'] = val_correct[-1] / len(validation)
            snapshots[epoch] = model.snapshot()
            finalize(epoch - half)
            keep = {best_epoch} | set(range(epoch - half, epoch + 1))
            snapshots = {e: s for e, s in snapshots.items() if e in keep}
        rows.append(row)
        logger.info(
            'epoch %d: loss %.4f, train acc %s, val acc %s', epoch, row['loss'],
            'n/a' if row['train_accuracy'] is None else f'{row["train_accuracy"]:.4f}',
            'n/a' if row['val_accuracy'] is None else f'{row["val_accuracy"]:.4f}')

    if validation:
        finalize(epochs)
        for row, value in zip(rows, smooth_curve(val_correct, window)):
            row['smoothed_val_accuracy'] = value / len(validation)
        model.load_arrays(snapshots[best_epoch])
        logger.info(
            'Best epoch %d (smoothed validation accuracy %.4f)',
            best_epoch, best_value / len(validation))
    else:
        best_epoch = epochs
    return model, rows, best_epoch, skipped


def train(
        config: RunConfig,
        instances: Sequence[QAInstance],
        features: Optional[VisualFeatureStore],
        pretrained: Optional[Mapping[str, np.ndarray]] = None) -> TrainResult:
    """
    Train on all but the last `validation_fraction` of `instances`, keep the
    epoch with the best smoothed validation accuracy, and with
    `retrain_full` retrain from the same seed on every instance for that
    many epochs.
    """
    train_part, validation = split_validation(instances, config.validation_fraction)
    model, log, best_epoch, skipped = _fit(
        config, train_part, features, pretrained, config.epochs, validation)
    if config.retrain_full:
        logger.info('Retraining on all %d instances for %d epoch(s)', len(instances), best_epoch)
        model, _, _, skipped = _fit(
            config, list(instances), features, pretrained, best_epoch, None)
    return TrainResult(model, log, best_epoch, skipped)
