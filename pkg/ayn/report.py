"""
Prediction / reference files, evaluation reports and training logs.
"""

__all__ = [
    'Report', 'load_predictions', 'write_predictions', 'load_references',
    'build_records', 'evaluate_files', 'write_training_log',
    'load_training_log', 'log_to_text', 'plot_training_log', 'REPORT_SCHEMA']

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import pandas as pd

from .data import answer_key, load_qa
from .errors import FormatError, MissingResourceError
from .metrics import MetricConfig, PredictionRecord
from .pandas_util import table_to_records
from .synchronous import evaluate
from .taxonomy import Taxonomy

logger = logging.getLogger(__name__)

REPORT_SCHEMA = 1
LOG_FIELDS = (
    'epoch', 'loss', 'train_accuracy', 'val_accuracy',
    'smoothed_val_accuracy', 'seed')


def _jsonl(path):
    path = str(path)
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
            yield lineno, obj


def load_predictions(path) -> dict[str, str]:
    """`{"id", "answer"}` per line -> id -> answer string."""
    predictions = {}
    for lineno, obj in _jsonl(path):
        if 'id' not in obj or 'answer' not in obj:
            raise FormatError('expected "id" and "answer"', path=str(path), line=lineno)
        key = str(obj['id'])
        if key in predictions:
            raise FormatError(f'duplicate id {key!r}', path=str(path), line=lineno)
        predictions[key] = str(obj['answer'] or '')
    return predictions


def write_predictions(rows: Iterable[tuple[str, str]], path):
    with open(path, 'w', encoding='utf-8') as f:
        for key, answer in rows:
            f.write(json.dumps({'id': key, 'answer': answer}) + '\n')


def load_references(path) -> list[tuple]:
    """
    `{"id", "answers": [...], "question"?}` per line, in file order.
    QA JSONL files qualify as they are; any other suffix is read as a
    DAQUAR text QA file, with the ids `ayn predict` writes for it.
    """
    if Path(path).suffix not in ('.jsonl', '.json'):
        return [
            (inst.id, [answer_key(a) for a in inst.answers], inst.question)
            for inst in load_qa(path)]
    references = []
    for lineno, obj in _jsonl(path):
        answers = obj.get('answers')
        if 'id' not in obj or not isinstance(answers, list) or not answers:
            raise FormatError(
                'expected "id" and a non-empty "answers" list', path=str(path), line=lineno)
        references.append((str(obj['id']), [str(a) for a in answers], obj.get('question')))
    return references


def build_records(
        predictions: dict[str, str],
        references: Sequence[tuple]) -> tuple[list, int]:
    """
    Align by id. References without a prediction score as the empty answer;
    returns the records and how many predictions were missing.
    """
    records, missing = [], 0
    for key, answers, question in references:
        if key not in predictions:
            missing += 1
        records.append(PredictionRecord.from_strings(
            key, predictions.get(key, ''), answers, question))
    aligned = len(references) - missing
    if aligned == 0:
        raise ValueError('no prediction ids match the references')
    if missing:
        logger.warning('%d reference(s) have no prediction; scored as empty', missing)
    extra = len(set(predictions) - {key for key, _, _ in references})
    if extra:
        logger.warning('%d prediction(s) have no reference and are ignored', extra)
    return records, missing


@dataclass
class Report:
    table: pd.DataFrame
    records: int
    missing_predictions: int

    @property
    def columns(self) -> list:
        return [c for c in self.table.columns if c != 'count']

    def to_json(self) -> dict:
        return {
            'schema': REPORT_SCHEMA,
            'records': self.records,
            'missing_predictions': self.missing_predictions,
            'columns': self.columns,
            'rows': table_to_records(self.table)}

    def to_text(self) -> str:
        formatters = {c: '{:.2f}'.format for c in self.columns}
        text = self.table.to_string(formatters=formatters)
        if self.missing_predictions:
            text += f'\n\nMissing predictions (scored 0): {self.missing_predictions}'
        return text


def evaluate_files(
        predictions_path,
        references_path,
        config: Optional[MetricConfig] = None,
        taxonomy: Optional[Taxonomy] = None) -> Report:
    config = config or MetricConfig()
    if config.mu == 'taxonomy' and taxonomy is None:
        logger.info('No taxonomy given; WUPS falls back to exact word match')
    records, missing = build_records(
        load_predictions(predictions_path), load_references(references_path))
    table = evaluate(records, config, taxonomy)
    logger.info('Scoring:\n%s', table.score_stats)
    return Report(table, len(records), missing)


def write_training_log(rows: Sequence[dict], path):
    with open(path, 'w', encoding='utf-8') as f:
        for row in rows:
            f.write(json.dumps({key: row[key] for key in LOG_FIELDS}) + '\n')


def load_training_log(path) -> pd.DataFrame:
    rows = [obj for _, obj in _jsonl(path)]
    if not rows:
        raise FormatError('empty training log', path=str(path))
    df = pd.DataFrame(rows)
    missing = [key for key in LOG_FIELDS if key not in df.columns]
    if missing:
        raise FormatError(f'training log lacks {missing}', path=str(path))
    return df.set_index('epoch')[list(LOG_FIELDS[1:])]


def log_to_text(log: pd.DataFrame) -> str:
    best = log['smoothed_val_accuracy'].astype('float64')
    text = log.to_string(float_format='{:.4f}'.format)
    if best.notna().any():
        text += f'\n\nBest epoch (smoothed): {int(best.idxmax())}'
    return text


def plot_training_log(log: pd.DataFrame, path):
    """SVG of the validation curves; needs the `plot` extra (matplotlib)."""
    try:
        import matplotlib
        matplotlib.use('Agg')
        import matplotlib.pyplot as plt
    except ImportError as e:
        raise MissingResourceError(
            'matplotlib', 'SVG output needs matplotlib (install the "plot" extra)') from e
    fig, ax = plt.subplots(figsize=(6, 4))
    for column in ('train_accuracy', 'val_accuracy', 'smoothed_val_accuracy'):
        series = log[column].astype('float64')
        if series.notna().any():
            ax.plot(log.index, series, label=column.replace('_', ' '))
    ax.set_xlabel('epoch')
    ax.set_ylabel('accuracy')
    ax.legend()
    fig.savefig(path, format='svg', metadata={'Date': None})
    plt.close(fig)
