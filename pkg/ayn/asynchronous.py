"""
Async scoring of prediction records into a per-record score frame.

Records are cut into contiguous chunks, each scored on a worker thread;
the chunk frames are concatenated back in record order.
"""

__all__ = ['score_frame', 'evaluate']

import asyncio
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Sequence

import pandas as pd

from .baselines import classify_question_type
from .data import answer_words
from .metrics import MetricConfig, PredictionRecord, agreement_split, metric_columns, score_record
from .pandas_util import metric_table
from .stats import Stats
from .taxonomy import Taxonomy


def _score_chunk(
        records: Sequence[PredictionRecord],
        config: MetricConfig,
        taxonomy: Optional[Taxonomy],
        multi_reference: bool) -> pd.DataFrame:
    rows = []
    for record in records:
        row = {
            'id': record.id,
            'question_type': (
                classify_question_type(record.question)
                if record.question else None),
            'agreement': (
                agreement_split(record.references, config.agreement)
                if len(record.references) >= 2 else None),
            'answer_words': len(answer_words(record.references[0]))}
        row.update(score_record(record, config, taxonomy, multi_reference))
        rows.append(row)
    return pd.DataFrame(rows)


async def score_frame(
        records: Sequence[PredictionRecord],
        config: MetricConfig = None,
        taxonomy: Optional[Taxonomy] = None) -> pd.DataFrame:
    """
    One row per record: id, question type, agreement split, answer length
    and every metric column in [0, 1].

    The result carries a `score_stats` attribute with timing.
    """
    config = config or MetricConfig()
    if not records:
        raise ValueError('no records to score')
    start_ts = time.perf_counter_ns()
    multi_reference = any(len(r.references) > 1 for r in records)
    chunks = max(min(config.chunks, len(records)), 1)
    per_chunk = len(records) // chunks
    ranges = [
        (
            i * per_chunk,
            ((i + 1) * per_chunk) if i < chunks - 1 else len(records)
        )
        for i in range(chunks)]
    loop = asyncio.get_running_loop()
    with ThreadPoolExecutor(max_workers=chunks) as executor:
        tasks = [
            loop.run_in_executor(
                executor, _score_chunk, records[lo:hi], config, taxonomy, multi_reference)
            for lo, hi in ranges]
        frames = await asyncio.gather(*tasks)
    df = pd.concat(frames, ignore_index=True)
    df.attrs['columns'] = metric_columns(config, multi_reference)
    end_ts = time.perf_counter_ns()
    df.score_stats = Stats(end_ts - start_ts, len(records))
    return df


async def evaluate(
        records: Sequence[PredictionRecord],
        config: MetricConfig = None,
        taxonomy: Optional[Taxonomy] = None) -> pd.DataFrame:
    """
    Metric x subset table in percent (see `pandas_util.metric_table`).
    """
    df = await score_frame(records, config, taxonomy)
    table = metric_table(df, df.attrs['columns'])
    table.score_stats = df.score_stats
    return table
