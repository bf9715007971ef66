"""
A sync shim around the `asynchronous` module.
"""

__all__ = ['score_frame', 'evaluate']

import asyncio
from typing import Optional, Sequence

import pandas as pd

from . import asynchronous as a
from .metrics import MetricConfig, PredictionRecord
from .taxonomy import Taxonomy


def _run(coro):
    try:
        loop = asyncio.get_running_loop()
    except RuntimeError:
        loop = None
    if loop is None:
        return asyncio.run(coro)
    else:
        return loop.run_until_complete(coro)


def score_frame(
        records: Sequence[PredictionRecord],
        config: MetricConfig = None,
        taxonomy: Optional[Taxonomy] = None) -> pd.DataFrame:
    """
    One row of scores per record, computed over `config.chunks` threads.
    """
    return _run(a.score_frame(records, config, taxonomy))


def evaluate(
        records: Sequence[PredictionRecord],
        config: MetricConfig = None,
        taxonomy: Optional[Taxonomy] = None) -> pd.DataFrame:
    """
    Metric x subset table in percent.
    """
    return _run(a.evaluate(records, config, taxonomy))
