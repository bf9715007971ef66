__all__ = ['metric_table', 'subset_masks', 'table_to_records']

import numpy as np
import pandas as pd

from .baselines import QUESTION_TYPES
from .metrics import SPLITS

MAX_ANSWER_WORDS = 4


def subset_masks(frame: pd.DataFrame) -> dict[str, pd.Series]:
    """
    Boolean row masks by report subset, in report order: everything, each
    question type, each agreement split, then answer length in words.

    Type and agreement subsets only appear when the frame knows them.
    """
    masks = {'overall': pd.Series(True, index=frame.index)}
    if frame['question_type'].notna().any():
        for name, _ in QUESTION_TYPES:
            masks[f'type={name}'] = frame['question_type'] == name
    if frame['agreement'].notna().any():
        for split in SPLITS:
            masks[f'agreement={split}'] = frame['agreement'] == split
    for words in range(1, MAX_ANSWER_WORDS + 1):
        masks[f'words={words}'] = frame['answer_words'] == words
    return masks


def metric_table(frame: pd.DataFrame, columns: list) -> pd.DataFrame:
    """
    Metric x subset table in percent, with the instance count per subset.

    Empty subsets are dropped, except `overall`.
    """
    rows = {}
    for subset, mask in subset_masks(frame).items():
        selected = frame.loc[mask, columns]
        if selected.empty and subset != 'overall':
            continue
        # Fixed-order float64 sums keep the reduction reproducible.
        sums = selected.to_numpy(dtype=np.float64).sum(axis=0) if len(selected) else np.zeros(len(columns))
        means = 100.0 * sums / max(len(selected), 1)
        rows[subset] = {'count': int(len(selected)), **dict(zip(columns, means))}
    table = pd.DataFrame.from_dict(rows, orient='index', columns=['count', *columns])
    table.index.name = 'subset'
    return table


def table_to_records(table: pd.DataFrame) -> list[dict]:
    """
    Convert a metric table into JSON-ready rows, keyed by column name.

    The named index becomes the first key of every row.
    """
    records = []
    for subset, row in table.iterrows():
        record = {table.index.name or 'index': subset}
        for col_name in table.columns:
            value = row[col_name]
            record[col_name] = int(value) if col_name == 'count' else float(value)
        records.append(record)
    return records
