"""
Shared builders for the test suite: tiny taxonomies, QA sets and
toy-world runs small enough for a unit test.
"""

import json
from pathlib import Path

import numpy as np

from ayn.data import QAInstance, normalize_answer, preprocess_question


TAXONOMY_EDGES = [
    ('animal', 'entity'),
    ('cat', 'animal'),
    ('dog', 'animal'),
    ('entity', 'root'),
]


def write_lines(path: Path, lines) -> Path:
    path.write_text(''.join(f'{line}\n' for line in lines), encoding='utf-8')
    return path


def write_taxonomy(directory: Path, word_map: bool = True) -> tuple:
    """Tab-separated edges plus an identity word -> node map."""
    edges = write_lines(
        Path(directory) / 'edges.txt',
        [f'{child}\t{parent}' for child, parent in TAXONOMY_EDGES])
    if not word_map:
        return edges, None
    words = write_lines(
        Path(directory) / 'words.txt',
        [f'{w}\t{w}' for w in ('cat', 'dog', 'animal', 'entity')])
    return edges, words


def make_instance(idx, question, *answers, image='image1') -> QAInstance:
    return QAInstance(
        id=str(idx),
        image=image,
        question=question,
        tokens=preprocess_question(question),
        answers=[normalize_answer(a) for a in answers])


def write_jsonl(path: Path, rows) -> Path:
    with open(path, 'w', encoding='utf-8') as f:
        for row in rows:
            f.write(json.dumps(row) + '\n')
    return path


def random_embeddings(words, dim=6, seed=0) -> dict:
    rng = np.random.default_rng(seed)
    return {word: rng.normal(size=dim) for word in words}
