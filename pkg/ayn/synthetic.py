"""
A seeded toy world of colored shapes for end-to-end checks.

Every image shows `count` copies of one shape in one color. Its feature
vector is one-hot(color) + one-hot(shape) + one-hot(count - 1), zero-padded
to `feature_dim`, plus Gaussian noise. Some question families need the
image; the `bias` family is answerable from the wording alone.
"""

__all__ = [
    'FAMILIES', 'VISION_FAMILIES', 'BIAS_ANSWERS', 'ToyWorldSpec', 'ToyWorld',
    'generate', 'write_world']

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .data import QAInstance, normalize_answer, preprocess_question, write_qa_jsonl
from .errors import ConfigError
from .features import VisualFeatureStore, write_features_tsv

logger = logging.getLogger(__name__)

FAMILIES = ('what-color', 'what-shape', 'how-many', 'bias', 'describe')
VISION_FAMILIES = frozenset(('what-color', 'what-shape', 'how-many', 'describe'))
BIAS_ANSWERS = {'sky': 'blue', 'grass': 'green', 'snow': 'white'}

_DEFAULT_COLORS = ('red', 'green', 'blue', 'yellow', 'white', 'black', 'orange', 'purple')
_DEFAULT_SHAPES = ('circle', 'square', 'triangle', 'star')


@dataclass
class ToyWorldSpec:
    seed: int = 0
    n_train: int = 2000
    n_test: int = 500
    colors: tuple = _DEFAULT_COLORS
    shapes: tuple = _DEFAULT_SHAPES
    max_count: int = 3
    feature_dim: Optional[int] = None
    noise: float = 0.1
    families: tuple = ('what-color', 'what-shape', 'how-many', 'bias')

    def __post_init__(self):
        self.colors = tuple(self.colors)
        self.shapes = tuple(self.shapes)
        self.families = tuple(self.families)
        if len(set(self.colors)) != len(self.colors) or len(set(self.shapes)) != len(self.shapes):
            raise ConfigError('colors and shapes must be unique')
        if len(self.colors) * len(self.shapes) < 4:
            raise ConfigError(
                'toy world needs at least 4 (color, shape) combinations')
        if self.n_train < 1 or self.n_test < 0:
            raise ConfigError('n_train must be >= 1 and n_test >= 0')
        if self.max_count < 1:
            raise ConfigError('max_count must be >= 1')
        if self.noise < 0:
            raise ConfigError('noise must be non-negative')
        if not self.families or any(f not in FAMILIES for f in self.families):
            raise ConfigError(f'families must be drawn from {FAMILIES}')
        if self.feature_dim is None:
            self.feature_dim = self.min_feature_dim
        elif self.feature_dim < self.min_feature_dim:
            raise ConfigError(
                f'feature_dim {self.feature_dim} < {self.min_feature_dim} '
                'needed to encode color, shape and count')

    @property
    def min_feature_dim(self) -> int:
        return len(self.colors) + len(self.shapes) + self.max_count


@dataclass
class ToyWorld:
    spec: ToyWorldSpec
    train: list
    test: list
    features: VisualFeatureStore
    key: list = field(default_factory=list)

    def families_by_id(self) -> dict:
        return {entry['id']: entry['family'] for entry in self.key}


def _ask(family: str, color: str, shape: str, count: int, rng) -> tuple[str, str]:
    if family == 'what-color':
        return f'what color is the {shape}?', color
    if family == 'what-shape':
        return f'what shape is the {color} object?', shape
    if family == 'how-many':
        return f'how many {shape}s are there?', str(count)
    if family == 'describe':
        return 'what is in the picture?', f'{color}, {shape}'
    thing = sorted(BIAS_ANSWERS)[int(rng.integers(len(BIAS_ANSWERS)))]
    return f'what color is the {thing}?', BIAS_ANSWERS[thing]


def generate(spec: ToyWorldSpec) -> ToyWorld:
    """Deterministic in `spec.seed`; train ids come first, then test ids."""
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    n_colors, n_shapes = len(spec.colors), len(spec.shapes)
    total = spec.n_train + spec.n_test
    instances, vectors, key = [], {}, []
    for i in range(total):
        color = int(rng.integers(n_colors))
        shape = int(rng.integers(n_shapes))
        count = int(rng.integers(1, spec.max_count + 1))
        family = spec.families[int(rng.integers(len(spec.families)))]
        vec = np.zeros(spec.feature_dim)
        vec[color] = 1.0
        vec[n_colors + shape] = 1.0
        vec[n_colors + n_shapes + count - 1] = 1.0
        vec += spec.noise * rng.standard_normal(spec.feature_dim)
        image = f'image{i}'
        vectors[image] = vec
        question, answer = _ask(
            family, spec.colors[color], spec.shapes[shape], count, rng)
        inst_id = f'toy-{i:05d}'
        instances.append(QAInstance(
            id=inst_id,
            image=image,
            question=question,
            tokens=preprocess_question(question),
            answers=[normalize_answer(answer)]))
        key.append({
            'id': inst_id,
            'family': family,
            'vision': family in VISION_FAMILIES,
            'color': spec.colors[color],
            'shape': spec.shapes[shape],
            'count': count})
    logger.debug('Generated toy world: %d train, %d test', spec.n_train, spec.n_test)
    return ToyWorld(
        spec=spec,
        train=instances[:spec.n_train],
        test=instances[spec.n_train:],
        features=VisualFeatureStore(vectors, spec.feature_dim),
        key=key)


def write_world(world: ToyWorld, directory) -> dict:
    """Write train / test QA JSONL, features TSV and the answer key."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        'train': directory / 'train.jsonl',
        'test': directory / 'test.jsonl',
        'features': directory / 'features.tsv',
        'key': directory / 'answer_key.jsonl'}
    write_qa_jsonl(world.train, paths['train'])
    write_qa_jsonl(world.test, paths['test'])
    write_features_tsv(world.features, paths['features'])
    with open(paths['key'], 'w', encoding='utf-8') as f:
        for entry in world.key:
            f.write(json.dumps(entry, sort_keys=True) + '\n')
    return paths
