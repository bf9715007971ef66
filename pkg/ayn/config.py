"""
Run configuration for training, prediction and baselines, plus the
evaluation settings kept in a `metrics` table of the same file.
"""

__all__ = [
    'ENCODER_KINDS', 'DECODER_KINDS', 'BOW_REDUCTIONS', 'RunConfig', 'load_config',
    'load_metric_config', 'resolve_path', 'DATA_DIR_ENV', 'METRICS_TABLE']

import dataclasses
import json
import os
try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass
from pathlib import Path

from .data import ANSWER_STRATEGIES
from .encoders import CNN_ACTIVATIONS, CNN_AGGREGATIONS, EMBEDDING_MODES
from .errors import ConfigError
from .fusion import FUSION_MODES
from .metrics import MetricConfig
from .optim import OPTIMIZER_KINDS

ENCODER_KINDS = ('bow', 'cnn', 'lstm', 'gru')
DECODER_KINDS = ('classify', 'generate')
BOW_REDUCTIONS = ('sum', 'mean')
DATA_DIR_ENV = 'AYN_DATA_DIR'
METRICS_TABLE = 'metrics'

_CHOICES = {
    'encoder': ENCODER_KINDS,
    'embedding_mode': EMBEDDING_MODES,
    'cnn_aggregation': CNN_AGGREGATIONS,
    'cnn_activation': CNN_ACTIVATIONS,
    'fusion': FUSION_MODES,
    'decoder': DECODER_KINDS,
    'answer_strategy': ANSWER_STRATEGIES,
    'optimizer': OPTIMIZER_KINDS,
    'bow_reduction': BOW_REDUCTIONS,
}

_POSITIVE = (
    'embedding_dim', 'hidden_size', 'cnn_views', 'cnn_feature_maps', 'top_k',
    'epochs', 'batch_size', 'smoothing_window', 'max_answer_length')


@dataclass(frozen=True)
class RunConfig:
    encoder: str = 'lstm'
    embedding_mode: str = 'learned'
    embedding_dim: int = 300
    hidden_size: int = 500
    cnn_views: int = 3
    cnn_feature_maps: int = 500
    cnn_aggregation: str = 'sum-pool'
    cnn_activation: str = 'tanh'
    fusion: str = 'sum'
    normalize_visual: bool = True
    use_vision: bool = True
    decoder: str = 'classify'
    head_hidden: int = 0
    top_k: int = 2000
    answer_strategy: str = 'most-frequent'
    optimizer: str = 'adam'
    learning_rate: float = 1e-3
    momentum: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 20
    batch_size: int = 128
    validation_fraction: float = 0.1
    seed: int = 0
    smoothing_window: int = 3
    max_answer_length: int = 10
    dedup: bool = True
    retrain_full: bool = False
    bow_reduction: str = 'sum'
    strip_articles: bool = False

    def __post_init__(self):
        for name, choices in _CHOICES.items():
            value = getattr(self, name)
            if value not in choices:
                raise ConfigError(
                    f'{name} must be one of {choices}, got {value!r}',
                    field=name, value=value)
        for name in _POSITIVE:
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigError(
                    f'{name} must be a positive integer, got {value!r}',
                    field=name, value=value)
        if self.head_hidden < 0:
            raise ConfigError('head_hidden must be >= 0', field='head_hidden')
        if self.learning_rate <= 0:
            raise ConfigError('learning_rate must be positive', field='learning_rate')
        if not 0.0 <= self.momentum < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ConfigError('momentum and beta2 must lie in [0, 1)')
        if self.eps <= 0:
            raise ConfigError('eps must be positive', field='eps')
        if not 0.0 < self.validation_fraction < 1.0:
            raise ConfigError(
                'validation_fraction must lie in (0, 1)', field='validation_fraction')
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError('seed must be an unsigned 64-bit integer', field='seed')

    @classmethod
    def from_dict(cls, values: dict) -> 'RunConfig':
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f'Unknown config key(s): {unknown}', keys=unknown)
        try:
            return cls(**values)
        except TypeError as e:
            raise ConfigError(str(e)) from e

    def with_overrides(self, **overrides) -> 'RunConfig':
        """Replace fields whose override is not None."""
        values = dataclasses.asdict(self)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return type(self).from_dict(values)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _read_settings(path) -> dict:
    path = Path(path)
    try:
        if path.suffix == '.toml':
            with open(path, 'rb') as f:
                values = tomllib.load(f)
        else:
            with open(path, encoding='utf-8') as f:
                values = json.load(f)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as e:
        raise ConfigError(f'{path}: {e}', path=str(path)) from e
    if not isinstance(values, dict):
        raise ConfigError(f'{path}: expected a table of settings', path=str(path))
    return values


def load_config(path) -> RunConfig:
    """
    TOML (`.toml`) or JSON run configuration. A `metrics` table, if any,
    belongs to `load_metric_config`.
    """
    values = dict(_read_settings(path))
    values.pop(METRICS_TABLE, None)
    return RunConfig.from_dict(values)


def load_metric_config(path) -> MetricConfig:
    """The `metrics` table of a run configuration file; defaults if absent."""
    values = _read_settings(path).get(METRICS_TABLE, {})
    if not isinstance(values, dict):
        raise ConfigError(
            f'{path}: "{METRICS_TABLE}" must be a table of settings', path=str(path))
    return MetricConfig.from_dict(values)


def resolve_path(path, data_dir=None) -> Path:
    """Relative paths resolve against `data_dir` or $AYN_DATA_DIR when set."""
    path = Path(path)
    if path.is_absolute():
        return path
    base = data_dir or os.environ.get(DATA_DIR_ENV)
    return Path(base) / path if base else path
