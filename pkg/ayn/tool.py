"""
Command line front end.

From the command line, run as::

    ayn --help
    python3 -m ayn.tool --help

Every command exits 0 on success. Failures print one JSON object
(`{"error", "message", ...}`) on stderr and exit 1; usage errors print
`{"error": "UsageError", ...}` and exit 2.

Every command but `report` and `synth` takes `--config` (TOML or JSON);
flags override the file. `eval` reads the file's `metrics` table.
"""

__all__ = [
    'main', 'cmd_train', 'cmd_predict', 'cmd_eval', 'cmd_baseline',
    'cmd_report', 'cmd_synth']

import argparse
import json
import logging
import sys
from typing import Optional

from .baselines import BASELINE_KINDS, make_baseline
from .config import BOW_REDUCTIONS, RunConfig, load_config, load_metric_config, resolve_path
from .data import load_qa
from .encoders import load_embeddings
from .errors import AynError, MissingResourceError, ShapeError
from .features import load_features
from .metrics import AGREEMENT_PREDICATES, CONSENSUS_MODES, MU_BACKENDS, MetricConfig
from .model import load_checkpoint, save_checkpoint
from .report import (
    Report, evaluate_files, load_training_log, log_to_text, plot_training_log,
    write_predictions, write_training_log)
from .stats import Timer
from .synthetic import FAMILIES, ToyWorldSpec, generate, write_world
from .taxonomy import load_taxonomy
from .train import TrainResult, predict_answers, train

logger = logging.getLogger(__name__)


def _optional(path, data_dir=None):
    return None if path is None else resolve_path(path, data_dir)


def cmd_train(
        config: RunConfig,
        train_path,
        features_path,
        checkpoint_path,
        log_path=None,
        embeddings_path=None) -> TrainResult:
    """Train, then write the checkpoint and (optionally) the epoch log."""
    instances = load_qa(train_path)
    features = load_features(features_path) if features_path is not None else None
    pretrained = load_embeddings(embeddings_path) if embeddings_path is not None else None
    with Timer('instances') as timer:
        result = train(config, instances, features, pretrained)
        timer.count = len(instances) * config.epochs
    logger.info('Training:\n%s', timer.stats)
    save_checkpoint(result.model, checkpoint_path, extra={'best_epoch': result.best_epoch})
    if log_path is not None:
        write_training_log(result.log, log_path)
    return result


def cmd_predict(
        checkpoint_path,
        test_path,
        features_path,
        out_path,
        batch_size: Optional[int] = None) -> list:
    """Batch size defaults to the one the checkpoint was trained with."""
    model = load_checkpoint(checkpoint_path)
    instances = load_qa(test_path)
    features = None
    if features_path is not None:
        features = load_features(features_path)
    elif model.config.use_vision:
        raise MissingResourceError('features', 'this model needs a feature file')
    if features is not None and model.config.use_vision and features.dim != model.visual_dim:
        raise ShapeError(
            f'feature dimension {features.dim} does not match the checkpoint '
            f'({model.visual_dim})', path=str(features_path))
    with Timer('instances') as timer:
        answers = predict_answers(
            model, instances, features, batch_size or model.config.batch_size)
        timer.count = len(instances)
    logger.info('Prediction:\n%s', timer.stats)
    rows = [(inst.id, answer) for inst, answer in zip(instances, answers)]
    write_predictions(rows, out_path)
    return rows


def cmd_eval(
        predictions_path,
        references_path,
        config: Optional[MetricConfig] = None,
        taxonomy_path=None,
        word_map_path=None) -> Report:
    taxonomy = None
    if taxonomy_path is not None:
        taxonomy = load_taxonomy(taxonomy_path, word_map_path)
    return evaluate_files(predictions_path, references_path, config, taxonomy)


def cmd_baseline(
        kind: str,
        train_path,
        test_path,
        out_path,
        embeddings_path=None,
        features_path=None,
        config: Optional[RunConfig] = None) -> list:
    """`config` supplies `strip_articles` (lookup) and `bow_reduction` (nn-*)."""
    config = config or RunConfig()
    if kind in ('nn-question', 'nn-visual') and embeddings_path is None:
        raise MissingResourceError('embeddings', f'baseline {kind} needs --embeddings')
    if kind == 'nn-visual' and features_path is None:
        raise MissingResourceError('features', 'baseline nn-visual needs --features')
    train_set = load_qa(train_path)
    test_set = load_qa(test_path)
    embeddings = load_embeddings(embeddings_path) if embeddings_path is not None else None
    features = load_features(features_path) if features_path is not None else None
    baseline = make_baseline(
        kind, train_set, embeddings, features, config.strip_articles, config.bow_reduction)
    rows = [(inst.id, baseline.answer(inst)) for inst in test_set]
    write_predictions(rows, out_path)
    return rows


def cmd_report(log_path, svg_path=None, format: str = 'text') -> str:
    log = load_training_log(log_path)
    if svg_path is not None:
        plot_training_log(log, svg_path)
    if format == 'json':
        return log.reset_index().to_json(orient='records')
    return log_to_text(log)


def cmd_synth(spec: ToyWorldSpec, out_dir) -> dict:
    return {name: str(path) for name, path in write_world(generate(spec), out_dir).items()}


class _ArgumentParser(argparse.ArgumentParser):
    """Usage errors go to stderr as JSON, like every other failure."""
    def error(self, message):
        print(json.dumps({
            'error': 'UsageError',
            'message': message,
            'usage': self.format_usage().strip()}), file=sys.stderr)
        self.exit(2)


def _parse_args(argv=None):
    parser = _ArgumentParser(prog='ayn', description='Visual question answering toolkit')
    parser.add_argument('--log-level', type=str, default='INFO')
    parser.add_argument(
        '--data-dir', type=str,
        help='Base directory for relative input paths (default: $AYN_DATA_DIR)')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('train', help='Train a model')
    p.add_argument('--config', type=str)
    p.add_argument('--train', type=str, required=True)
    p.add_argument('--features', type=str)
    p.add_argument('--embeddings', type=str)
    p.add_argument('--checkpoint', type=str, required=True)
    p.add_argument('--log', type=str)
    p.add_argument('--encoder', type=str)
    p.add_argument('--embedding-mode', type=str)
    p.add_argument('--embedding-dim', type=int)
    p.add_argument('--hidden-size', type=int)
    p.add_argument('--fusion', type=str)
    p.add_argument('--decoder', type=str)
    p.add_argument('--top-k', type=int)
    p.add_argument('--answer-strategy', type=str)
    p.add_argument('--optimizer', type=str)
    p.add_argument('--learning-rate', type=float)
    p.add_argument('--epochs', type=int)
    p.add_argument('--batch-size', type=int)
    p.add_argument('--seed', type=int)
    p.add_argument('--smoothing-window', type=int)
    p.add_argument('--no-vision', action='store_const', const=False, dest='use_vision')
    p.add_argument('--retrain-full', action='store_const', const=True, dest='retrain_full')

    p = sub.add_parser('predict', help='Answer a QA file with a checkpoint')
    p.add_argument('--checkpoint', type=str, required=True)
    p.add_argument('--test', type=str, required=True)
    p.add_argument('--features', type=str)
    p.add_argument('--out', type=str, required=True)
    p.add_argument(
        '--config', type=str,
        help='Run config whose batch_size replaces the checkpoint\'s')
    p.add_argument('--batch-size', type=int)

    p = sub.add_parser('eval', help='Score predictions against references')
    p.add_argument(
        '--config', type=str, help='Run config; its "metrics" table holds the settings')
    p.add_argument('--predictions', type=str, required=True)
    p.add_argument('--references', type=str, required=True)
    p.add_argument('--taxonomy', type=str)
    p.add_argument('--word-map', type=str)
    p.add_argument('--thresholds', type=float, nargs='+')
    p.add_argument('--mu', choices=MU_BACKENDS)
    p.add_argument('--consensus', choices=CONSENSUS_MODES)
    p.add_argument('--down-weight', type=float)
    p.add_argument('--agreement', choices=AGREEMENT_PREDICATES)
    p.add_argument('--vqa', action='store_const', const=True)
    p.add_argument('--chunks', type=int)
    p.add_argument('--format', choices=('text', 'json'), default='text')
    p.add_argument('--out', type=str, help='Also write the JSON report here')

    p = sub.add_parser('baseline', help='Run a non-neural baseline')
    p.add_argument('--config', type=str)
    p.add_argument('--kind', choices=BASELINE_KINDS, required=True)
    p.add_argument('--train', type=str, required=True)
    p.add_argument('--test', type=str, required=True)
    p.add_argument('--embeddings', type=str)
    p.add_argument('--features', type=str)
    p.add_argument('--strip-articles', action='store_const', const=True)
    p.add_argument('--bow-reduction', choices=BOW_REDUCTIONS)
    p.add_argument('--out', type=str, required=True)

    p = sub.add_parser('report', help='Render a training log')
    p.add_argument('--log', type=str, required=True)
    p.add_argument('--svg', type=str)
    p.add_argument('--format', choices=('text', 'json'), default='text')

    p = sub.add_parser('synth', help='Write a toy world')
    p.add_argument('--out', type=str, required=True)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--n-train', type=int, default=2000)
    p.add_argument('--n-test', type=int, default=500)
    p.add_argument('--noise', type=float, default=0.1)
    p.add_argument('--families', nargs='+', choices=FAMILIES)
    return parser.parse_args(argv)


_TRAIN_OVERRIDES = (
    'encoder', 'embedding_mode', 'embedding_dim', 'hidden_size', 'fusion',
    'decoder', 'top_k', 'answer_strategy', 'optimizer', 'learning_rate',
    'epochs', 'batch_size', 'seed', 'smoothing_window', 'use_vision',
    'retrain_full')
_METRIC_OVERRIDES = (
    'thresholds', 'mu', 'consensus', 'down_weight', 'agreement', 'vqa', 'chunks')


def _run_config(args, d) -> RunConfig:
    return load_config(resolve_path(args.config, d)) if args.config else RunConfig()


def _run(args) -> Optional[str]:
    d = args.data_dir
    if args.command == 'train':
        config = _run_config(args, d).with_overrides(
            **{k: getattr(args, k) for k in _TRAIN_OVERRIDES})
        result = cmd_train(
            config, resolve_path(args.train, d), _optional(args.features, d),
            args.checkpoint, args.log, _optional(args.embeddings, d))
        return json.dumps({
            'checkpoint': args.checkpoint,
            'best_epoch': result.best_epoch,
            'seed': config.seed,
            'val_accuracy': result.log[result.best_epoch - 1]['val_accuracy']})
    if args.command == 'predict':
        batch_size = args.batch_size
        if batch_size is None and args.config:
            batch_size = _run_config(args, d).batch_size
        rows = cmd_predict(
            args.checkpoint, resolve_path(args.test, d),
            _optional(args.features, d), args.out, batch_size)
        return json.dumps({'predictions': args.out, 'count': len(rows)})
    if args.command == 'eval':
        config = load_metric_config(resolve_path(args.config, d)) if args.config else MetricConfig()
        config = config.with_overrides(**{k: getattr(args, k) for k in _METRIC_OVERRIDES})
        report = cmd_eval(
            resolve_path(args.predictions, d), resolve_path(args.references, d),
            config, _optional(args.taxonomy, d), _optional(args.word_map, d))
        if args.out:
            with open(args.out, 'w', encoding='utf-8') as f:
                json.dump(report.to_json(), f, indent=2)
        if args.format == 'json':
            return json.dumps(report.to_json(), indent=2)
        return report.to_text()
    if args.command == 'baseline':
        rows = cmd_baseline(
            args.kind, resolve_path(args.train, d), resolve_path(args.test, d),
            args.out, _optional(args.embeddings, d), _optional(args.features, d),
            _run_config(args, d).with_overrides(
                strip_articles=args.strip_articles, bow_reduction=args.bow_reduction))
        return json.dumps({'predictions': args.out, 'count': len(rows)})
    if args.command == 'report':
        return cmd_report(resolve_path(args.log, d), args.svg, args.format)
    if args.command == 'synth':
        spec_args = {
            'seed': args.seed, 'n_train': args.n_train,
            'n_test': args.n_test, 'noise': args.noise}
        if args.families:
            spec_args['families'] = tuple(args.families)
        return json.dumps(cmd_synth(ToyWorldSpec(**spec_args), args.out))
    raise AssertionError(args.command)


def main(argv=None) -> int:
    args = _parse_args(argv)
    logging.basicConfig(
        level=args.log_level.upper(),
        format='%(asctime)s %(levelname)s %(name)s: %(message)s',
        stream=sys.stderr)
    try:
        output = _run(args)
    except AynError as e:
        print(json.dumps(e.to_json(), default=str), file=sys.stderr)
        return 1
    except (ValueError, LookupError, OSError) as e:
        print(json.dumps({'error': type(e).__name__, 'message': str(e)}), file=sys.stderr)
        return 1
    if output is not None:
        print(output)
    return 0


if __name__ == '__main__':
    sys.exit(main())
