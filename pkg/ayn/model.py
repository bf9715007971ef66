"""
The encoder -> fusion -> decoder answering model and its checkpoints.

Classification: Psi(q) from a BOW / CNN / LSTM / GRU encoder, fused with
Phi(x), an optional tanh layer, then a softmax over answer classes.

Generation: one LSTM or GRU reads [Phi(x), w_t] for the question words
and keeps going, predicting answer words until the end token.
"""

__all__ = ['VqaModel', 'save_checkpoint', 'load_checkpoint', 'INIT_SCHEME', 'CHECKPOINT_FORMAT']

import io
import json
import logging
import zipfile
from typing import Optional, Sequence

import numpy as np

from .config import RunConfig
from .decoders import (
    AnswerVocabulary, GenerationConfig, GeneratedAnswer, SequenceDecoder,
    generate_answer_sequence, step_inputs, training_targets)
from .encoders import (
    EmbeddingTable, TextCnnParams, embed_batch, encode_bow, encode_cnn,
    init_cell, run_recurrent)
from .errors import ConfigError, FormatError, ShapeError
from .fusion import FusionParams, fuse, fused_dim
from .tensor import (
    Tensor, concat, cross_entropy, glorot_uniform, linear, no_grad, parameter,
    tanh)

logger = logging.getLogger(__name__)

INIT_SCHEME = 'glorot-uniform'
CHECKPOINT_FORMAT = 1
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


class VqaModel:
    """
    All parameters of one answering model, addressed by stable names.

    `answers` is a class vocabulary for `decoder='classify'` and a word
    vocabulary (ending in the end token) for `decoder='generate'`.
    """
    def __init__(
            self,
            config: RunConfig,
            table: EmbeddingTable,
            answers: AnswerVocabulary,
            visual_dim: int,
            encoder=None,
            fusion: Optional[FusionParams] = None,
            head: Optional[tuple] = None,
            out: Optional[tuple] = None):
        self.config = config
        self.table = table
        self.answers = answers
        self.visual_dim = visual_dim
        self.encoder = encoder
        self.fusion = fusion
        self.head = head
        self.out = out

    @property
    def generative(self) -> bool:
        return self.config.decoder == 'generate'

    @classmethod
    def init(
            cls,
            config: RunConfig,
            table: EmbeddingTable,
            answers: AnswerVocabulary,
            visual_dim: int,
            rng: np.random.Generator) -> 'VqaModel':
        """Fresh parameters drawn from `rng` in a fixed order."""
        if visual_dim < 1:
            raise ShapeError('visual_dim must be >= 1')
        d = table.dim
        if config.decoder == 'generate':
            if config.encoder not in ('lstm', 'gru'):
                raise ConfigError(
                    'the generation decoder shares a recurrent cell; '
                    f'encoder must be lstm or gru, got {config.encoder!r}')
            if not answers.generative:
                raise ConfigError('generation needs a word vocabulary with an end token')
            input_dim = d + (visual_dim if config.use_vision else 0)
            encoder = init_cell(config.encoder, rng, input_dim, config.hidden_size)
            out = (
                parameter(glorot_uniform(rng, (len(answers), config.hidden_size))),
                parameter(np.zeros(len(answers))))
            return cls(config, table, answers, visual_dim, encoder=encoder, out=out)

        if config.encoder == 'bow':
            encoder, q_dim = None, d
        elif config.encoder == 'cnn':
            encoder = TextCnnParams.init(
                rng, d, config.cnn_views, config.cnn_feature_maps,
                config.cnn_aggregation, config.cnn_activation)
            q_dim = encoder.output_dim
        else:
            encoder = init_cell(config.encoder, rng, d, config.hidden_size)
            q_dim = config.hidden_size
        fusion = None
        width = q_dim
        if config.use_vision:
            fusion = FusionParams.init(
                rng, config.fusion, q_dim, visual_dim, config.normalize_visual)
            width = fused_dim(config.fusion, q_dim, visual_dim)
        head = None
        if config.head_hidden:
            head = (
                parameter(glorot_uniform(rng, (config.head_hidden, width))),
                parameter(np.zeros(config.head_hidden)))
            width = config.head_hidden
        out = (
            parameter(glorot_uniform(rng, (len(answers), width))),
            parameter(np.zeros(len(answers))))
        return cls(config, table, answers, visual_dim, encoder, fusion, head, out)

    def tensors(self) -> dict[str, Tensor]:
        """Every parameter, frozen ones included, by checkpoint name."""
        out = {'embedding': self.table.matrix}
        if self.encoder is not None:
            for name, tensor in self.encoder.tensors().items():
                out[f'encoder.{name}'] = tensor
        if self.fusion is not None:
            for name, tensor in self.fusion.tensors().items():
                out[f'fusion.{name}'] = tensor
        if self.head is not None:
            out['head.W'], out['head.b'] = self.head
        out['out.W'], out['out.b'] = self.out
        return out

    def parameters(self) -> dict[str, Tensor]:
        return {
            name: tensor for name, tensor in self.tensors().items()
            if tensor.requires_grad}

    def load_arrays(self, arrays: dict):
        tensors = self.tensors()
        missing = sorted(set(tensors) - set(arrays))
        extra = sorted(set(arrays) - set(tensors))
        if missing or extra:
            raise FormatError(
                f'checkpoint parameters do not match the model: '
                f'missing {missing}, unexpected {extra}')
        for name, tensor in tensors.items():
            array = np.asarray(arrays[name], dtype=np.float64)
            if array.shape != tensor.shape:
                raise ShapeError(
                    f'checkpoint parameter {name} has shape {array.shape}, '
                    f'model expects {tensor.shape}', parameter=name)
            tensor.data = array.copy()

    def snapshot(self) -> dict:
        return {name: t.data.copy() for name, t in self.tensors().items()}

    # Classification

    def encode_questions(self, questions: Sequence[Sequence[str]]) -> Tensor:
        embedded = embed_batch(questions, self.table)
        kind = self.config.encoder
        if kind == 'bow':
            return encode_bow(embedded)
        if kind == 'cnn':
            return encode_cnn(embedded, self.encoder)
        return run_recurrent(embedded, kind, self.encoder).h

    def logits(self, questions: Sequence[Sequence[str]], visual) -> Tensor:
        """(B, classes) for equal-length questions and (B, visual_dim) features."""
        x = self.encode_questions(questions)
        if self.config.use_vision:
            visual = np.asarray(visual, dtype=np.float64)
            if visual.shape != (len(questions), self.visual_dim):
                raise ShapeError(
                    f'visual features {visual.shape} vs '
                    f'({len(questions)}, {self.visual_dim})')
            x = fuse(x, visual, self.fusion)
        if self.head is not None:
            x = tanh(linear(x, *self.head))
        return linear(x, *self.out)

    def classification_loss(self, questions, visual, targets, weights=None) -> Tensor:
        return cross_entropy(self.logits(questions, visual), targets, weights)

    def classify(self, questions, visual) -> np.ndarray:
        """Argmax class per question (lowest index on ties)."""
        with no_grad():
            logits = self.logits(questions, visual).data
        return np.argmax(logits, axis=-1)

    # Generation

    def decoder(self) -> SequenceDecoder:
        return SequenceDecoder(
            table=self.table,
            cell=self.config.encoder,
            cell_params=self.encoder,
            W_out=self.out[0],
            b_out=self.out[1],
            vocabulary=self.answers,
            use_vision=self.config.use_vision,
            normalize_visual=self.config.normalize_visual)

    def generation_loss(
            self,
            questions: Sequence[Sequence[str]],
            answers: Sequence[Sequence[str]],
            visual,
            weights=None) -> Tensor:
        """
        Cross-entropy of the answer words and the end token, for a batch whose
        questions share one length and whose answers share another.
        """
        sequences = [training_targets(q, a)[0] for q, a in zip(questions, answers)]
        if len({len(s) for s in sequences}) != 1 or len({len(q) for q in questions}) != 1:
            raise ValueError('generation batch needs equal question and answer lengths')
        q_len = len(questions[0])
        inputs = embed_batch([s[:-1] for s in sequences], self.table)
        inputs = step_inputs(
            inputs, visual if self.config.use_vision else None,
            self.config.use_vision, self.config.normalize_visual)
        states = run_recurrent(inputs, self.config.encoder, self.encoder, return_all=True)
        vocab = self.answers
        logits, targets = [], []
        # The state after reading token t predicts token t + 1.
        for t in range(q_len - 1, len(sequences[0]) - 1):
            logits.append(linear(states[t].h, *self.out))
            for seq in sequences:
                if seq[t + 1] not in vocab:
                    raise KeyError(f'answer word {seq[t + 1]!r} not in the answer vocabulary')
                targets.append(vocab.index[seq[t + 1]])
        steps = len(logits)
        if weights is None:
            weights = np.ones(len(questions))
        return cross_entropy(
            concat(logits, axis=0), np.array(targets),
            np.tile(np.asarray(weights, dtype=np.float64), steps))

    def generate(self, question: Sequence[str], visual=None) -> GeneratedAnswer:
        if self.config.use_vision and visual is None:
            raise ValueError('this model needs visual features')
        config = GenerationConfig(self.config.max_answer_length, self.config.dedup)
        return generate_answer_sequence(question, visual, self.decoder(), config)

    def answer(self, question: Sequence[str], visual=None) -> str:
        """Canonical answer string for one question."""
        if self.generative:
            return ', '.join(self.generate(question, visual).words)
        visual = None if visual is None else np.asarray(visual)[None, :]
        if visual is None and self.config.use_vision:
            raise ValueError('this model needs visual features')
        return self.answers[int(self.classify([list(question)], visual)[0])]


def _zip_member(archive: zipfile.ZipFile, name: str, payload: bytes):
    info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    archive.writestr(info, payload)


def save_checkpoint(model: VqaModel, path, extra: Optional[dict] = None):
    """
    A `.npz`-layout zip: one `<name>.npy` per parameter, `config.json` and
    `vocab.json`. Identical models produce identical bytes.
    """
    config = {
        'format': CHECKPOINT_FORMAT,
        'run': model.config.to_dict(),
        'seed': model.config.seed,
        'init': INIT_SCHEME,
        'visual_dim': model.visual_dim,
        'embedding_dim': model.table.dim,
        **(extra or {})}
    vocab = {
        'question_words': model.table.words,
        'answers': model.answers.words,
        'generative': model.answers.generative}
    with zipfile.ZipFile(path, 'w') as archive:
        for name, tensor in sorted(model.tensors().items()):
            buf = io.BytesIO()
            np.lib.format.write_array(
                buf, np.ascontiguousarray(tensor.data), version=(1, 0),
                allow_pickle=False)
            _zip_member(archive, f'{name}.npy', buf.getvalue())
        _zip_member(archive, 'config.json', json.dumps(config, sort_keys=True).encode())
        _zip_member(archive, 'vocab.json', json.dumps(vocab, sort_keys=True).encode())


def load_checkpoint(path) -> VqaModel:
    path = str(path)
    try:
        with zipfile.ZipFile(path) as archive:
            names = archive.namelist()
            for required in ('config.json', 'vocab.json'):
                if required not in names:
                    raise FormatError(f'checkpoint lacks {required}', path=path)
            config = json.loads(archive.read('config.json'))
            vocab = json.loads(archive.read('vocab.json'))
            arrays = {
                name[:-len('.npy')]: np.lib.format.read_array(
                    io.BytesIO(archive.read(name)), allow_pickle=False)
                for name in names if name.endswith('.npy')}
    except zipfile.BadZipFile as e:
        raise FormatError(f'not a checkpoint archive: {e}', path=path) from e
    if config.get('format') != CHECKPOINT_FORMAT:
        raise FormatError(f'unsupported checkpoint format {config.get("format")}', path=path)
    run = RunConfig.from_dict(config['run'])
    if 'embedding' not in arrays:
        raise FormatError('checkpoint lacks the embedding matrix', path=path)
    table = EmbeddingTable(vocab['question_words'], arrays['embedding'], run.embedding_mode)
    answers = AnswerVocabulary(vocab['answers'], generative=vocab['generative'])
    # Shapes only: every array is overwritten below.
    rng = np.random.Generator(np.random.PCG64(run.seed))
    model = VqaModel.init(run, table, answers, config['visual_dim'], rng)
    model.load_arrays(arrays)
    return model
