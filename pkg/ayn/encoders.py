"""
Question encoders: word embeddings followed by BOW, multi-view CNN, LSTM or
GRU, each mapping a token sequence to a fixed-size vector.

All encoders accept a single sequence (T, d) or an equal-length batch
(B, T, d); the time axis is always the second to last.
"""

__all__ = [
    'UNK_TOKEN', 'EMBEDDING_MODES', 'CELL_KINDS', 'CNN_AGGREGATIONS',
    'CNN_ACTIVATIONS', 'EmbeddingTable', 'load_embeddings', 'embed_tokens',
    'embed_batch', 'encode_bow', 'LstmParams', 'LstmState', 'GruParams',
    'GruState', 'TextCnnParams', 'lstm_step', 'gru_step', 'init_state',
    'init_cell', 'run_recurrent', 'encode_sequence', 'encode_cnn']

import logging
from dataclasses import dataclass, field, fields
from typing import Mapping, Optional, Sequence, Union

import numpy as np
import pyarrow as pa
import pyarrow.csv as pa_csv

from .errors import FormatError, ShapeError
from .tensor import (
    Tensor, concat, constant, glorot_uniform, linear, mul, pad_axis,
    parameter, sigmoid, sub, take_rows, tanh, tensor_sum)

logger = logging.getLogger(__name__)

UNK_TOKEN = '<unk>'
EMBEDDING_MODES = ('learned', 'pretrained-frozen', 'pretrained-finetuned')
CELL_KINDS = ('lstm', 'gru')
CNN_AGGREGATIONS = ('sum-pool', 'rnn')
CNN_ACTIVATIONS = ('tanh', 'linear')


class EmbeddingTable:
    """
    Word -> row lookup into the embedding matrix W_e.

    `words` must contain the reserved UNK token; tokens missing from the
    table map to its row.
    """
    def __init__(self, words: Sequence[str], matrix, mode: str = 'learned'):
        if mode not in EMBEDDING_MODES:
            raise ValueError(f'Unknown embedding mode {mode!r}')
        words = list(words)
        if UNK_TOKEN not in words:
            raise ValueError(f'Embedding vocabulary lacks {UNK_TOKEN!r}')
        matrix = np.asarray(
            matrix.data if isinstance(matrix, Tensor) else matrix,
            dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != len(words) or matrix.shape[1] < 1:
            raise ShapeError(
                f'Embedding matrix {matrix.shape} does not fit '
                f'{len(words)} words')
        self.words = words
        self.index = {word: i for i, word in enumerate(words)}
        self.unk_index = self.index[UNK_TOKEN]
        self.mode = mode
        self.matrix = parameter(matrix, name='embedding')
        if mode == 'pretrained-frozen':
            self.matrix.requires_grad = False

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def trainable(self) -> bool:
        return self.mode != 'pretrained-frozen'

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self.index

    def ids(self, tokens: Sequence[str]) -> np.ndarray:
        return np.array(
            [self.index.get(t, self.unk_index) for t in tokens], dtype=np.int64)

    @classmethod
    def learned(
            cls,
            words: Sequence[str],
            dim: int,
            rng: np.random.Generator) -> 'EmbeddingTable':
        words = [UNK_TOKEN] + sorted(set(words) - {UNK_TOKEN})
        return cls(words, glorot_uniform(rng, (len(words), dim)), 'learned')

    @classmethod
    def from_pretrained(
            cls,
            words: Sequence[str],
            pretrained: Mapping[str, np.ndarray],
            mode: str,
            rng: np.random.Generator) -> 'EmbeddingTable':
        """
        Training words plus every pretrained word.

        Training words absent from `pretrained` get random rows; UNK is zero.
        """
        if mode == 'learned':
            raise ValueError('from_pretrained needs a pretrained-* mode')
        dim = len(next(iter(pretrained.values())))
        extra = sorted(set(words) - set(pretrained) - {UNK_TOKEN})
        vocab = [UNK_TOKEN] + [w for w in pretrained if w != UNK_TOKEN] + extra
        matrix = np.zeros((len(vocab), dim))
        for i, word in enumerate(vocab[1:len(vocab) - len(extra)], start=1):
            matrix[i] = pretrained[word]
        if extra:
            matrix[len(vocab) - len(extra):] = glorot_uniform(rng, (len(extra), dim))
        logger.info(
            'Pretrained embeddings: %d words (dim %d), %d training words '
            'without a vector', len(pretrained), dim, len(extra))
        return cls(vocab, matrix, mode)


def load_embeddings(path) -> dict[str, np.ndarray]:
    """
    Read a word2vec-style text file: `word v1 v2 ... vd` per line.

    An optional leading `count dim` header line is skipped.
    """
    path = str(path)
    with open(path, encoding='utf-8') as f:
        first = f.readline().split()
    skip = 1 if len(first) == 2 and all(p.isdigit() for p in first) else 0
    try:
        table = pa_csv.read_csv(
            path,
            read_options=pa_csv.ReadOptions(
                autogenerate_column_names=True, skip_rows=skip),
            parse_options=pa_csv.ParseOptions(
                delimiter=' ', quote_char=False, double_quote=False),
            convert_options=pa_csv.ConvertOptions(
                column_types={'f0': pa.string()}))
    except pa.ArrowInvalid as e:
        raise FormatError(f'Bad embedding file: {e}', path=path) from e
    # Trailing separators produce an all-null column.
    columns = [
        name for name in table.column_names[1:]
        if table.column(name).null_count < table.num_rows]
    if not columns:
        raise FormatError('Embedding file has no vector columns', path=path)
    try:
        vectors = np.column_stack([
            table.column(name).to_numpy(zero_copy_only=False).astype(np.float64)
            for name in columns])
    except (ValueError, pa.ArrowInvalid) as e:
        raise FormatError(f'Non-numeric embedding value: {e}', path=path) from e
    if not np.all(np.isfinite(vectors)):
        raise FormatError('Missing or non-finite embedding value', path=path)
    words = table.column('f0').to_pylist()
    return {word: vectors[i] for i, word in enumerate(words)}


def embed_tokens(tokens: Sequence[str], table: EmbeddingTable) -> Tensor:
    """Rows W_e(q_t) for each token, (T, d); unknown tokens hit UNK."""
    if len(tokens) == 0:
        raise ValueError('Cannot embed an empty token list')
    return take_rows(table.matrix, table.ids(tokens))


def embed_batch(batch: Sequence[Sequence[str]], table: EmbeddingTable) -> Tensor:
    """(B, T, d) for equal-length token lists."""
    lengths = {len(tokens) for tokens in batch}
    if len(lengths) != 1 or 0 in lengths:
        raise ValueError('embed_batch needs non-empty, equal-length sequences')
    ids = np.stack([table.ids(tokens) for tokens in batch])
    return take_rows(table.matrix, ids)


def encode_bow(embedded: Tensor) -> Tensor:
    """Sum of word embeddings over time."""
    if embedded.ndim < 2 or embedded.shape[-2] < 1:
        raise ValueError('encode_bow needs at least one token')
    return tensor_sum(embedded, axis=-2)


def _tensors(params) -> dict[str, Tensor]:
    return {f.name: getattr(params, f.name) for f in fields(params)}


@dataclass
class LstmParams:
    W_vi: Tensor
    W_hi: Tensor
    b_i: Tensor
    W_vf: Tensor
    W_hf: Tensor
    b_f: Tensor
    W_vo: Tensor
    W_ho: Tensor
    b_o: Tensor
    W_vg: Tensor
    W_hg: Tensor
    b_g: Tensor

    @property
    def input_dim(self) -> int:
        return self.W_vi.shape[1]

    @property
    def hidden_size(self) -> int:
        return self.W_hi.shape[0]

    def tensors(self) -> dict[str, Tensor]:
        return _tensors(self)

    @classmethod
    def init(cls, rng: np.random.Generator, input_dim: int, hidden: int) -> 'LstmParams':
        values = {}
        for gate in 'ifog':
            values[f'W_v{gate}'] = parameter(glorot_uniform(rng, (hidden, input_dim)))
            values[f'W_h{gate}'] = parameter(glorot_uniform(rng, (hidden, hidden)))
            values[f'b_{gate}'] = parameter(np.zeros(hidden))
        return cls(**values)


@dataclass
class LstmState:
    h: Tensor
    c: Tensor


@dataclass
class GruParams:
    W_vr: Tensor
    W_hr: Tensor
    b_r: Tensor
    W_vu: Tensor
    W_hu: Tensor
    b_u: Tensor
    W_vc: Tensor
    W_hc: Tensor
    b_c: Tensor

    @property
    def input_dim(self) -> int:
        return self.W_vr.shape[1]

    @property
    def hidden_size(self) -> int:
        return self.W_hr.shape[0]

    def tensors(self) -> dict[str, Tensor]:
        return _tensors(self)

    @classmethod
    def init(cls, rng: np.random.Generator, input_dim: int, hidden: int) -> 'GruParams':
        values = {}
        for gate in 'ruc':
            values[f'W_v{gate}'] = parameter(glorot_uniform(rng, (hidden, input_dim)))
            values[f'W_h{gate}'] = parameter(glorot_uniform(rng, (hidden, hidden)))
            values[f'b_{gate}'] = parameter(np.zeros(hidden))
        return cls(**values)


@dataclass
class GruState:
    h: Tensor


CellParams = Union[LstmParams, GruParams]
CellState = Union[LstmState, GruState]


def _check_step_shapes(v_t: Tensor, h: Tensor, params: CellParams):
    if v_t.shape[-1] != params.input_dim or h.shape[-1] != params.hidden_size:
        raise ShapeError(
            f'Cell step: input {v_t.shape} / hidden {h.shape} vs '
            f'input_dim={params.input_dim}, hidden={params.hidden_size}')


def lstm_step(v_t: Tensor, state: LstmState, params: LstmParams) -> LstmState:
    v_t = constant(v_t)
    _check_step_shapes(v_t, state.h, params)
    p, h = params, state.h
    i = sigmoid(linear(v_t, p.W_vi) + linear(h, p.W_hi) + p.b_i)
    f = sigmoid(linear(v_t, p.W_vf) + linear(h, p.W_hf) + p.b_f)
    o = sigmoid(linear(v_t, p.W_vo) + linear(h, p.W_ho) + p.b_o)
    g = tanh(linear(v_t, p.W_vg) + linear(h, p.W_hg) + p.b_g)
    c = f * state.c + i * g
    return LstmState(h=o * tanh(c), c=c)


def gru_step(v_t: Tensor, state: GruState, params: GruParams) -> GruState:
    v_t = constant(v_t)
    _check_step_shapes(v_t, state.h, params)
    p, h = params, state.h
    r = sigmoid(linear(v_t, p.W_vr) + linear(h, p.W_hr) + p.b_r)
    u = sigmoid(linear(v_t, p.W_vu) + linear(h, p.W_hu) + p.b_u)
    c = linear(v_t, p.W_vc) + linear(r * h, p.W_hc) + p.b_c
    return GruState(h=u * h + mul(sub(1.0, u), tanh(c)))


_STEPS = {'lstm': lstm_step, 'gru': gru_step}


def init_cell(cell: str, rng: np.random.Generator, input_dim: int, hidden: int) -> CellParams:
    if cell == 'lstm':
        return LstmParams.init(rng, input_dim, hidden)
    if cell == 'gru':
        return GruParams.init(rng, input_dim, hidden)
    raise ValueError(f'Unknown recurrent cell {cell!r}')


def init_state(cell: str, hidden: int, batch_shape: tuple = ()) -> CellState:
    zeros = Tensor(np.zeros(batch_shape + (hidden,)))
    if cell == 'lstm':
        return LstmState(h=zeros, c=zeros)
    if cell == 'gru':
        return GruState(h=zeros)
    raise ValueError(f'Unknown recurrent cell {cell!r}')


def run_recurrent(
        inputs: Tensor,
        cell: str,
        params: CellParams,
        state: Optional[CellState] = None,
        return_all: bool = False):
    """
    Unroll `cell` over the time axis of `inputs` (..., T, d).

    Starts from zeros unless `state` is given. Returns the final state, or
    the list of states after every step with `return_all`.
    """
    step = _STEPS.get(cell)
    if step is None:
        raise ValueError(f'Unknown recurrent cell {cell!r}')
    inputs = constant(inputs)
    if inputs.ndim < 2 or inputs.shape[-2] < 1:
        raise ValueError('run_recurrent needs at least one time step')
    if state is None:
        state = init_state(cell, params.hidden_size, inputs.shape[:-2])
    states = []
    for t in range(inputs.shape[-2]):
        state = step(inputs[..., t, :], state, params)
        states.append(state)
    return states if return_all else state


def encode_sequence(
        tokens: Sequence[str],
        table: EmbeddingTable,
        cell: str,
        params: CellParams) -> Tensor:
    """Psi_RNN(q) := h_T after unrolling from a zero state."""
    return run_recurrent(embed_tokens(tokens, table), cell, params).h


@dataclass
class TextCnnParams:
    """
    One convolution per view; view k has width `widths[k]` and maps a window
    of `width * d` concatenated embeddings to F feature maps.
    """
    widths: list
    kernels: list
    biases: list
    aggregation: str = 'sum-pool'
    activation: str = 'tanh'
    rnns: list = field(default_factory=list)

    def __post_init__(self):
        if not self.widths:
            raise ValueError('TextCnnParams needs at least one view')
        if self.aggregation not in CNN_AGGREGATIONS:
            raise ValueError(f'Unknown CNN aggregation {self.aggregation!r}')
        if self.activation not in CNN_ACTIVATIONS:
            raise ValueError(f'Unknown CNN activation {self.activation!r}')
        if self.aggregation == 'rnn' and len(self.rnns) != len(self.widths):
            raise ValueError('rnn aggregation needs one LSTM per view')

    @property
    def feature_maps(self) -> int:
        return self.kernels[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.feature_maps * len(self.widths)

    def tensors(self) -> dict[str, Tensor]:
        out = {}
        for width, kernel, bias in zip(self.widths, self.kernels, self.biases):
            out[f'view{width}.W'] = kernel
            out[f'view{width}.b'] = bias
        for width, rnn in zip(self.widths, self.rnns):
            for name, tensor in rnn.tensors().items():
                out[f'view{width}.rnn.{name}'] = tensor
        return out

    @classmethod
    def init(
            cls,
            rng: np.random.Generator,
            embedding_dim: int,
            views: int,
            feature_maps: int,
            aggregation: str = 'sum-pool',
            activation: str = 'tanh') -> 'TextCnnParams':
        if views < 1 or feature_maps < 1:
            raise ValueError('views and feature_maps must be >= 1')
        widths = list(range(1, views + 1))
        kernels = [
            parameter(glorot_uniform(rng, (feature_maps, w * embedding_dim)))
            for w in widths]
        biases = [parameter(np.zeros(feature_maps)) for _ in widths]
        rnns = []
        if aggregation == 'rnn':
            rnns = [LstmParams.init(rng, feature_maps, feature_maps) for _ in widths]
        return cls(widths, kernels, biases, aggregation, activation, rnns)


def encode_cnn(embedded: Tensor, params: TextCnnParams) -> Tensor:
    """
    Per view: valid convolution over time, activation, then sum pooling
    (or an LSTM over the feature-map sequence); views are concatenated.

    Sequences shorter than a kernel are zero-padded to its width.
    """
    embedded = constant(embedded)
    if embedded.ndim < 2 or embedded.shape[-2] < 1:
        raise ValueError('encode_cnn needs at least one token')
    outputs = []
    for i, width in enumerate(params.widths):
        x = pad_axis(embedded, width, axis=-2)
        length = x.shape[-2] - width + 1
        windows = concat(
            [x[..., j:j + length, :] for j in range(width)], axis=-1)
        maps = linear(windows, params.kernels[i], params.biases[i])
        if params.activation == 'tanh':
            maps = tanh(maps)
        if params.aggregation == 'sum-pool':
            outputs.append(tensor_sum(maps, axis=-2))
        else:
            outputs.append(run_recurrent(maps, 'lstm', params.rnns[i]).h)
    if len(outputs) == 1:
        return outputs[0]
    return concat(outputs, axis=-1)
