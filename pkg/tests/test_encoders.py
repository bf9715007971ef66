import sys
sys.dont_write_bytecode = True

import tempfile
import unittest
from pathlib import Path

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from ayn.decoders import (
    END_TOKEN, AnswerVocabulary, GenerationConfig, SequenceDecoder,
    classify_answer, generate_answer_sequence, training_targets)
from ayn.encoders import (
    UNK_TOKEN, EmbeddingTable, GruParams, GruState, LstmParams, LstmState,
    TextCnnParams, embed_batch, embed_tokens, encode_bow, encode_cnn,
    encode_sequence, gru_step, load_embeddings, lstm_step, run_recurrent)
from ayn.errors import FormatError, ShapeError
from ayn.fusion import FusionParams, fuse, fused_dim
from ayn.gradcheck import finite_difference_check
from ayn.tensor import Tensor, cross_entropy, linear, parameter

GRAD_TOLERANCE = 1e-4
VOCAB, EMBED, HIDDEN, BATCH, VISUAL, CLASSES = 20, 8, 16, 4, 6, 5


def _zeroed(params):
    return type(params)(**{
        name: parameter(np.zeros(t.shape)) for name, t in params.tensors().items()})


def _identity_table(words):
    words = [UNK_TOKEN] + list(words)
    return EmbeddingTable(words, np.eye(len(words)))


class TestEmbeddings(unittest.TestCase):
    def test_identity_rows(self):
        table = _identity_table(['w0', 'w1', 'w2'])
        rows = embed_tokens(['w0', 'w2'], table).data
        np.testing.assert_array_equal(rows, np.eye(4)[[1, 3]])

    def test_unknown_word_hits_unk(self):
        table = _identity_table(['w0'])
        np.testing.assert_array_equal(
            embed_tokens(['nope'], table).data, np.eye(2)[[table.unk_index]])

    def test_empty_tokens(self):
        with self.assertRaises(ValueError):
            embed_tokens([], _identity_table(['a']))

    def test_learned_vocabulary_order(self):
        table = EmbeddingTable.learned(['b', 'a', 'b'], 3, np.random.default_rng(0))
        self.assertEqual(table.words, [UNK_TOKEN, 'a', 'b'])
        self.assertEqual(table.matrix.shape, (3, 3))
        self.assertTrue(table.matrix.requires_grad)

    def test_pretrained_extends_vocabulary(self):
        pretrained = {'sofa': np.array([1.0, 2.0]), 'bed': np.array([3.0, 4.0])}
        table = EmbeddingTable.from_pretrained(
            ['chair', 'bed'], pretrained, 'pretrained-frozen', np.random.default_rng(0))
        self.assertIn('sofa', table)
        self.assertIn('chair', table)
        np.testing.assert_array_equal(embed_tokens(['sofa'], table).data, [[1.0, 2.0]])
        np.testing.assert_array_equal(
            embed_tokens([UNK_TOKEN], table).data, [[0.0, 0.0]])
        self.assertFalse(table.matrix.requires_grad)
        self.assertFalse(table.trainable)

    def test_unk_required(self):
        with self.assertRaises(ValueError):
            EmbeddingTable(['a'], np.zeros((1, 2)))

    def test_matrix_shape(self):
        with self.assertRaises(ShapeError):
            EmbeddingTable([UNK_TOKEN, 'a'], np.zeros((3, 2)))

    def test_batch_needs_equal_lengths(self):
        table = _identity_table(['a', 'b'])
        self.assertEqual(embed_batch([['a', 'b'], ['b', 'a']], table).shape, (2, 2, 3))
        with self.assertRaises(ValueError):
            embed_batch([['a'], ['a', 'b']], table)

    def test_load_embeddings(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'vectors.txt'
            path.write_text('2 3\nchair 0.5 1 -2\nbed 1 2 3\n', encoding='utf-8')
            vectors = load_embeddings(path)
        self.assertEqual(sorted(vectors), ['bed', 'chair'])
        np.testing.assert_array_equal(vectors['chair'], [0.5, 1.0, -2.0])

    def test_load_embeddings_rejects_text_values(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'vectors.txt'
            path.write_text('chair 0.5 x\nbed 1 2\n', encoding='utf-8')
            with self.assertRaises(FormatError):
                load_embeddings(path)


class TestBagOfWords(unittest.TestCase):
    def test_histogram(self):
        table = _identity_table(['red', 'chair'])
        out = encode_bow(embed_tokens(['red', 'chair', 'red'], table)).data
        np.testing.assert_array_equal(out, [0, 2, 1])

    def test_single_token(self):
        table = EmbeddingTable.learned(['sofa'], 4, np.random.default_rng(1))
        emb = embed_tokens(['sofa'], table)
        np.testing.assert_array_equal(encode_bow(emb).data, emb.data[0])

    def test_word_order_is_lost(self):
        words = 'red chair left of sofa'.split()
        table = EmbeddingTable.learned(words, 5, np.random.default_rng(2))
        a = encode_bow(embed_tokens('red chair left of sofa'.split(), table)).data
        b = encode_bow(embed_tokens('red sofa left of chair'.split(), table)).data
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.permutations(['red', 'chair', 'left', 'of', 'sofa', 'red']))
    def test_permutation_invariant(self, tokens):
        words = sorted(set(tokens))
        table = EmbeddingTable.learned(words, 5, np.random.default_rng(2))
        expected = encode_bow(embed_tokens(sorted(tokens), table)).data
        np.testing.assert_allclose(
            encode_bow(embed_tokens(list(tokens), table)).data, expected, rtol=0, atol=1e-12)


class TestTextCnn(unittest.TestCase):
    def test_width_one_identity_equals_bow(self):
        rng = np.random.default_rng(4)
        emb = Tensor(rng.normal(size=(5, 3)))
        params = TextCnnParams(
            [1], [parameter(np.eye(3))], [parameter(np.zeros(3))], 'sum-pool', 'linear')
        np.testing.assert_array_equal(encode_cnn(emb, params).data, encode_bow(emb).data)

    def test_two_windows(self):
        emb = Tensor([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        params = TextCnnParams(
            [2], [parameter(np.ones((2, 4)))], [parameter(np.zeros(2))])
        expected = np.tanh(2.0) + np.tanh(3.0)
        np.testing.assert_allclose(encode_cnn(emb, params).data, [expected] * 2)
        self.assertAlmostEqual(expected, 1.95908, places=5)

    def test_short_sequence_is_padded(self):
        params = TextCnnParams.init(np.random.default_rng(0), 4, 3, 5)
        out = encode_cnn(Tensor(np.ones((1, 4))), params)
        self.assertEqual(out.shape, (15,))
        self.assertTrue(np.all(np.isfinite(out.data)))

    def test_rnn_aggregation_shape(self):
        params = TextCnnParams.init(np.random.default_rng(0), 4, 2, 3, aggregation='rnn')
        out = encode_cnn(Tensor(np.ones((2, 5, 4))), params)
        self.assertEqual(out.shape, (2, 6))

    def test_bad_options(self):
        with self.assertRaises(ValueError):
            TextCnnParams.init(np.random.default_rng(0), 4, 1, 3, aggregation='max')
        with self.assertRaises(ValueError):
            TextCnnParams.init(np.random.default_rng(0), 4, 0, 3)


class TestRecurrentCells(unittest.TestCase):
    def setUp(self):
        self.lstm = _zeroed(LstmParams.init(np.random.default_rng(0), 1, 1))
        self.gru = _zeroed(GruParams.init(np.random.default_rng(0), 1, 1))

    def _lstm(self, c_prev):
        state = LstmState(h=Tensor([0.0]), c=Tensor([c_prev]))
        return lstm_step(Tensor([0.0]), state, self.lstm)

    def test_lstm_zero_parameters(self):
        out = self._lstm(0.0)
        np.testing.assert_array_equal(out.c.data, [0.0])
        np.testing.assert_array_equal(out.h.data, [0.0])

    def test_lstm_cell_memory(self):
        out = self._lstm(1.0)
        np.testing.assert_allclose(out.c.data, [0.5])
        np.testing.assert_allclose(out.h.data, [0.23106], atol=1e-5)

    def test_lstm_saturated_forget_gate(self):
        self.lstm.b_f.data = np.array([100.0])
        self.lstm.b_g.data = np.array([1.0])
        out = self._lstm(1.0)
        np.testing.assert_allclose(out.c.data, [1.0 + 0.5 * np.tanh(1.0)])

    def test_gru_zero_parameters(self):
        out = gru_step(Tensor([0.0]), GruState(h=Tensor([1.0])), self.gru)
        np.testing.assert_allclose(out.h.data, [0.5])

    def test_gru_saturated_update_gate(self):
        self.gru.b_u.data = np.array([100.0])
        out = gru_step(Tensor([0.3]), GruState(h=Tensor([0.7])), self.gru)
        np.testing.assert_allclose(out.h.data, [0.7])
        self.gru.b_u.data = np.array([-100.0])
        out = gru_step(Tensor([0.3]), GruState(h=Tensor([0.7])), self.gru)
        np.testing.assert_allclose(out.h.data, [0.0], atol=1e-12)

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            lstm_step(Tensor([0.0, 1.0]), LstmState(Tensor([0.0]), Tensor([0.0])), self.lstm)

    def test_zero_parameters_encode_to_zero(self):
        table = EmbeddingTable.learned(['a', 'b'], 1, np.random.default_rng(0))
        out = encode_sequence(['a', 'b', 'a'], table, 'lstm', self.lstm)
        np.testing.assert_array_equal(out.data, [0.0])

    def test_unroll_matches_manual_steps(self):
        rng = np.random.default_rng(5)
        params = LstmParams.init(rng, 3, 4)
        table = EmbeddingTable.learned(['x', 'y', 'z'], 3, rng)
        tokens = ['z', 'x', 'y']
        emb = embed_tokens(tokens, table)
        state = LstmState(h=Tensor(np.zeros(4)), c=Tensor(np.zeros(4)))
        for t in range(3):
            state = lstm_step(emb[t], state, params)
        np.testing.assert_allclose(
            encode_sequence(tokens, table, 'lstm', params).data, state.h.data, rtol=0, atol=1e-15)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(6)
        params = GruParams.init(rng, 3, 4)
        seqs = rng.normal(size=(2, 5, 3))
        batched = run_recurrent(Tensor(seqs), 'gru', params).h.data
        for i in range(2):
            single = run_recurrent(Tensor(seqs[i]), 'gru', params).h.data
            np.testing.assert_allclose(batched[i], single, atol=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(min_value=0, max_value=2 ** 32 - 1))
    def test_order_matters(self, seed):
        rng = np.random.default_rng(seed)
        words = ['a', 'b', 'c']
        table = EmbeddingTable.learned(words, 4, rng)
        for cell, cls in (('lstm', LstmParams), ('gru', GruParams)):
            params = cls.init(rng, 4, 5)
            forward = encode_sequence(['a', 'b', 'c'], table, cell, params).data
            swapped = encode_sequence(['b', 'a', 'c'], table, cell, params).data
            self.assertFalse(np.allclose(forward, swapped, rtol=0, atol=1e-12))


class TestFusion(unittest.TestCase):
    def _params(self, mode, normalize=False):
        return FusionParams(mode, parameter(np.eye(2)), normalize)

    def test_sum(self):
        out = fuse(Tensor([1.0, 2.0]), [3.0, 4.0], self._params('sum'))
        np.testing.assert_allclose(out.data, [4.0, 6.0])

    def test_multiply(self):
        out = fuse(Tensor([1.0, 2.0]), [3.0, 4.0], self._params('multiply'))
        np.testing.assert_allclose(out.data, [3.0, 8.0])

    def test_normalized_sum(self):
        out = fuse(Tensor([0.0, 0.0]), [3.0, 4.0], self._params('sum', True))
        np.testing.assert_allclose(out.data, [0.6, 0.8])

    def test_concat(self):
        out = fuse(Tensor([1.0]), [3.0, 4.0], FusionParams('concat', None, False))
        np.testing.assert_allclose(out.data, [1.0, 3.0, 4.0])
        self.assertEqual(fused_dim('concat', 1, 2), 3)
        self.assertEqual(fused_dim('sum', 1, 2), 1)

    def test_zero_visual(self):
        q = Tensor([1.0, -2.0])
        np.testing.assert_array_equal(
            fuse(q, [0.0, 0.0], self._params('multiply', True)).data, [0.0, 0.0])
        np.testing.assert_array_equal(
            fuse(q, [0.0, 0.0], self._params('sum', True)).data, [1.0, -2.0])

    @settings(max_examples=50, deadline=None)
    @given(st.floats(min_value=1e-3, max_value=1e3))
    def test_scale_invariance_when_normalized(self, scale):
        rng = np.random.default_rng(7)
        params = FusionParams.init(rng, 'multiply', 3, 4, normalize_visual=True)
        q, v = Tensor(rng.normal(size=3)), rng.normal(size=4)
        np.testing.assert_allclose(
            fuse(q, v * scale, params).data, fuse(q, v, params).data, rtol=0, atol=1e-12)

    def test_shape_errors(self):
        with self.assertRaises(ShapeError):
            fuse(Tensor([1.0, 2.0, 3.0]), [3.0, 4.0], self._params('sum'))
        with self.assertRaises(ValueError):
            FusionParams('sum', None)


class TestClassify(unittest.TestCase):
    def test_softmax_argmax(self):
        index, probs = classify_answer(Tensor([1.0, 3.0, 2.0]), parameter(np.eye(3)))
        self.assertEqual(index, 1)
        np.testing.assert_allclose(probs, [0.09003, 0.66524, 0.24473], atol=1e-5)
        self.assertAlmostEqual(probs.sum(), 1.0, places=9)

    def test_ties_pick_lowest_index(self):
        index, _ = classify_answer(Tensor([0.0, 0.0]), parameter(np.zeros((3, 2))))
        self.assertEqual(index, 0)

    def test_single_class(self):
        index, probs = classify_answer(Tensor([4.0]), parameter([[2.0]]))
        self.assertEqual(index, 0)
        np.testing.assert_allclose(probs, [1.0])


class TestGeneration(unittest.TestCase):
    def _decoder(self, bias, use_vision=False):
        rng = np.random.default_rng(0)
        table = EmbeddingTable.learned(['what', 'is', 'on', 'bed', 'chair'], 4, rng)
        vocab = AnswerVocabulary(['bed', 'chair'], generative=True)
        input_dim = 4 + (2 if use_vision else 0)
        return SequenceDecoder(
            table, 'lstm', _zeroed(LstmParams.init(rng, input_dim, 3)),
            parameter(np.zeros((3, 3))), parameter(bias), vocab, use_vision)

    def test_vocabulary_end_token(self):
        vocab = AnswerVocabulary(['bed', 'chair'], generative=True)
        self.assertEqual(vocab[vocab.end_index], END_TOKEN)
        self.assertEqual(vocab.words, ['bed', 'chair'])
        with self.assertRaises(ValueError):
            AnswerVocabulary(['bed', END_TOKEN], generative=True)

    def test_immediate_end(self):
        out = generate_answer_sequence(['what', 'is', 'on'], None, self._decoder([0.0, 0.0, 1.0]))
        self.assertEqual(out.words, [])
        self.assertFalse(out.truncated)

    def test_word_then_end(self):
        out = generate_answer_sequence(
            ['what', 'is', 'on'], [3.0, 4.0], self._decoder([2.0, 0.0, 1.0], use_vision=True))
        self.assertEqual(out.words, ['bed'])
        self.assertFalse(out.truncated)

    def test_truncation_without_dedup(self):
        out = generate_answer_sequence(
            ['what'], None, self._decoder([2.0, 0.0, 1.0]),
            GenerationConfig(max_length=4, dedup=False))
        self.assertEqual(out.words, ['bed'] * 4)
        self.assertTrue(out.truncated)

    def test_dedup_words_distinct(self):
        out = generate_answer_sequence(
            ['what'], None, self._decoder([2.0, 1.5, 1.0]), GenerationConfig(max_length=10))
        self.assertEqual(out.words, ['bed', 'chair'])
        self.assertNotIn(END_TOKEN, out.words)

    def test_training_targets(self):
        seq, mask = training_targets(['a', 'b', 'c', 'd', 'e'], ['x', 'y'])
        self.assertEqual(seq, ['a', 'b', 'c', 'd', 'e', 'x', 'y', END_TOKEN])
        self.assertEqual(mask, [0, 0, 0, 0, 0, 1, 1, 1])
        self.assertEqual(training_targets(['q'], ['a'])[1], [0, 1, 1])
        with self.assertRaises(ValueError):
            training_targets(['q'], [])


class TestGradientFidelity(unittest.TestCase):
    """Backprop against central differences for every model composite."""

    def setUp(self):
        self.rng = np.random.default_rng(11)
        words = [f'w{i}' for i in range(VOCAB - 1)]
        self.table = EmbeddingTable.learned(words, EMBED, self.rng)
        self.batch = [list(self.rng.choice(words, size=3)) for _ in range(BATCH)]
        self.visual = self.rng.normal(size=(BATCH, VISUAL))
        self.targets = self.rng.integers(CLASSES, size=BATCH)

    def _head(self, dim):
        return (
            parameter(self.rng.normal(scale=0.5, size=(CLASSES, dim))),
            parameter(self.rng.normal(scale=0.1, size=CLASSES)))

    def _check(self, encode, dim, params):
        W, b = self._head(dim)

        def f():
            return cross_entropy(
                linear(encode(embed_batch(self.batch, self.table)), W, b), self.targets)

        error = finite_difference_check(f, [self.table.matrix, W, b] + list(params))
        self.assertLess(error, GRAD_TOLERANCE)

    def test_bow(self):
        self._check(encode_bow, EMBED, [])

    def test_cnn_views(self):
        for views in (1, 2, 3):
            with self.subTest(views=views):
                params = TextCnnParams.init(self.rng, EMBED, views, 4)
                self._check(
                    lambda e: encode_cnn(e, params), params.output_dim,
                    params.tensors().values())

    def test_cnn_rnn_aggregation(self):
        params = TextCnnParams.init(self.rng, EMBED, 2, 3, aggregation='rnn')
        self._check(
            lambda e: encode_cnn(e, params), params.output_dim, params.tensors().values())

    def test_recurrent_cells(self):
        for cell, cls in (('lstm', LstmParams), ('gru', GruParams)):
            with self.subTest(cell=cell):
                params = cls.init(self.rng, EMBED, HIDDEN)
                self._check(
                    lambda e: run_recurrent(e, cell, params).h, HIDDEN,
                    params.tensors().values())

    def test_fusion_modes(self):
        for mode in ('concat', 'multiply', 'sum'):
            with self.subTest(mode=mode):
                fusion = FusionParams.init(self.rng, mode, EMBED, VISUAL, normalize_visual=True)
                self._check(
                    lambda e: fuse(encode_bow(e), self.visual, fusion),
                    fused_dim(mode, EMBED, VISUAL), fusion.tensors().values())


if __name__ == '__main__':
    unittest.main()
