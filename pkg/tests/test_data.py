import sys
sys.dont_write_bytecode = True

import tempfile
import unittest
from pathlib import Path

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from ayn.data import (
    QAInstance, answer_key, answer_words, build_answer_classes, build_answer_words,
    load_daquar_txt, load_qa, load_qa_jsonl, normalize_answer, preprocess_question,
    select_training_answer, split_validation, write_qa_jsonl)
from ayn.decoders import END_TOKEN
from ayn.errors import ConfigError, FormatError, ShapeError
from ayn.features import (
    VisualFeatureStore, guess_format, load_features, write_features)
from ayn.synthetic import BIAS_ANSWERS, ToyWorldSpec, generate, write_world

try:
    # When running a single test.
    from .fixtures import make_instance, write_jsonl, write_lines
except ImportError:
    # When discovered by unittest.
    from fixtures import make_instance, write_jsonl, write_lines


class TestNormalization(unittest.TestCase):
    def test_preprocess(self):
        self.assertEqual(
            preprocess_question('How many chairs are there?'),
            ['how', 'many', 'chairs', 'are', 'there'])
        self.assertEqual(
            preprocess_question('What is left of sink?'), ['what', 'is', 'left', 'of', 'sink'])
        with self.assertRaises(ValueError):
            preprocess_question('  ?')

    @given(st.text(alphabet=st.characters(min_codepoint=32, max_codepoint=126), min_size=1))
    def test_preprocess_tokens_are_clean(self, raw):
        try:
            tokens = preprocess_question(raw)
        except ValueError:
            return
        for token in tokens:
            self.assertNotIn('?', token)
            self.assertEqual(token, token.lower())
            self.assertTrue(token)

    def test_answers(self):
        self.assertEqual(
            normalize_answer('Bed Sheets, pillow.'), frozenset({'bed sheets', 'pillow'}))
        self.assertEqual(answer_key({'pillow', 'bed sheets'}), 'bed sheets, pillow')
        self.assertEqual(answer_words('pillow, bed sheets'), ['bed', 'sheets', 'pillow'])
        self.assertEqual(normalize_answer(' , '), frozenset())


class TestDaquar(unittest.TestCase):
    def test_parse(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_lines(Path(tmp) / 'qa.txt', [
                'what is on the bed in image42 ?', 'bed sheets, pillow',
                '', 'how many chairs are there in the image7?', '2'])
            instances = load_daquar_txt(path)
        self.assertEqual(len(instances), 2)
        first = instances[0]
        self.assertEqual(first.image, 'image42')
        self.assertEqual(first.tokens, ['what', 'is', 'on', 'the', 'bed'])
        self.assertEqual(first.answers, [frozenset({'bed sheets', 'pillow'})])
        self.assertEqual(instances[1].image, 'image7')
        self.assertEqual(instances[1].tokens, ['how', 'many', 'chairs', 'are', 'there'])

    def test_odd_lines(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_lines(Path(tmp) / 'qa.txt', ['what is in image1 ?', 'cup', 'what'])
            with self.assertRaises(FormatError):
                load_daquar_txt(path)

    def test_missing_image_token(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_lines(Path(tmp) / 'qa.txt', ['what is on the bed ?', 'pillow'])
            with self.assertRaises(FormatError) as cm:
                load_daquar_txt(path)
        self.assertEqual(cm.exception.line, 1)

    def test_round_trip_through_jsonl(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_lines(Path(tmp) / 'qa.txt', [
                'what is on the bed in image42 ?', 'bed sheets, pillow',
                'what color is the wall in the image3 ?', 'white'])
            instances = load_daquar_txt(path)
            write_qa_jsonl(instances, Path(tmp) / 'qa.jsonl')
            self.assertEqual(load_qa(Path(tmp) / 'qa.jsonl'), instances)


class TestJsonl(unittest.TestCase):
    def test_well_formed(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_jsonl(Path(tmp) / 'qa.jsonl', [{
                'id': 7, 'image': 'img', 'question': 'What is it?',
                'answers': ['Yes', 'no'], 'confident': [True, False]}])
            (inst,) = load_qa_jsonl(path)
        self.assertEqual(inst.id, '7')
        self.assertEqual(inst.answers, [frozenset({'yes'}), frozenset({'no'})])
        self.assertEqual(inst.confident, [True, False])

    def test_errors_carry_line_numbers(self):
        good = {'id': 1, 'image': 'i', 'question': 'q', 'answers': ['a']}
        cases = [
            {'id': 2, 'image': 'i', 'question': 'q'},
            {'id': 2, 'image': 'i', 'question': 'q', 'answers': []},
            {'id': 2, 'image': 'i', 'question': 'q', 'answers': ['a'], 'confident': [1, 0]},
        ]
        with tempfile.TemporaryDirectory() as tmp:
            for case in cases:
                with self.subTest(case=case):
                    path = write_jsonl(Path(tmp) / 'qa.jsonl', [good, case])
                    with self.assertRaises(FormatError) as cm:
                        load_qa_jsonl(path)
                    self.assertEqual(cm.exception.line, 2)
            bad = Path(tmp) / 'bad.jsonl'
            bad.write_text('{"id": 1,\n', encoding='utf-8')
            with self.assertRaises(FormatError):
                load_qa_jsonl(bad)

    def test_empty_question_rejected(self):
        with self.assertRaises(ValueError):
            QAInstance('1', 'img', '', [], [frozenset({'a'})])


class TestAnswerClasses(unittest.TestCase):
    def test_top_k(self):
        answers = ['a'] * 3 + ['b'] * 2 + ['c']
        self.assertEqual(build_answer_classes(answers, 2).entries, ['a', 'b'])
        self.assertEqual(build_answer_classes(answers, 10).entries, ['a', 'b', 'c'])
        self.assertEqual(build_answer_classes(['b', 'a'], 1).entries, ['a'])
        with self.assertRaises(ValueError):
            build_answer_classes(answers, 0)

    def test_order_independent(self):
        answers = ['x', 'y', 'y', 'z', 'x', 'w']
        self.assertEqual(
            build_answer_classes(answers, 3).entries,
            build_answer_classes(list(reversed(answers)), 3).entries)

    def test_instances_use_their_modal_answer(self):
        train = [make_instance(1, 'q', 'no', 'yes', 'yes'), make_instance(2, 'q', 'no')]
        self.assertEqual(build_answer_classes(train, 5).entries, ['no', 'yes'])

    def test_word_vocabulary(self):
        vocab = build_answer_words([make_instance(1, 'q', 'bed sheets, pillow')])
        self.assertEqual(vocab.entries, ['bed', 'pillow', 'sheets', END_TOKEN])


class TestTrainingAnswer(unittest.TestCase):
    def setUp(self):
        self.inst = make_instance(1, 'is it on', *(['yes'] * 6 + ['no'] * 4))

    def test_most_frequent(self):
        (target,) = select_training_answer(self.inst, 'most-frequent', np.random.default_rng(0))
        self.assertEqual(target.answer, frozenset({'yes'}))
        self.assertEqual(target.weight, 1.0)

    def test_all(self):
        targets = select_training_answer(self.inst, 'all', np.random.default_rng(0))
        self.assertEqual(len(targets), 10)
        self.assertAlmostEqual(sum(t.weight for t in targets), 1.0)

    def test_random_is_seeded(self):
        picks = [
            [select_training_answer(self.inst, 'random', np.random.default_rng(s))[0].answer
             for s in range(20)]
            for _ in range(2)]
        self.assertEqual(picks[0], picks[1])

    def test_confident_random(self):
        inst = make_instance(1, 'q', 'a', 'b', 'c')
        inst.confident = [False, True, False]
        rng = np.random.default_rng(3)
        for _ in range(10):
            (target,) = select_training_answer(inst, 'confident-random', rng)
            self.assertEqual(target.answer, frozenset({'b'}))

    def test_unknown_strategy(self):
        with self.assertRaises(ValueError):
            select_training_answer(self.inst, 'best', np.random.default_rng(0))


class TestSplit(unittest.TestCase):
    def test_tail_split(self):
        train, val = split_validation(list(range(100)), 0.1)
        self.assertEqual(train, list(range(90)))
        self.assertEqual(val, list(range(90, 100)))

    def test_ceiling(self):
        train, val = split_validation(['a', 'b', 'c'], 0.5)
        self.assertEqual((train, val), (['a'], ['b', 'c']))

    def test_bad_fraction(self):
        for fraction in (0.0, 1.0, -0.2):
            with self.assertRaises(ValueError):
                split_validation([1, 2], fraction)


class TestFeatures(unittest.TestCase):
    def test_tsv(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_lines(Path(tmp) / 'f.tsv', ['img1\t1,2,3', 'img2\t0.5,0,-1'])
            store = load_features(path)
        self.assertEqual(store.dim, 3)
        self.assertEqual(len(store), 2)
        np.testing.assert_array_equal(store['img2'], [0.5, 0.0, -1.0])
        self.assertNotIn('img3', store)

    def test_mixed_dimensions(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_lines(Path(tmp) / 'f.tsv', ['img1\t1,2,3', 'img2\t1,2'])
            with self.assertRaises(FormatError) as cm:
                load_features(path)
        self.assertEqual(cm.exception.line, 2)

    def test_binary_matches_float32_tsv(self):
        rng = np.random.default_rng(0)
        store = VisualFeatureStore({f'img{i}': rng.normal(size=5) for i in range(4)})
        with tempfile.TemporaryDirectory() as tmp:
            write_features(store, Path(tmp) / 'f.bin')
            loaded = load_features(Path(tmp) / 'f.bin')
        self.assertEqual(guess_format('f.bin'), 'raw-binary')
        self.assertEqual(list(loaded), list(store))
        for image, vec in store.items():
            np.testing.assert_array_equal(loaded[image], vec.astype(np.float32))

    def test_binary_corruption(self):
        store = VisualFeatureStore({'img': [1.0, 2.0]})
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'f.bin'
            write_features(store, path)
            payload = path.read_bytes()
            for broken in (b'XXXX' + payload[4:], payload[:-3], payload + b'\0'):
                path.write_bytes(broken)
                with self.assertRaises(FormatError):
                    load_features(path)

    def test_store_is_read_only(self):
        store = VisualFeatureStore({'img': [1.0, 2.0]})
        with self.assertRaises(ValueError):
            store['img'][0] = 5.0
        with self.assertRaises(ShapeError):
            VisualFeatureStore({'a': [1.0, 2.0], 'b': [1.0]})


class TestToyWorld(unittest.TestCase):
    def test_deterministic(self):
        spec = ToyWorldSpec(seed=5, n_train=50, n_test=10)
        a, b = generate(spec), generate(ToyWorldSpec(seed=5, n_train=50, n_test=10))
        self.assertEqual(a.train, b.train)
        self.assertEqual(a.test, b.test)
        for image, vec in a.features.items():
            np.testing.assert_array_equal(vec, b.features[image])
        c = generate(ToyWorldSpec(seed=6, n_train=50, n_test=10))
        self.assertNotEqual([i.answers for i in a.train], [i.answers for i in c.train])

    def test_answers_follow_the_image(self):
        world = generate(ToyWorldSpec(n_train=200, n_test=0, families=(
            'what-color', 'what-shape', 'how-many', 'bias', 'describe')))
        key = {entry['id']: entry for entry in world.key}
        for inst in world.train:
            entry = key[inst.id]
            expected = {
                'what-color': entry['color'],
                'what-shape': entry['shape'],
                'how-many': str(entry['count']),
                'describe': f"{entry['color']}, {entry['shape']}",
            }.get(entry['family'])
            if expected is None:
                thing = inst.tokens[-1]
                expected = BIAS_ANSWERS[thing]
            self.assertEqual(inst.answers, [normalize_answer(expected)])

    def test_features_decode_linearly(self):
        world = generate(ToyWorldSpec(seed=1, n_train=400, n_test=100))
        key = {entry['id']: entry for entry in world.key}
        colors = world.spec.colors

        def design(instances):
            X = np.stack([world.features[inst.image] for inst in instances])
            y = np.array([colors.index(key[inst.id]['color']) for inst in instances])
            return X, y

        X, y = design(world.train)
        W, *_ = np.linalg.lstsq(X, np.eye(len(colors))[y], rcond=None)
        X_test, y_test = design(world.test)
        self.assertGreaterEqual(np.mean(np.argmax(X_test @ W, axis=1) == y_test), 0.95)

    def test_degenerate_specs(self):
        with self.assertRaises(ConfigError):
            ToyWorldSpec(colors=('red',), shapes=('circle', 'square'))
        with self.assertRaises(ConfigError):
            ToyWorldSpec(families=('riddles',))
        with self.assertRaises(ConfigError):
            ToyWorldSpec(feature_dim=3)

    def test_write_world(self):
        world = generate(ToyWorldSpec(n_train=20, n_test=5))
        with tempfile.TemporaryDirectory() as tmp:
            paths = write_world(world, Path(tmp) / 'toy')
            self.assertEqual(load_qa(paths['train']), world.train)
            self.assertEqual(len(load_qa(paths['test'])), 5)
            features = load_features(paths['features'])
            self.assertEqual(features.dim, world.spec.feature_dim)
            np.testing.assert_array_equal(features['image3'], world.features['image3'])


if __name__ == '__main__':
    unittest.main()
