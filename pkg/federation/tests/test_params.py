import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from federation.exceptions import CorruptCheckpoint, EmptyInput, InvalidTensor, LengthMismatch, SchemaMismatch
from federation.params import (
    CHECKPOINT_MAGIC, ParameterSet, TensorEntry, axpy_combine, axpy_combine_per_tensor, distance, dumps_params,
    load_params, loads_checkpoint, loads_params, mean_params, payload_size, read_checkpoint, save_params,
)
from federation.tests import oracles


def random_sets(rng, count, shapes=(('a', (2, 3)), ('b', (4,)), ('c', (1,)))):
    return [
        ParameterSet.from_arrays({name: rng.normal(size=shape) for name, shape in shapes})
        for _ in range(count)
    ]


def as_lists(params):
    return {entry.name: entry.values.tolist() for entry in params}


class TensorEntryTests(SimpleTestCase):
    def test_rejects_non_finite_values(self):
        with self.assertRaises(InvalidTensor):
            TensorEntry('w', (2,), np.array([1.0, np.nan]))
        with self.assertRaises(InvalidTensor):
            TensorEntry('w', (1,), np.array([np.inf]))

    def test_rejects_bad_shapes_and_names(self):
        with self.assertRaises(InvalidTensor):
            TensorEntry('w', (2, 2), np.zeros(3))
        with self.assertRaises(InvalidTensor):
            TensorEntry('w', (0,), np.zeros(0))
        with self.assertRaises(InvalidTensor):
            TensorEntry('', (1,), np.zeros(1))

    def test_values_are_read_only_copies(self):
        source = np.ones(3)
        entry = TensorEntry('w', (3,), source)
        source[0] = 5.0
        self.assertEqual(entry.values[0], 1.0)
        with self.assertRaises(ValueError):
            entry.values[0] = 2.0


class ParameterSetTests(SimpleTestCase):
    def test_duplicate_names_rejected(self):
        entry = TensorEntry('w', (1,), np.zeros(1))
        with self.assertRaises(InvalidTensor):
            ParameterSet((entry, entry))

    def test_schema_keeps_declared_order(self):
        params = ParameterSet.from_arrays({'z': np.zeros((2, 2)), 'a': np.zeros(3)})
        self.assertEqual(params.schema, (('z', (2, 2)), ('a', (3,))))
        self.assertEqual(params.size, 7)
        assert_array_equal(params['z'], np.zeros((2, 2)))

    def test_schema_hash_tracks_names_and_shapes(self):
        base = ParameterSet.from_arrays({'w': np.zeros((2, 3))})
        same = ParameterSet.from_arrays({'w': np.ones((2, 3))})
        reshaped = ParameterSet.from_arrays({'w': np.zeros((3, 2))})
        renamed = ParameterSet.from_arrays({'v': np.zeros((2, 3))})
        self.assertTrue(base.is_compatible(same))
        self.assertFalse(base.is_compatible(reshaped))
        self.assertFalse(base.is_compatible(renamed))

    def test_select_keeps_subset(self):
        params = random_sets(np.random.default_rng(0), 1)[0]
        self.assertEqual(params.select(['b']).names, ('b',))


class MeanTests(SimpleTestCase):
    def test_two_sets(self):
        a = ParameterSet.from_arrays({'t': [2.0, 4.0]})
        b = ParameterSet.from_arrays({'t': [4.0, 8.0]})
        assert_array_equal(mean_params([a, b])['t'], [3.0, 6.0])

    def test_single_set_is_copied(self):
        a = random_sets(np.random.default_rng(1), 1)[0]
        self.assertTrue(mean_params([a]).equals(a))

    def test_matches_scalar_loop(self):
        sets = random_sets(np.random.default_rng(2), 5)
        expected = oracles.elementwise_mean([as_lists(params) for params in sets])
        result = mean_params(sets)
        for name, values in expected.items():
            assert_allclose(result[name].reshape(-1), values, rtol=0, atol=1e-12)

    def test_errors(self):
        with self.assertRaises(EmptyInput):
            mean_params([])
        with self.assertRaises(SchemaMismatch):
            mean_params([
                ParameterSet.from_arrays({'t': [1.0]}),
                ParameterSet.from_arrays({'t': [1.0, 2.0]}),
            ])


class DistanceTests(SimpleTestCase):
    def test_identical_inputs(self):
        a = random_sets(np.random.default_rng(3), 1)[0]
        self.assertEqual(distance(a, a), 0.0)

    def test_three_four_five(self):
        a = ParameterSet.from_arrays({'t': [3.0, 0.0]})
        b = ParameterSet.from_arrays({'t': [0.0, 4.0]})
        self.assertEqual(distance(a, b), 5.0)
        self.assertEqual(distance(a, b, norm='l1'), 7.0)

    def test_per_tensor_scope(self):
        a = ParameterSet.from_arrays({'x': [3.0], 'y': [0.0, 0.0]})
        b = ParameterSet.from_arrays({'x': [0.0], 'y': [3.0, 4.0]})
        self.assertEqual(distance(a, b, scope='per_tensor'), {'x': 3.0, 'y': 5.0})

    def test_matches_scalar_loop(self):
        a, b = random_sets(np.random.default_rng(4), 2)
        expected = oracles.norm(oracles.difference(oracles.flatten(as_lists(a)), oracles.flatten(as_lists(b))))
        self.assertAlmostEqual(distance(a, b), expected, delta=1e-12)
        self.assertEqual(distance(a, b), distance(b, a))


class CombineTests(SimpleTestCase):
    def test_identity(self):
        a = random_sets(np.random.default_rng(5), 1)[0]
        self.assertTrue(axpy_combine([1.0], [a]).equals(a))

    def test_midpoint(self):
        a = ParameterSet.from_arrays({'t': [2.0, 2.0]})
        b = ParameterSet.from_arrays({'t': [4.0, 6.0]})
        assert_array_equal(axpy_combine([0.5, 0.5], [a, b])['t'], [3.0, 4.0])

    def test_matches_scalar_loop(self):
        rng = np.random.default_rng(6)
        sets = random_sets(rng, 4)
        weights = rng.normal(size=4).tolist()
        result = axpy_combine(weights, sets)
        for name in result.names:
            expected = oracles.weighted_sum(weights, [as_lists(params)[name] for params in sets])
            assert_allclose(result[name].reshape(-1), expected, rtol=0, atol=1e-12)

    def test_length_mismatch(self):
        sets = random_sets(np.random.default_rng(7), 2)
        with self.assertRaises(LengthMismatch):
            axpy_combine([1.0], sets)
        with self.assertRaises(LengthMismatch):
            axpy_combine_per_tensor({'a': [0.5, 0.5]}, sets)

    def test_per_tensor_weights(self):
        a = ParameterSet.from_arrays({'x': [1.0], 'y': [1.0]})
        b = ParameterSet.from_arrays({'x': [3.0], 'y': [3.0]})
        result = axpy_combine_per_tensor({'x': [1.0, 0.0], 'y': [0.25, 0.75]}, [a, b])
        assert_array_equal(result['x'], [1.0])
        assert_array_equal(result['y'], [2.5])


class PropertyTests(SimpleTestCase):
    seeds = st.integers(min_value=0, max_value=2 ** 32 - 1)

    @settings(max_examples=50, deadline=None)
    @given(count=st.integers(min_value=1, max_value=16), seed=seeds)
    def test_mean_is_the_uniform_combination(self, count, seed):
        sets = random_sets(np.random.default_rng(seed), count)
        expected = axpy_combine([1.0 / count] * count, sets)
        assert_allclose(mean_params(sets).flat(), expected.flat(), rtol=0, atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(seed=seeds, scope=st.sampled_from(['global', 'per_tensor']), norm=st.sampled_from(['l1', 'l2']))
    def test_distance_is_a_metric(self, seed, scope, norm):
        a, b, c = random_sets(np.random.default_rng(seed), 3)

        def by_key(value):
            return value if isinstance(value, dict) else {'*': value}

        ab = by_key(distance(a, b, scope, norm))
        ba = by_key(distance(b, a, scope, norm))
        bc = by_key(distance(b, c, scope, norm))
        ac = by_key(distance(a, c, scope, norm))
        self.assertEqual(ab, ba)
        for key in ab:
            self.assertGreaterEqual(ab[key], 0.0)
            self.assertLessEqual(ac[key], ab[key] + bc[key] + 1e-12)


class CheckpointTests(SimpleTestCase):
    def setUp(self):
        self.params = random_sets(np.random.default_rng(8), 1)[0]

    def test_bytes_reload_bit_identical(self):
        blob = dumps_params(self.params, meta={'round': 3})
        self.assertTrue(blob.startswith(CHECKPOINT_MAGIC))
        params, meta = loads_checkpoint(blob)
        self.assertTrue(params.equals(self.params))
        self.assertEqual(meta, {'round': 3})

    def test_payload_size_is_serialized_length(self):
        self.assertEqual(payload_size(self.params), len(dumps_params(self.params)))

    def test_corruption_detected(self):
        blob = dumps_params(self.params)
        with self.assertRaises(CorruptCheckpoint):
            loads_params(b'NOTACKPT' + blob[8:])
        with self.assertRaises(CorruptCheckpoint):
            loads_params(blob[:-8])
        with self.assertRaises(CorruptCheckpoint):
            loads_params(blob + b'\x00')
        with self.assertRaises(CorruptCheckpoint):
            loads_params(blob.replace(self.params.schema_hash.encode(), b'0' * 64))

    def test_file_round_trip(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'nested' / 'master.ckpt'
            save_params(path, self.params, meta={'kind': 'test'})
            self.assertTrue(load_params(path).equals(self.params))
            self.assertEqual(read_checkpoint(path)[1], {'kind': 'test'})
            with self.assertRaises(CorruptCheckpoint):
                read_checkpoint(Path(tmp) / 'missing.ckpt')
