#!/usr/bin/env python3
"""
Test layer specs, stream state and the UBW1 weight container
"""

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import shutil
import struct
import tempfile
import unittest
from fractions import Fraction

import numpy as np

import layers
import nnengine as nn
import weight_store
from config import ModelConfig
from errors import BadMagic, InvalidConfig, ShapeMismatch, ShapeTableMismatch, TruncatedFile, UninitializedState
from layers import DSConv1d, GRU, Interp, LayerSpec, Module, StreamState
from weight_store import WeightStore


class TinyStack(Module):
    def __init__(self):
        self.conv = DSConv1d('tiny.conv', 2, 4, 5)
        self.up = Interp('tiny.up', 4, Fraction(2))
        self.rnn = GRU('tiny.rnn', 4, 3)

    def __call__(self, x, state=None):
        return self.rnn(self.up(self.conv(x, state), state), state)


class TestLayerSpec(unittest.TestCase):

    def test_dsconv_params(self):
        """Test depthwise 8x7 + pointwise 16x8 + bias 16"""
        self.assertEqual(LayerSpec('dsconv1d', 'c', 8, 16, 7).param_count(), 200)

    def test_gru_params(self):
        """Test the three-gate GRU parameter count"""
        self.assertEqual(LayerSpec('gru', 'g', 4, 3).param_count(), 3 * 3 * (4 + 3) + 2 * 3 * 3)

    def test_history_shapes(self):
        """Test the stream history each layer kind needs"""
        self.assertEqual(LayerSpec('dsconv1d', 'c', 8, 16, 7).history_shape(), (8, 6))
        self.assertIsNone(LayerSpec('dsconv1d', 'c', 8, 16, 1).history_shape())
        self.assertEqual(LayerSpec('interp', 'u', 4, 4, interp_factor=Fraction(5, 2)).history_shape(), (4, 1))
        self.assertIsNone(LayerSpec('interp', 'd', 4, 4, interp_factor=Fraction(2, 5)).history_shape())
        self.assertEqual(LayerSpec('gru', 'g', 4, 3).history_shape(), (3,))

    def test_flops(self):
        """Test MAC = 2 accounting for a dense convolution"""
        spec = LayerSpec('causal_conv1d', 'c', 2, 3, 4)
        self.assertEqual(spec.flops(100), (2 * 2 * 3 * 4 + 3) * 100.0)
        self.assertEqual(LayerSpec('interp', 'd', 4, 4, interp_factor=Fraction(2, 5)).flops(100), 0.0)

    def test_unknown_kind(self):
        """Test that an unknown kind is rejected"""
        with self.assertRaises(ValueError):
            LayerSpec('attention', 'a', 1, 1)


class TestModule(unittest.TestCase):

    def setUp(self):
        self.model = TinyStack()
        self.model.init_params(np.random.default_rng(0))

    def test_parameter_collection(self):
        """Test that parameters and the shape table agree"""
        table = layers.shape_table(self.model.specs())
        self.assertEqual(len(table), len(self.model.parameters()))
        self.assertEqual(table['tiny.conv.depthwise'], (2, 5))
        self.assertEqual(layers.count_params(self.model.specs()), sum(p.size for p in self.model.parameters()))
        self.assertEqual(sum(layers.param_breakdown(self.model.specs(), depth=2).values()),
                         layers.count_params(self.model.specs()))

    def test_init(self):
        """Test zero biases and bounded weights"""
        self.assertFalse(np.any(self.model.conv.params['bias'].data))
        self.assertLessEqual(np.max(np.abs(self.model.conv.params['pointwise'].data)), 1 / np.sqrt(2))

    def test_new_state(self):
        """Test that only layers with history get buffers"""
        state = self.model.new_state()
        self.assertEqual(set(state.buffers), {'tiny.conv', 'tiny.up', 'tiny.rnn'})
        with self.assertRaises(UninitializedState):
            StreamState().get('tiny.conv')

    def test_state_copy_is_independent(self):
        """Test that copying a state copies its buffers"""
        state = self.model.new_state()
        clone = state.copy()
        clone.buffers['tiny.rnn'][0] = 1.0
        self.assertEqual(state.get('tiny.rnn')[0], 0.0)

    def test_streaming_matches_batch(self):
        """Test that frame-by-frame calls reproduce one batch call"""
        x = np.random.default_rng(1).standard_normal((2, 24)).astype(np.float32)
        with nn.no_grad():
            batch = self.model(nn.Tensor(x)).data
            state = self.model.new_state()
            parts = [self.model(nn.Tensor(x[:, i:i + 6]), state).data for i in range(0, 24, 6)]
        np.testing.assert_allclose(np.concatenate(parts, axis=1), batch, atol=1e-5)

    def test_linear_shape_check(self):
        """Test that a linear layer rejects the wrong feature count"""
        with self.assertRaises(ShapeMismatch):
            layers.Linear('l', 3, 2)(nn.Tensor(np.zeros(4)))


class TestWeightStore(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.mkdtemp()
        self.config = ModelConfig.for_mode('blind')
        rng = np.random.default_rng(2)
        self.store = WeightStore(self.config, {
            'a.weight': rng.standard_normal((3, 2, 4)).astype(np.float32),
            'a.bias': rng.standard_normal(3).astype(np.float32),
        })
        self.table = self.store.shapes()

    def tearDown(self):
        shutil.rmtree(self.tmp)

    def load(self, data):
        return weight_store.load_weights(data, expected=lambda cfg: self.table)

    def test_round_trip(self):
        """Test that save then load returns the same tensors and config"""
        back = self.load(weight_store.save_weights(self.store))
        self.assertEqual(back.config, self.config)
        for name, value in self.store.entries.items():
            np.testing.assert_array_equal(back.entries[name], value)

    def test_file_round_trip(self):
        """Test writing through a temporary file"""
        path = os.path.join(self.tmp, 'w.ubw')
        weight_store.write_weights(path, self.store)
        with open(path, 'rb') as f:
            self.assertEqual(self.load(f.read()).param_count(), 3 * 2 * 4 + 3)
        self.assertEqual(os.listdir(self.tmp), ['w.ubw'])

    def test_bad_magic(self):
        """Test that a foreign file raises BadMagic"""
        data = weight_store.save_weights(self.store)
        with self.assertRaises(BadMagic):
            self.load(b'RIFF' + data[4:])

    def test_bad_version(self):
        """Test that an unknown version raises BadMagic"""
        data = bytearray(weight_store.save_weights(self.store))
        data[4:8] = struct.pack('<I', 99)
        with self.assertRaises(BadMagic):
            self.load(bytes(data))

    def test_truncated(self):
        """Test that missing and trailing bytes raise TruncatedFile"""
        data = weight_store.save_weights(self.store)
        with self.assertRaises(TruncatedFile):
            self.load(data[:-3])
        with self.assertRaises(TruncatedFile):
            self.load(data + b'\x00')

    def test_invalid_config(self):
        """Test that a broken config JSON raises InvalidConfig"""
        text = b'{"mode": "loud"}'
        data = weight_store.MAGIC + struct.pack('<II', weight_store.VERSION, len(text)) + text + struct.pack('<I', 0)
        with self.assertRaises(InvalidConfig):
            self.load(data)

    def test_shape_table_mismatch(self):
        """Test missing, unknown and mis-shaped tensors"""
        data = weight_store.save_weights(self.store)
        with self.assertRaises(ShapeTableMismatch):
            weight_store.load_weights(data, expected=lambda cfg: {'a.weight': (3, 2, 5), 'a.bias': (3,)})
        with self.assertRaises(ShapeTableMismatch):
            weight_store.load_weights(data, expected=lambda cfg: {'a.weight': (3, 2, 4)})
        with self.assertRaises(ShapeTableMismatch):
            weight_store.load_weights(data, expected=lambda cfg: dict(self.table, **{'b.bias': (1,)}))


def run_tests():
    """Run all tests and return results"""
    suite = unittest.TestSuite()
    for case in (TestLayerSpec, TestModule, TestWeightStore):
        suite.addTests(unittest.TestLoader().loadTestsFromTestCase(case))

    runner = unittest.TextTestRunner(verbosity=2)
    result = runner.run(suite)

    print(f"\n{'='*50}")
    print(f"TEST SUMMARY")
    print(f"{'='*50}")
    print(f"Tests run: {result.testsRun}")
    print(f"Failures: {len(result.failures)}")
    print(f"Errors: {len(result.errors)}")

    success = len(result.failures) == 0 and len(result.errors) == 0
    print(f"\n✅ ALL TESTS PASSED!" if success else f"\n❌ SOME TESTS FAILED!")
    return success


if __name__ == "__main__":
    sys.exit(0 if run_tests() else 1)
