#!/usr/bin/env python3
"""
Test the tensor engine: forward values of the ops, causality and gradients
"""

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import unittest

import numpy as np
from scipy import signal

import nnengine as nn
from errors import GraphDetached, NonIntegralOutputLength, NotScalarLoss, ShapeMismatch

TOLERANCE = 1e-3


def leaf(rng, *shape):
    return nn.Tensor(rng.standard_normal(shape), requires_grad=True)


class TestForward(unittest.TestCase):

    def test_causal_conv(self):
        """Test [1, 2, 3] through kernel [1, 1] with zero history"""
        y = nn.causal_conv1d(np.array([[1.0, 2.0, 3.0]]), np.ones((1, 1, 2)))
        np.testing.assert_allclose(y.data, [[1.0, 3.0, 5.0]])

    def test_causal_conv_history(self):
        """Test that history stands in for the past"""
        y = nn.causal_conv1d(np.array([[1.0, 2.0, 3.0]]), np.ones((1, 1, 2)), history=np.array([[10.0]]))
        np.testing.assert_allclose(y.data, [[11.0, 3.0, 5.0]])

    def test_causal_conv_shape_mismatch(self):
        """Test that a kernel for 2 input channels rejects a 1-channel signal"""
        with self.assertRaises(ShapeMismatch):
            nn.causal_conv1d(np.zeros((1, 5)), np.zeros((1, 2, 3)))

    def test_depthwise_tap_order(self):
        """Test that the last tap multiplies the current sample"""
        x = np.array([[1.0, 2.0, 3.0]])
        np.testing.assert_allclose(nn.depthwise_conv1d(x, np.array([[0.0, 1.0]])).data, x)
        np.testing.assert_allclose(nn.depthwise_conv1d(x, np.array([[1.0, 0.0]])).data, [[0.0, 1.0, 2.0]])

    def test_dsconv_matches_factored_dense_conv(self):
        """Test depthwise-separable convolution against the equivalent dense kernel"""
        rng = np.random.default_rng(0)
        x = rng.standard_normal((8, 40))
        dw = rng.standard_normal((8, 7))
        pw = rng.standard_normal((16, 8))
        b = rng.standard_normal(16)
        dense = pw[:, :, None] * dw[None, :, :]
        np.testing.assert_allclose(nn.dsconv1d(x, dw, pw, b).data, nn.causal_conv1d(x, dense, b).data,
                                   rtol=1e-4, atol=1e-4)

    def test_conv2d_matches_correlate(self):
        """Test a single-channel 3x3 'same' convolution against scipy"""
        rng = np.random.default_rng(1)
        x = rng.standard_normal((1, 6, 9))
        w = rng.standard_normal((1, 1, 3, 3))
        y = nn.conv2d(x, w, padding=(1, 1))
        np.testing.assert_allclose(y.data[0], signal.correlate2d(x[0], w[0, 0], mode='same'), rtol=1e-4, atol=1e-5)

    def test_conv2d_stride(self):
        """Test the strided output size"""
        y = nn.conv2d(np.zeros((2, 6, 9)), np.zeros((4, 2, 3, 3)), stride=(1, 2), padding=(1, 1))
        self.assertEqual(y.shape, (4, 6, 5))

    def test_channel_norm(self):
        """Test that [1, -1] normalizes to itself (up to eps)"""
        y = nn.channel_norm(np.array([[1.0], [-1.0]]))
        np.testing.assert_allclose(y.data[:, 0], [1.0, -1.0], atol=1e-5)

    def test_gated(self):
        """Test tanh(1) * sigmoid(1)"""
        self.assertAlmostEqual(nn.gated(np.array([1.0]), np.array([1.0])).item(), 0.55677, places=4)
        with self.assertRaises(ShapeMismatch):
            nn.gated(np.zeros(2), np.zeros(3))

    def test_interp_start_aligned(self):
        """Test [0, 1] upsampled by 2 with the right edge held"""
        y = nn.interp(np.array([[0.0, 1.0]]), 2)
        np.testing.assert_allclose(y.data, [[0.0, 0.5, 1.0, 1.0]])

    def test_interp_causal_grid(self):
        """Test that the causal grid ends each block on its last input"""
        y = nn.interp(np.array([[2.0, 4.0]]), 2, causal=True)
        np.testing.assert_allclose(y.data, [[1.0, 2.0, 3.0, 4.0]])
        y = nn.interp(np.array([[2.0, 4.0]]), 2, causal=True, history=np.array([[2.0]]))
        np.testing.assert_allclose(y.data, [[2.0, 2.0, 3.0, 4.0]])

    def test_interp_lengths(self):
        """Test rational output lengths"""
        self.assertEqual(nn.interp(np.zeros((3, 80)), 1 / 2.5).shape, (3, 32))
        self.assertEqual(nn.interp(np.zeros((3, 32)), 2.5).shape, (3, 80))
        with self.assertRaises(NonIntegralOutputLength):
            nn.interp(np.zeros((1, 3)), 1 / 2.5)

    def test_interp_identity(self):
        """Test that factor 1 returns the input"""
        x = nn.Tensor(np.arange(6.0).reshape(2, 3))
        self.assertIs(nn.interp(x, 1), x)

    def test_interp_nearest(self):
        """Test sample repetition"""
        y = nn.interp(np.array([[1.0, 2.0]]), 3, mode='nearest')
        np.testing.assert_allclose(y.data, [[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]])

    def test_gru_zero_weights(self):
        """Test that zero weights halve the hidden state"""
        h = nn.gru_step(np.zeros(3), np.ones(2), np.zeros((6, 3)), np.zeros((6, 2)), np.zeros(6), np.zeros(6))
        np.testing.assert_allclose(h.data, [0.5, 0.5])

    def test_gru_shape_check(self):
        """Test that mis-sized GRU weights are rejected"""
        with self.assertRaises(ShapeMismatch):
            nn.gru_step(np.zeros(3), np.ones(2), np.zeros((6, 4)), np.zeros((6, 2)), np.zeros(6), np.zeros(6))

    def test_frame_signal(self):
        """Test overlapping frames of a 1-D signal"""
        frames = nn.frame_signal(np.arange(10.0), 4, 2)
        self.assertEqual(frames.shape, (4, 4))
        np.testing.assert_allclose(frames.data[1], [2, 3, 4, 5])
        with self.assertRaises(ShapeMismatch):
            nn.frame_signal(np.arange(3.0), 4, 2)

    def test_round_half_away(self):
        """Test ties away from zero"""
        np.testing.assert_array_equal(nn.round_half_away(np.array([0.5, 1.5, -0.5, -2.5, 2.4])), [1, 2, -1, -3, 2])


class TestQuantizer(unittest.TestCase):

    def test_zero_maps_to_middle(self):
        """Test that z = 0 rounds 7.5 up to index 8"""
        index, dequant = nn.quantize_st(nn.Tensor(np.zeros(1)))
        self.assertEqual(int(index[0]), 8)
        self.assertAlmostEqual(dequant.item(), 1 / 15, places=6)

    def test_saturation(self):
        """Test that large magnitudes land on the outer levels"""
        index, dequant = nn.quantize_st(nn.Tensor(np.array([10.0, -10.0])))
        np.testing.assert_array_equal(index, [15, 0])
        np.testing.assert_allclose(dequant.data, [1.0, -1.0])
        np.testing.assert_allclose(nn.dequantize(index), [1.0, -1.0])

    def test_indices_in_range(self):
        """Test that every index is a 4-bit code"""
        index, _ = nn.quantize_st(nn.Tensor(np.random.default_rng(0).standard_normal(1000) * 3))
        self.assertTrue(np.all((index >= 0) & (index <= 15)))

    def test_straight_through_gradient(self):
        """Test that the quantizer passes the tanh gradient"""
        with nn.default_dtype(np.float64):
            z = nn.Tensor(np.array([0.3, -1.2, 2.0]), requires_grad=True)
            _, dequant = nn.quantize_st(z)
            dequant.sum().backward()
            np.testing.assert_allclose(z.grad, 1 - np.tanh(z.data) ** 2, rtol=1e-10)


class TestAutograd(unittest.TestCase):

    def test_linear_gradient(self):
        """Test that d/dw sum(w * x) is x"""
        x = nn.Tensor(np.array([1.0, 2.0, 3.0]))
        w = nn.Tensor(np.array([0.5, -1.0, 2.0]), requires_grad=True)
        (w * x).sum().backward()
        np.testing.assert_allclose(w.grad, x.data)

    def test_gradient_accumulates_over_reuse(self):
        """Test that a tensor used twice gets both contributions"""
        w = nn.Tensor(np.array([1.0, 2.0]), requires_grad=True)
        (w * w).sum().backward()
        np.testing.assert_allclose(w.grad, [2.0, 4.0])

    def test_broadcast_gradient(self):
        """Test that a broadcast bias collects the gradient of every step"""
        b = nn.Tensor(np.zeros(3), requires_grad=True)
        (nn.Tensor(np.ones((3, 4))) + b.reshape(-1, 1)).sum().backward()
        np.testing.assert_allclose(b.grad, [4.0, 4.0, 4.0])

    def test_not_scalar(self):
        """Test that backward on a vector raises NotScalarLoss"""
        w = nn.Tensor(np.ones(3), requires_grad=True)
        with self.assertRaises(NotScalarLoss):
            (w * 2).backward()

    def test_detached(self):
        """Test that a loss with no trainable inputs raises GraphDetached"""
        with self.assertRaises(GraphDetached):
            nn.Tensor(np.ones(3)).sum().backward()

    def test_no_grad(self):
        """Test that no graph is recorded inside no_grad"""
        w = nn.Tensor(np.ones(3), requires_grad=True)
        with nn.no_grad():
            y = (w * 2).sum()
        self.assertFalse(y.requires_grad)
        self.assertTrue(nn.is_grad_enabled())

    def test_default_dtype(self):
        """Test that the dtype context is scoped"""
        with nn.default_dtype(np.float64):
            self.assertEqual(nn.Tensor([1.0]).data.dtype, np.float64)
        self.assertEqual(nn.Tensor([1.0]).data.dtype, np.float32)


class TestGradcheck(unittest.TestCase):

    def setUp(self):
        self.rng = np.random.default_rng(4)

    def check(self, fn, *shapes):
        with nn.default_dtype(np.float64):
            inputs = [leaf(self.rng, *shape) for shape in shapes]
            error = nn.gradcheck(fn, inputs)
        self.assertLess(error, TOLERANCE)

    def test_causal_conv(self):
        """Gradcheck dense causal convolution with bias"""
        self.check(lambda x, w, b: nn.causal_conv1d(x, w, b), (3, 10), (2, 3, 4), (2,))

    def test_dsconv(self):
        """Gradcheck depthwise-separable convolution"""
        self.check(lambda x, dw, pw: nn.dsconv1d(x, dw, pw), (3, 10), (3, 5), (4, 3))

    def test_conv2d(self):
        """Gradcheck strided 2-D convolution"""
        self.check(lambda x, w: nn.conv2d(x, w, stride=(1, 2), padding=(1, 1)), (2, 5, 7), (3, 2, 3, 3))

    def test_channel_norm(self):
        """Gradcheck normalization with affine parameters"""
        self.check(nn.channel_norm, (5, 6), (5,), (5,))

    def test_interp(self):
        """Gradcheck linear upsampling and downsampling"""
        self.check(lambda x: nn.interp(x, 2.5, causal=True), (3, 4))
        self.check(lambda x: nn.interp(x, 1 / 2.5), (3, 10))

    def test_gru(self):
        """Gradcheck one GRU update through every input"""
        self.check(nn.gru_step, (3,), (2,), (6, 3), (6, 2), (6,), (6,))

    def test_gated_and_hypot(self):
        """Gradcheck the gated activation and the magnitude op"""
        self.check(nn.gated, (4, 3), (4, 3))
        self.check(nn.hypot, (4, 3), (4, 3))


def run_tests():
    """Run all tests and return results"""
    suite = unittest.TestSuite()
    for case in (TestForward, TestQuantizer, TestAutograd, TestGradcheck):
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
