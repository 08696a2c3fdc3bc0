#!/usr/bin/env python3
"""
Test the log-mel conditioning features
"""

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import json
import shutil
import tempfile
import unittest

import numpy as np

import conditioning
from audioio import AudioBuffer
from config import MelConfig
from errors import RateMismatch, WindowLengthMismatch

FLOOR = np.log(1e-5)


class TestMelFrame(unittest.TestCase):

    def test_silence_hits_floor(self):
        """Test that an all-zero window gives ln(1e-5) everywhere"""
        vector = conditioning.mel_frame(np.zeros(480))
        self.assertEqual(vector.shape, (80,))
        np.testing.assert_allclose(vector, FLOOR, rtol=1e-6)

    def test_tone_peaks_at_nearest_center(self):
        """Test that a 1 kHz sine peaks in the filter centered nearest 1 kHz"""
        window = np.sin(2 * np.pi * 1000 * np.arange(480) / 16000)
        centers = conditioning.mel_center_frequencies()
        self.assertEqual(len(centers), 80)
        expected = int(np.argmin(np.abs(centers - 1000)))
        self.assertEqual(int(np.argmax(conditioning.mel_frame(window))), expected)

    def test_wrong_window_length(self):
        """Test that 479 samples raise WindowLengthMismatch"""
        with self.assertRaises(WindowLengthMismatch):
            conditioning.mel_frame(np.zeros(479))

    def test_entries_above_floor(self):
        """Test the floor invariant on noise"""
        vector = conditioning.mel_frame(np.random.default_rng(0).standard_normal(480) * 1e-6)
        self.assertTrue(np.all(vector >= np.float32(FLOOR) - 1e-6))


class TestMelStream(unittest.TestCase):

    def setUp(self):
        self.rng = np.random.default_rng(1)
        self.x = AudioBuffer(0.1 * self.rng.standard_normal(16000), 16000)

    def test_one_vector_per_hop(self):
        """Test that 1 s gives 50 vectors"""
        self.assertEqual(len(conditioning.mel_stream(self.x)), 50)
        self.assertEqual(conditioning.mel_matrix(self.x).shape, (50, 80))

    def test_constant_signal(self):
        """Test that a constant signal gives identical vectors after the first"""
        vectors = conditioning.mel_stream(AudioBuffer(np.full(16000, 0.25), 16000))
        for v in vectors[2:]:
            np.testing.assert_array_equal(v, vectors[1])
        self.assertFalse(np.array_equal(vectors[0], vectors[1]))

    def test_matches_manual_framing(self):
        """Test mel_stream against mel_frame on hand-extracted windows"""
        padded = np.concatenate([np.zeros(80, dtype=np.float32), self.x.samples])
        vectors = conditioning.mel_stream(self.x)
        for i in (0, 1, 17, 48):
            window = padded[i * 320:i * 320 + 480]
            np.testing.assert_array_equal(vectors[i], conditioning.mel_frame(window))

    def test_causality_horizon(self):
        """Test that frame i ignores samples at and after i*320 + 400"""
        i = 20
        perturbed = self.x.samples.copy()
        perturbed[i * 320 + 400] += 1.0
        before = conditioning.mel_matrix(self.x)
        after = conditioning.mel_matrix(AudioBuffer(perturbed, 16000))
        np.testing.assert_array_equal(before[:i + 1], after[:i + 1])
        self.assertFalse(np.array_equal(before[i + 1], after[i + 1]))

    def test_monotone_in_gain(self):
        """Test that doubling the input never decreases a mel entry"""
        louder = conditioning.mel_matrix(AudioBuffer(2 * self.x.samples, 16000))
        self.assertTrue(np.all(louder >= conditioning.mel_matrix(self.x)))

    def test_deterministic(self):
        """Test bit-identical output on repeated calls"""
        np.testing.assert_array_equal(conditioning.mel_matrix(self.x), conditioning.mel_matrix(self.x))

    def test_rate_mismatch(self):
        """Test that 32 kHz input raises RateMismatch"""
        with self.assertRaises(RateMismatch):
            conditioning.mel_stream(AudioBuffer(np.zeros(640), 32000))

    def test_streaming_matches_batch(self):
        """Test hop-by-hop extraction plus flush against the batch features"""
        stream = conditioning.MelStream(MelConfig())
        vectors = []
        for start in range(0, len(self.x), 320):
            vectors.extend(stream.push(self.x.samples[start:start + 320]))
        self.assertEqual(len(vectors), 49)
        vectors.extend(stream.flush())
        np.testing.assert_array_equal(np.stack(vectors), conditioning.mel_matrix(self.x))

    def test_streaming_reset(self):
        """Test that reset starts a new stream"""
        stream = conditioning.MelStream()
        first = stream.push(self.x.samples[:640])
        stream.reset()
        again = stream.push(self.x.samples[:640])
        np.testing.assert_array_equal(np.stack(first), np.stack(again))


class TestFeatureDump(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.tmp)

    def test_round_trip_with_sidecar(self):
        """Test raw float32 dump and its JSON shape sidecar"""
        mel = np.random.default_rng(2).standard_normal((7, 80)).astype(np.float32)
        path = os.path.join(self.tmp, 'feats.f32')
        conditioning.write_feature_matrix(path, mel)
        self.assertEqual(os.path.getsize(path), 7 * 80 * 4)
        with open(path + '.json') as f:
            sidecar = json.load(f)
        self.assertEqual(sidecar['frames'], 7)
        self.assertEqual(sidecar['num_mels'], 80)
        np.testing.assert_array_equal(conditioning.read_feature_matrix(path), mel)

    def test_flops(self):
        """Test that feature extraction has a positive cost at 50 frames/s"""
        self.assertGreater(conditioning.flops_per_second(), 0)


def run_tests():
    """Run all tests and return results"""
    suite = unittest.TestSuite()
    for case in (TestMelFrame, TestMelStream, TestFeatureDump):
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
