#!/usr/bin/env python3
"""
Test WAV I/O, framing helpers and the alignment metrics
"""

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import shutil
import tempfile
import unittest

import numpy as np
import soundfile as sf

from audioio import AudioBuffer, align_and_snr, delay, find_lag, frames, read_wav, snr_db, write_wav
from errors import CorruptHeader, EmptySignal, FrameAlignment, NotMono, RateMismatch, UnsupportedFormat


class TestWavIO(unittest.TestCase):

    def setUp(self):
        """Set up a scratch directory"""
        self.tmp = tempfile.mkdtemp()
        self.rng = np.random.default_rng(0)

    def tearDown(self):
        shutil.rmtree(self.tmp)

    def test_float_round_trip(self):
        """Test that 32-bit float files round-trip bit-exactly"""
        buf = AudioBuffer(self.rng.uniform(-1, 1, 1600).astype(np.float32), 16000)
        path = os.path.join(self.tmp, 'x.wav')
        write_wav(path, buf)
        back = read_wav(path)
        self.assertEqual(back.sample_rate, 16000)
        np.testing.assert_array_equal(back.samples, buf.samples)

    def test_pcm16_scaling(self):
        """Test symmetric 1/32768 scaling of 16-bit PCM"""
        path = os.path.join(self.tmp, 'pcm.wav')
        sf.write(path, np.array([-32768, 0, 16384, 32767], dtype=np.int16), 32000, subtype='PCM_16')
        buf = read_wav(path)
        self.assertEqual(buf.samples[0], -1.0)
        self.assertEqual(buf.samples[1], 0.0)
        self.assertEqual(buf.samples[2], 0.5)

    def test_pcm16_write_saturates(self):
        """Test that writing PCM saturates out-of-range samples"""
        path = os.path.join(self.tmp, 'sat.wav')
        write_wav(path, AudioBuffer(np.array([1.5, -1.5, 0.25], dtype=np.float32), 16000), 'PCM_16')
        raw, _ = sf.read(path, dtype='int16')
        np.testing.assert_array_equal(raw, [32767, -32768, 8192])

    def test_stereo_rejected(self):
        """Test that a stereo file raises NotMono"""
        path = os.path.join(self.tmp, 'stereo.wav')
        sf.write(path, np.zeros((100, 2), dtype=np.float32), 16000, subtype='FLOAT')
        with self.assertRaises(NotMono):
            read_wav(path)

    def test_unsupported_rate(self):
        """Test that a 44.1 kHz file is rejected"""
        path = os.path.join(self.tmp, 'cd.wav')
        sf.write(path, np.zeros(100, dtype=np.float32), 44100, subtype='FLOAT')
        with self.assertRaises(UnsupportedFormat):
            read_wav(path)

    def test_corrupt_header(self):
        """Test that garbage bytes raise CorruptHeader"""
        path = os.path.join(self.tmp, 'junk.wav')
        with open(path, 'wb') as f:
            f.write(b'RIFF\x00\x00junkjunkjunk')
        with self.assertRaises(CorruptHeader):
            read_wav(path)

    def test_buffer_validation(self):
        """Test AudioBuffer invariants"""
        with self.assertRaises(NotMono):
            AudioBuffer(np.zeros((2, 10)), 16000)
        with self.assertRaises(UnsupportedFormat):
            AudioBuffer(np.zeros(10), 8000)
        self.assertEqual(AudioBuffer(np.zeros(32000), 32000).duration, 1.0)


class TestSignalHelpers(unittest.TestCase):

    def test_frames(self):
        """Test framing into whole frames"""
        self.assertEqual(frames(np.arange(640), 320).shape, (2, 320))
        with self.assertRaises(FrameAlignment):
            frames(np.arange(641), 320)

    def test_delay(self):
        """Test delay keeps the length and shifts in zeros"""
        np.testing.assert_array_equal(delay(np.array([1, 2, 3, 4]), 2), [0, 0, 1, 2])
        np.testing.assert_array_equal(delay(np.array([1, 2]), 0), [1, 2])

    def test_snr(self):
        """Test SNR cap and hand values"""
        x = np.ones(100)
        self.assertEqual(snr_db(x, x), 120.0)
        self.assertAlmostEqual(snr_db(x, 0.9 * x), 20.0, places=6)

    def test_find_lag(self):
        """Test that the correlation peak finds a pure delay"""
        x = np.random.default_rng(1).standard_normal(2000)
        self.assertEqual(find_lag(x, delay(x, 17), 100), 17)


class TestAlignAndSnr(unittest.TestCase):

    def setUp(self):
        self.rng = np.random.default_rng(2)
        self.ref = AudioBuffer(0.3 * self.rng.standard_normal(8000), 32000)

    def test_exact_delayed_copy(self):
        """Test that a delayed copy aligns at its delay with capped SNR"""
        test = AudioBuffer(delay(self.ref.samples, 63), 32000)
        report = align_and_snr(self.ref, test, 200)
        self.assertEqual(report.delay_samples, 63)
        self.assertEqual(report.snr_db, 120.0)
        self.assertEqual(len(report.band_snr_db), 8)
        self.assertAlmostEqual(report.sc, 0.0, places=6)
        self.assertAlmostEqual(report.mag, 0.0, places=6)

    def test_noise_at_minus_40_db(self):
        """Test SNR of a copy with noise 40 dB below the signal"""
        noise = self.rng.standard_normal(len(self.ref))
        noise *= np.sqrt(np.sum(self.ref.samples.astype(np.float64) ** 2) / np.sum(noise ** 2) * 1e-4)
        test = AudioBuffer(self.ref.samples + noise, 32000)
        report = align_and_snr(self.ref, test, 50)
        self.assertEqual(report.delay_samples, 0)
        self.assertAlmostEqual(report.snr_db, 40.0, delta=0.5)
        self.assertIn('band_snr_db', report.to_dict())

    def test_rate_mismatch(self):
        """Test that different rates raise RateMismatch"""
        with self.assertRaises(RateMismatch):
            align_and_snr(self.ref, AudioBuffer(np.zeros(100), 16000), 10)

    def test_empty(self):
        """Test that empty signals raise EmptySignal"""
        with self.assertRaises(EmptySignal):
            align_and_snr(self.ref, AudioBuffer(np.zeros(0), 32000), 10)


def run_tests():
    """Run all tests and return results"""
    suite = unittest.TestSuite()
    for case in (TestWavIO, TestSignalHelpers, TestAlignAndSnr):
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
