#!/usr/bin/env python3
"""
Test the configuration layer and the error hierarchy
"""

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import logging
import unittest
from fractions import Fraction
from unittest.mock import patch

from pydantic import ValidationError

import errors
from config import (Config, DiscriminatorConfig, GeneratorConfig, MelConfig, ModelConfig, as_fraction)


class TestConfig(unittest.TestCase):

    def test_weights_path_prefers_flag(self):
        """Test that --weights wins over UBGAN_WEIGHTS"""
        with patch.object(Config, 'UBGAN_WEIGHTS', 'env.ubw'):
            self.assertEqual(Config.get_weights_path('flag.ubw'), 'flag.ubw')
            self.assertEqual(Config.get_weights_path(None), 'env.ubw')

    def test_weights_path_unset(self):
        """Test that no flag and no environment gives None"""
        with patch.object(Config, 'UBGAN_WEIGHTS', None):
            self.assertIsNone(Config.get_weights_path())

    def test_log_level(self):
        """Test verbose and environment log levels"""
        self.assertEqual(Config.get_log_level(True), logging.INFO)
        with patch.object(Config, 'UBGAN_LOG_LEVEL', 'error'):
            self.assertEqual(Config.get_log_level(False), logging.ERROR)
        with patch.object(Config, 'UBGAN_LOG_LEVEL', 'nonsense'):
            self.assertEqual(Config.get_log_level(False), logging.WARNING)

    def test_as_fraction(self):
        """Test exact rational interpolation factors"""
        self.assertEqual(as_fraction(2.5), Fraction(5, 2))
        self.assertEqual(as_fraction(1 / 2.5), Fraction(2, 5))
        self.assertEqual(as_fraction(4), Fraction(4))

    def test_mel_geometry(self):
        """Test the 20 ms hop, 5 ms context and 5 ms look-ahead"""
        cfg = MelConfig()
        self.assertEqual(cfg.hop, 320)
        self.assertEqual(cfg.context, 80)
        self.assertEqual(cfg.lookahead, 80)
        self.assertEqual(cfg.window_length, 480)

    def test_mel_window_must_fit_fft(self):
        """Test that a window longer than the FFT is rejected"""
        with self.assertRaises(ValidationError):
            MelConfig(fft_size=256)

    def test_generator_geometry(self):
        """Test the downsampling product and the bottleneck length"""
        cfg = GeneratorConfig()
        self.assertEqual(cfg.bottleneck_steps, 2)
        self.assertEqual(cfg.cond_up_factors, [80, 80, 40, 20, 10, 4])

    def test_generator_rejects_wrong_cond_factors(self):
        """Test that conditioning factors must mirror the downsampling"""
        with self.assertRaises(ValidationError):
            GeneratorConfig(cond_up_factors=[80, 40, 40, 20, 10, 4])

    def test_discriminator_invariants(self):
        """Test the four-member ensemble with 75% overlap"""
        with self.assertRaises(ValidationError):
            DiscriminatorConfig(hop_ratio=0.5)
        with self.assertRaises(ValidationError):
            DiscriminatorConfig(windows=[1024, 512, 256])

    def test_model_config_round_trip(self):
        """Test that the stored JSON parses back to the same config"""
        cfg = ModelConfig.for_mode('guided')
        self.assertEqual(ModelConfig.from_json(cfg.model_dump_json()), cfg)

    def test_model_config_invalid_json(self):
        """Test that a broken architecture description raises InvalidConfig"""
        with self.assertRaises(errors.InvalidConfig):
            ModelConfig.from_json('{"mode": "loud"}')
        with self.assertRaises(errors.InvalidConfig):
            ModelConfig.from_json('not json')


class TestErrors(unittest.TestCase):

    def test_exit_codes(self):
        """Test the exit code of each error family"""
        self.assertEqual(errors.UsageError.exit_code, 1)
        self.assertEqual(errors.BadMagic.exit_code, 2)
        self.assertEqual(errors.NonFiniteLoss.exit_code, 2)
        self.assertEqual(errors.FrameCountMismatch.exit_code, 3)

    def test_families(self):
        """Test that every error belongs to the toolkit hierarchy"""
        self.assertTrue(issubclass(errors.FrameCountMismatch, errors.ConsistencyError))
        for name in ('ShapeMismatch', 'TruncatedFile', 'RateMismatch', 'ZeroReference', 'ClipTooShort'):
            self.assertTrue(issubclass(getattr(errors, name), errors.FormatError), name)
            self.assertTrue(issubclass(getattr(errors, name), errors.UbganError), name)


def run_tests():
    """Run all tests and return results"""
    suite = unittest.TestSuite()
    for case in (TestConfig, TestErrors):
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
