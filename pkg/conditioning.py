"""
Conditioning - 80-band log-mel vectors per 20 ms frame

Frame i of a 16 kHz stream is the 480-sample window starting 80 samples
(5 ms) before the hop and ending 80 samples after it. The stream start is
padded with zeros; the end of a finished signal is padded by holding its
last sample.
"""

import os
import json
import logging
import tempfile
from functools import lru_cache
from typing import List

import librosa
import numpy as np
from scipy.signal import windows

from audioio import AudioBuffer
from config import MelConfig
from errors import RateMismatch, WindowLengthMismatch

MelVector = np.ndarray


@lru_cache(maxsize=8)
def _mel_basis(cfg: MelConfig) -> np.ndarray:
    return librosa.filters.mel(
        sr=cfg.sample_rate,
        n_fft=cfg.fft_size,
        n_mels=cfg.num_mels,
        fmin=cfg.mel_fmin,
        fmax=cfg.mel_fmax,
        htk=True,
        norm=None,
        dtype=np.float64,
    )


@lru_cache(maxsize=8)
def _window(length: int) -> np.ndarray:
    return windows.hann(length, sym=False)


def mel_center_frequencies(cfg: MelConfig = MelConfig()) -> np.ndarray:
    """Center frequency in Hz of every triangular filter"""
    edges = librosa.mel_frequencies(n_mels=cfg.num_mels + 2, fmin=cfg.mel_fmin, fmax=cfg.mel_fmax, htk=True)
    return edges[1:-1]


def mel_frame(window: np.ndarray, cfg: MelConfig = MelConfig()) -> MelVector:
    """
    Log-mel vector of one 480-sample analysis window

    Args:
        window: context + frame + look-ahead samples
        cfg: Mel configuration

    Returns:
        float32 vector of num_mels natural-log energies, floored at log(log_floor)
    """
    window = np.asarray(window, dtype=np.float64)
    if window.shape != (cfg.window_length,):
        raise WindowLengthMismatch(f"Mel window must hold {cfg.window_length} samples, got {window.shape}")

    magnitude = np.abs(np.fft.rfft(window * _window(cfg.window_length), n=cfg.fft_size))
    energies = _mel_basis(cfg) @ magnitude
    return np.log(np.maximum(energies, cfg.log_floor)).astype(np.float32)


def _padded(samples: np.ndarray, cfg: MelConfig) -> np.ndarray:
    tail = samples[-1] if len(samples) else 0.0
    return np.concatenate([
        np.zeros(cfg.context, dtype=np.float32),
        samples,
        np.full(cfg.lookahead, tail, dtype=np.float32),
    ])


def mel_stream(x: AudioBuffer, cfg: MelConfig = MelConfig()) -> List[MelVector]:
    """One mel vector per complete 20 ms hop of a 16 kHz signal"""
    if x.sample_rate != cfg.sample_rate:
        raise RateMismatch(f"Mel features need {cfg.sample_rate} Hz input, got {x.sample_rate} Hz")

    padded = _padded(x.samples, cfg)
    count = len(x) // cfg.hop
    vectors = [mel_frame(padded[i * cfg.hop:i * cfg.hop + cfg.window_length], cfg) for i in range(count)]
    logging.info(f"Computed {count} mel frames from {len(x)} samples")
    return vectors


def mel_matrix(x: AudioBuffer, cfg: MelConfig = MelConfig()) -> np.ndarray:
    """mel_stream stacked as a frames x num_mels float32 matrix"""
    vectors = mel_stream(x, cfg)
    if not vectors:
        return np.zeros((0, cfg.num_mels), dtype=np.float32)
    return np.stack(vectors).astype(np.float32)


class MelStream:
    """
    Streaming mel extraction

    Frame i is emitted as soon as the samples of its 5 ms look-ahead have
    been pushed. flush() emits the frames still waiting for look-ahead,
    padding it by holding the last sample.
    """

    def __init__(self, cfg: MelConfig = MelConfig()):
        self.cfg = cfg
        self.reset()

    def reset(self):
        self._buffer = np.zeros(self.cfg.context, dtype=np.float32)
        self._received = 0
        self._emitted = 0

    def push(self, hop: np.ndarray) -> List[MelVector]:
        hop = np.asarray(hop, dtype=np.float32)
        self._buffer = np.concatenate([self._buffer, hop])
        self._received += len(hop)

        out = []
        while self._emitted * self.cfg.hop + self.cfg.hop + self.cfg.lookahead <= self._received:
            out.append(self._next_frame())
        return out

    def flush(self) -> List[MelVector]:
        tail = self._buffer[-1] if self._received else 0.0
        self._buffer = np.concatenate([self._buffer, np.full(self.cfg.lookahead, tail, dtype=np.float32)])
        out = []
        while (self._emitted + 1) * self.cfg.hop <= self._received:
            out.append(self._next_frame())
        return out

    def _next_frame(self) -> MelVector:
        vector = mel_frame(self._buffer[:self.cfg.window_length], self.cfg)
        self._buffer = self._buffer[self.cfg.hop:]
        self._emitted += 1
        return vector


def write_feature_matrix(path: str, mel: np.ndarray) -> None:
    """
    Dump a frames x num_mels matrix as raw little-endian float32, row-major

    A JSON sidecar at path + '.json' records the shape. Both files are
    written to temporaries first and moved into place together.
    """
    mel = np.ascontiguousarray(mel, dtype='<f4')
    sidecar = {
        'frames': int(mel.shape[0]),
        'num_mels': int(mel.shape[1]) if mel.ndim == 2 else 0,
        'dtype': 'float32-le',
        'order': 'row-major',
    }

    directory = os.path.dirname(os.path.abspath(path))
    fd_data, tmp_data = tempfile.mkstemp(suffix='.f32', dir=directory)
    fd_json, tmp_json = tempfile.mkstemp(suffix='.json', dir=directory)
    try:
        with os.fdopen(fd_data, 'wb') as f:
            f.write(mel.tobytes())
        with os.fdopen(fd_json, 'w') as f:
            json.dump(sidecar, f, indent=2)
        os.replace(tmp_data, path)
        os.replace(tmp_json, path + '.json')
    except Exception:
        for tmp in (tmp_data, tmp_json):
            if os.path.exists(tmp):
                os.remove(tmp)
        raise
    logging.info(f"Wrote {sidecar['frames']} x {sidecar['num_mels']} feature matrix to {path}")


def read_feature_matrix(path: str) -> np.ndarray:
    with open(path + '.json', 'r') as f:
        sidecar = json.load(f)
    data = np.fromfile(path, dtype='<f4')
    return data.reshape(sidecar['frames'], sidecar['num_mels'])


def flops_per_second(cfg: MelConfig = MelConfig()) -> float:
    """Windowing, real FFT (5 N log2 N), magnitude, filterbank MACs and log, at 50 frames/s"""
    bins = cfg.fft_size // 2 + 1
    per_frame = (
        cfg.window_length
        + 5 * cfg.fft_size * np.log2(cfg.fft_size) / 2
        + 3 * bins
        + 2 * int(np.count_nonzero(_mel_basis(cfg)))
        + 2 * cfg.num_mels
    )
    return float(per_frame) * (1000 / cfg.frame_ms)
