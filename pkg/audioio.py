"""
Audio I/O - WAV reading/writing, framing and waveform metrics

Mono 16 kHz (wideband) and 32 kHz (super-wideband) WAV files only, as
16-bit PCM or 32-bit IEEE float. Resampling is the caller's business.
"""

import os
import logging
import tempfile
from dataclasses import dataclass, field
from typing import List

import numpy as np
import soundfile as sf

from errors import CorruptHeader, EmptySignal, FrameAlignment, NotMono, RateMismatch, UnsupportedFormat

SUPPORTED_RATES = (16000, 32000)
SUPPORTED_SUBTYPES = ('PCM_16', 'FLOAT')
SNR_CAP_DB = 120.0


@dataclass(frozen=True)
class AudioBuffer:
    """Mono float32 samples in [-1, 1] with their sample rate"""
    samples: np.ndarray
    sample_rate: int
    channels: int = 1

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float32)
        if samples.ndim != 1 or self.channels != 1:
            raise NotMono(f"AudioBuffer is mono only, got shape {samples.shape}")
        if self.sample_rate not in SUPPORTED_RATES:
            raise UnsupportedFormat(f"Unsupported sample rate {self.sample_rate}; expected one of {SUPPORTED_RATES}")
        object.__setattr__(self, 'samples', samples)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class MetricReport:
    snr_db: float
    band_snr_db: List[float] = field(default_factory=list)
    sc: float = 0.0
    mag: float = 0.0
    delay_samples: int = 0

    def to_dict(self) -> dict:
        return {
            'snr_db': self.snr_db,
            'band_snr_db': list(self.band_snr_db),
            'sc': self.sc,
            'mag': self.mag,
            'delay_samples': self.delay_samples,
        }


def read_wav(path: str) -> AudioBuffer:
    """
    Read a mono 16-bit PCM or 32-bit float WAV file

    Args:
        path: Path of the WAV file

    Returns:
        AudioBuffer; PCM samples are scaled by 1/32768
    """
    if not os.path.isfile(path):
        raise FileNotFoundError(f"No such file: {path}")
    try:
        info = sf.info(path)
    except RuntimeError as e:
        raise CorruptHeader(f"Cannot parse WAV header of {path}: {str(e)}")

    if info.format != 'WAV':
        raise UnsupportedFormat(f"{path} is {info.format}, not WAV")
    if info.subtype not in SUPPORTED_SUBTYPES:
        raise UnsupportedFormat(f"{path} uses subtype {info.subtype}; expected PCM_16 or FLOAT")
    if info.channels != 1:
        raise NotMono(f"{path} has {info.channels} channels")
    if info.samplerate not in SUPPORTED_RATES:
        raise UnsupportedFormat(f"{path} is sampled at {info.samplerate} Hz; expected 16000 or 32000")

    try:
        if info.subtype == 'PCM_16':
            raw, rate = sf.read(path, dtype='int16', always_2d=False)
            samples = raw.astype(np.float32) / np.float32(32768.0)
        else:
            samples, rate = sf.read(path, dtype='float32', always_2d=False)
    except RuntimeError as e:
        raise CorruptHeader(f"Cannot read samples of {path}: {str(e)}")

    logging.info(f"Read {len(samples)} samples at {rate} Hz from {path}")
    return AudioBuffer(samples, rate)


def write_wav(path: str, buf: AudioBuffer, subtype: str = 'FLOAT') -> None:
    """
    Write a mono WAV file atomically

    Args:
        path: Destination path
        buf: Audio to write
        subtype: 'FLOAT' (bit-exact) or 'PCM_16' (scaled by 32768, saturated)
    """
    if subtype not in SUPPORTED_SUBTYPES:
        raise UnsupportedFormat(f"Cannot write subtype {subtype}")

    if subtype == 'PCM_16':
        data = np.clip(np.round(buf.samples.astype(np.float64) * 32768.0), -32768, 32767).astype(np.int16)
    else:
        data = buf.samples

    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp_path = tempfile.mkstemp(suffix='.wav', dir=directory)
    os.close(fd)
    try:
        sf.write(tmp_path, data, buf.sample_rate, subtype=subtype, format='WAV')
        os.replace(tmp_path, path)
    except Exception:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise
    logging.info(f"Wrote {len(data)} samples ({subtype}) to {path}")


def frames(x: np.ndarray, size: int) -> np.ndarray:
    """Split a signal into consecutive non-overlapping frames of `size` samples"""
    if len(x) % size != 0:
        raise FrameAlignment(f"Signal length {len(x)} is not a multiple of the frame size {size}")
    return np.asarray(x).reshape(-1, size)


def delay(x: np.ndarray, n: int) -> np.ndarray:
    """Delay by n samples, keeping the length (zeros shifted in)"""
    x = np.asarray(x)
    if n <= 0:
        return x.copy()
    out = np.zeros_like(x)
    out[n:] = x[:len(x) - n]
    return out


def snr_db(reference: np.ndarray, test: np.ndarray) -> float:
    """SNR of test against reference, capped at 120 dB"""
    reference = np.asarray(reference, dtype=np.float64)
    error = reference - np.asarray(test, dtype=np.float64)
    signal_energy = float(np.sum(reference ** 2))
    error_energy = float(np.sum(error ** 2))
    if error_energy == 0.0:
        return SNR_CAP_DB
    if signal_energy == 0.0:
        return -SNR_CAP_DB
    return float(min(SNR_CAP_DB, 10.0 * np.log10(signal_energy / error_energy)))


def find_lag(reference: np.ndarray, test: np.ndarray, max_lag: int) -> int:
    """Integer lag in [0, max_lag] maximizing the cross-correlation of test against reference"""
    reference = np.asarray(reference, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    n = min(len(reference), len(test))
    best_lag, best_value = 0, -np.inf
    for lag in range(0, min(max_lag, n - 1) + 1):
        value = float(np.dot(reference[:n - lag], test[lag:n]))
        if value > best_value:
            best_lag, best_value = lag, value
    return best_lag


def align_and_snr(ref: AudioBuffer, test: AudioBuffer, max_lag: int) -> MetricReport:
    """
    Align test to ref and measure waveform quality

    Args:
        ref: Reference signal
        test: Signal under test (assumed to lag the reference)
        max_lag: Largest lag searched, in samples

    Returns:
        MetricReport with SNR, per-PQMF-band SNR, spectral losses and the lag
    """
    if ref.sample_rate != test.sample_rate:
        raise RateMismatch(f"Reference is {ref.sample_rate} Hz but test is {test.sample_rate} Hz")
    if len(ref) == 0 or len(test) == 0:
        raise EmptySignal("Cannot compare empty signals")

    # local imports: pqmf and adversary both build on this module
    import pqmf
    from adversary import loss_mag, loss_sc, stft_magnitude

    lag = find_lag(ref.samples, test.samples, max_lag)
    n = min(len(ref), len(test) - lag)
    aligned_ref = ref.samples[:n]
    aligned_test = test.samples[lag:lag + n]

    report = MetricReport(snr_db=snr_db(aligned_ref, aligned_test), delay_samples=lag)

    num_bands = ref.sample_rate // pqmf.SUBBAND_RATE
    usable = n - n % num_bands
    if usable >= num_bands:
        prototype = pqmf.default_prototype(num_bands)
        ref_bands = pqmf.analysis(AudioBuffer(aligned_ref[:usable], ref.sample_rate), prototype).data
        test_bands = pqmf.analysis(AudioBuffer(aligned_test[:usable], ref.sample_rate), prototype).data
        report.band_snr_db = [snr_db(ref_bands[k], test_bands[k]) for k in range(num_bands)]

    window = min(1024, 1 << int(np.floor(np.log2(max(n, 2)))))
    ref_spec = stft_magnitude(aligned_ref, window, window // 4)
    test_spec = stft_magnitude(aligned_test, window, window // 4)
    if float(np.sum(ref_spec.magnitude.data ** 2)) > 0.0:
        report.sc = float(loss_sc(ref_spec, test_spec).data)
    report.mag = float(loss_mag(ref_spec, test_spec).data)

    logging.info(f"Aligned at lag {lag}: SNR {report.snr_db:.2f} dB")
    return report
