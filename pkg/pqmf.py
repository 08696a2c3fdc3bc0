"""
PQMF - pseudo-QMF prototype design and polyphase analysis/synthesis

Critically sampled cosine-modulated 4-band and 8-band banks. Subband sample m
of every band is taken at input index m*N + N - 1 and re-inserted at the same
index on synthesis, so analysis followed by synthesis reproduces the input
delayed by L - 1 samples.

Batch operations are the streaming operations run once on a fresh state, and
every output sample is accumulated in a fixed tap order, so streamed and batch
outputs are bit-identical.
"""

import logging
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy import optimize
from scipy import signal as sig

from audioio import AudioBuffer, snr_db
from config import ModelConfig, PqmfConfig
from errors import (BandCountMismatch, DesignFailure, FrameAlignment, RateMismatch, ShapeMismatch, ShapeTableMismatch,
                    UnsupportedBandCount)
from weight_store import WeightStore, read_weights, validate, write_weights

SUBBAND_RATE = 4000
SUPPORTED_BANDS = (4, 8)
DEFAULT_BETA = 9.0
FALLBACK_BETAS = (8.0, 10.0, 7.0, 11.0, 6.0, 12.0)
TARGET_SNR_DB = 60.0


@dataclass(frozen=True, eq=False)
class PrototypeFilter:
    num_bands: int
    taps: np.ndarray
    cutoff: float
    window_beta: float
    snr_db: float = float('nan')

    @property
    def length(self) -> int:
        return len(self.taps)

    @property
    def delay(self) -> int:
        return self.length - 1

    def _modulated(self, sign: float) -> np.ndarray:
        n = np.arange(self.length, dtype=np.float64)
        taps = self.taps.astype(np.float64)
        filters = np.zeros((self.num_bands, self.length), dtype=np.float64)
        for k in range(self.num_bands):
            phase = (2 * k + 1) * (np.pi / (2 * self.num_bands)) * (n - (self.length - 1) / 2)
            filters[k] = 2 * taps * np.cos(phase + sign * (-1) ** k * np.pi / 4)
        return filters.astype(np.float32)

    @cached_property
    def analysis_filters(self) -> np.ndarray:
        return self._modulated(+1.0)

    @cached_property
    def synthesis_filters(self) -> np.ndarray:
        return self._modulated(-1.0)


@dataclass(frozen=True)
class SubbandSignal:
    num_bands: int
    data: np.ndarray
    subband_rate: int = SUBBAND_RATE

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 2 or data.shape[0] != self.num_bands:
            raise ShapeMismatch(f"SubbandSignal expects {self.num_bands} rows, got shape {data.shape}")
        object.__setattr__(self, 'data', data)

    @property
    def steps(self) -> int:
        return self.data.shape[1]


@dataclass
class PqmfState:
    """Per-stream delay lines; single owner"""
    analysis_history: np.ndarray
    synthesis_history: np.ndarray

    @classmethod
    def zeros(cls, p: PrototypeFilter) -> 'PqmfState':
        return cls(
            analysis_history=np.zeros(p.length - p.num_bands, dtype=np.float32),
            synthesis_history=np.zeros((p.num_bands, p.length // p.num_bands), dtype=np.float32),
        )

    def check(self, p: PrototypeFilter) -> None:
        if self.analysis_history.shape != (p.length - p.num_bands,) or \
                self.synthesis_history.shape != (p.num_bands, p.length // p.num_bands):
            raise ShapeMismatch("PqmfState was created for a different prototype")


def _prototype_taps(length: int, cutoff: float, beta: float) -> np.ndarray:
    # cutoff is relative to Nyquist, as firwin takes it
    return sig.firwin(length, cutoff, window=('kaiser', beta))


def _analyze(buf: np.ndarray, filters: np.ndarray, num_bands: int, steps: int) -> np.ndarray:
    length = filters.shape[1]
    out = np.zeros((filters.shape[0], steps), dtype=np.float32)
    if steps == 0:
        return out
    span = (steps - 1) * num_bands + 1
    for n in range(length):
        start = length - 1 - n
        out += filters[:, n:n + 1] * buf[start:start + span:num_bands][None, :]
    return out


def _synthesize(padded: np.ndarray, filters: np.ndarray, num_bands: int, steps: int) -> np.ndarray:
    length = filters.shape[1]
    history = length // num_bands
    out = np.zeros(steps * num_bands, dtype=np.float32)
    for r in range(num_bands):
        acc = np.zeros(steps, dtype=np.float32)
        for q in range(history + 1):
            idx = q * num_bands + r - num_bands + 1
            if idx < 0 or idx >= length:
                continue
            segment = padded[:, history - q:history - q + steps]
            for k in range(num_bands):
                acc += filters[k, idx] * segment[k]
        out[r::num_bands] = acc * np.float32(num_bands)
    return out


def analysis_step(frame: AudioBuffer, p: PrototypeFilter, state: PqmfState,
                  bands: Optional[Sequence[int]] = None) -> SubbandSignal:
    """
    Analyse one frame of a stream

    Args:
        frame: Next block of the stream (length a multiple of num_bands)
        p: Prototype filter
        state: Stream state, updated in place
        bands: Optional subset of band indices to compute

    Returns:
        SubbandSignal with len(frame)/num_bands steps per band
    """
    x = frame.samples
    if len(x) % p.num_bands != 0:
        raise FrameAlignment(f"Frame of {len(x)} samples is not a multiple of {p.num_bands} bands")
    state.check(p)

    filters = p.analysis_filters if bands is None else p.analysis_filters[list(bands)]
    buf = np.concatenate([state.analysis_history, x])
    steps = len(x) // p.num_bands
    data = _analyze(buf, filters, p.num_bands, steps)
    state.analysis_history = buf[len(buf) - (p.length - p.num_bands):].copy()
    return SubbandSignal(filters.shape[0], data)


def synthesis_step(sb: SubbandSignal, p: PrototypeFilter, state: PqmfState) -> AudioBuffer:
    """Synthesize one block of subband steps of a stream; state updated in place"""
    if sb.num_bands != p.num_bands:
        raise BandCountMismatch(f"{sb.num_bands} subbands given to a {p.num_bands}-band prototype")
    state.check(p)

    padded = np.concatenate([state.synthesis_history, sb.data], axis=1)
    out = _synthesize(padded, p.synthesis_filters, p.num_bands, sb.steps)
    state.synthesis_history = padded[:, padded.shape[1] - p.length // p.num_bands:].copy()
    return AudioBuffer(out, p.num_bands * SUBBAND_RATE)


def analysis(x: AudioBuffer, p: PrototypeFilter) -> SubbandSignal:
    """Batch analysis: num_bands rows of len(x)/num_bands critically sampled steps"""
    if x.sample_rate != p.num_bands * SUBBAND_RATE:
        raise RateMismatch(f"{p.num_bands}-band analysis needs {p.num_bands * SUBBAND_RATE} Hz, got {x.sample_rate} Hz")
    return analysis_step(x, p, PqmfState.zeros(p))


def synthesis(sb: SubbandSignal, p: PrototypeFilter) -> AudioBuffer:
    """Batch synthesis: output equals the analysed input delayed by L - 1 samples"""
    return synthesis_step(sb, p, PqmfState.zeros(p))


def reconstruction_snr(p: PrototypeFilter, seconds: float = 1.0, seed: int = 0) -> float:
    """SNR of analysis->synthesis on white noise against the input delayed by L - 1"""
    rate = p.num_bands * SUBBAND_RATE
    count = int(seconds * rate) // p.num_bands * p.num_bands
    noise = np.random.default_rng(seed).standard_normal(count).astype(np.float32) * np.float32(0.1)
    y = synthesis(analysis(AudioBuffer(noise, rate), p), p).samples
    return snr_db(noise[:count - p.delay], y[p.delay:])


def _calibrated_error(num_bands: int, length: int, cutoff: float, beta: float, noise: np.ndarray):
    taps = _prototype_taps(length, cutoff, beta)
    trial = PrototypeFilter(num_bands, taps.astype(np.float32), cutoff, beta)
    y = synthesis(analysis(AudioBuffer(noise, num_bands * SUBBAND_RATE), trial), trial).samples.astype(np.float64)
    reference = noise[:len(noise) - (length - 1)].astype(np.float64)
    y = y[length - 1:]
    gain = float(np.dot(reference, y) / np.dot(y, y))
    error = float(np.sum((reference - gain * y) ** 2)) / float(np.sum(reference ** 2))
    return taps, gain, error


def _search_cutoff(num_bands: int, length: int, beta: float, noise: np.ndarray) -> PrototypeFilter:
    low, high = 0.5 / (2 * num_bands), 1.5 / (2 * num_bands)
    result = optimize.minimize_scalar(
        lambda cutoff: _calibrated_error(num_bands, length, cutoff, beta, noise)[2],
        bounds=(low, high),
        method='bounded',
        options={'xatol': 1e-7},
    )
    cutoff = float(result.x)
    taps, gain, _ = _calibrated_error(num_bands, length, cutoff, beta, noise)
    prototype = PrototypeFilter(num_bands, (taps * np.sqrt(gain)).astype(np.float32), cutoff, beta)
    return PrototypeFilter(num_bands, prototype.taps, cutoff, beta, reconstruction_snr(prototype))


@lru_cache(maxsize=None)
def design_prototype(num_bands: int, taps_per_band: int = 16,
                     stopband_attenuation_db: Optional[float] = None,
                     window_beta: Optional[float] = None) -> PrototypeFilter:
    """
    Design a near-perfect-reconstruction PQMF prototype

    A Kaiser-windowed sinc whose cutoff is searched inside
    (0.5/(2N), 1.5/(2N)) of Nyquist for the smallest white-noise
    reconstruction error. The taps are scaled by the least-squares gain of
    the reconstruction so the bank has unit gain. The first Kaiser beta comes
    from the attenuation target, else window_beta, else 9.0; the remaining
    betas of the default grid are tried in turn until the bank reaches 60 dB.

    Args:
        num_bands: 4 or 8
        taps_per_band: prototype length divided by num_bands (>= 8)
        stopband_attenuation_db: sets the first Kaiser beta
        window_beta: first Kaiser beta when no attenuation is given

    Returns:
        PrototypeFilter with its measured reconstruction SNR
    """
    if num_bands not in SUPPORTED_BANDS:
        raise UnsupportedBandCount(f"Unsupported band count {num_bands}; expected one of {SUPPORTED_BANDS}")
    if taps_per_band < 8:
        raise DesignFailure(f"taps_per_band={taps_per_band} is too small to reach {TARGET_SNR_DB} dB")

    length = num_bands * taps_per_band
    rate = num_bands * SUBBAND_RATE
    noise = np.random.default_rng(1234).standard_normal(rate).astype(np.float32) * np.float32(0.1)

    if stopband_attenuation_db is not None:
        first = float(sig.kaiser_beta(stopband_attenuation_db))
    else:
        first = DEFAULT_BETA if window_beta is None else float(window_beta)
    betas = [first] + [b for b in (DEFAULT_BETA,) + FALLBACK_BETAS if b != first]

    best = None
    for beta in betas:
        candidate = _search_cutoff(num_bands, length, beta, noise)
        if best is None or candidate.snr_db > best.snr_db:
            best = candidate
        if best.snr_db >= TARGET_SNR_DB:
            break

    logging.info(f"Designed {num_bands}-band prototype: {length} taps, cutoff {best.cutoff:.6f}, "
                 f"beta {best.window_beta:.2f}, SNR {best.snr_db:.2f} dB")
    if best.snr_db < TARGET_SNR_DB:
        raise DesignFailure(
            f"{num_bands}-band prototype with {taps_per_band} taps/band reaches only {best.snr_db:.2f} dB; "
            f"increase taps_per_band")
    return best


def prototype_from_cutoff(num_bands: int, taps_per_band: int, cutoff: float, beta: float = DEFAULT_BETA) -> PrototypeFilter:
    """Rebuild a prototype from a stored cutoff without searching again"""
    if num_bands not in SUPPORTED_BANDS:
        raise UnsupportedBandCount(f"Unsupported band count {num_bands}; expected one of {SUPPORTED_BANDS}")
    rate = num_bands * SUBBAND_RATE
    noise = np.random.default_rng(1234).standard_normal(rate).astype(np.float32) * np.float32(0.1)
    taps, gain, _ = _calibrated_error(num_bands, num_bands * taps_per_band, cutoff, beta, noise)
    return PrototypeFilter(num_bands, (taps * np.sqrt(gain)).astype(np.float32), cutoff, beta)


def default_prototype(num_bands: int) -> PrototypeFilter:
    """The toolkit's default bank: 16 taps per band, beta 9.0"""
    return design_prototype(num_bands, 16, None)


def prototype_to_store(p: PrototypeFilter) -> WeightStore:
    """UBW1 container holding the taps and the design parameters [bands, cutoff, beta, snr]"""
    taps_per_band = p.length // p.num_bands
    pqmf_config = PqmfConfig(taps_per_band=taps_per_band, window_beta=p.window_beta,
                             cutoff_8=p.cutoff if p.num_bands == 8 else None)
    design = np.array([p.num_bands, p.cutoff, p.window_beta, p.snr_db], dtype=np.float32)
    return WeightStore(ModelConfig(pqmf=pqmf_config), {'pqmf.taps': p.taps.copy(), 'pqmf.design': design})


def prototype_from_store(store: WeightStore) -> PrototypeFilter:
    if 'pqmf.design' not in store.entries:
        raise ShapeTableMismatch("Weight file holds no PQMF prototype ('pqmf.design' missing)")
    design = store.entries['pqmf.design'].astype(np.float64).reshape(-1)
    if design.shape != (4,):
        raise ShapeTableMismatch(f"Tensor 'pqmf.design' has shape {design.shape}, expected (4,)")
    num_bands = int(round(design[0]))
    if num_bands not in SUPPORTED_BANDS:
        raise UnsupportedBandCount(f"Stored prototype has {num_bands} bands")
    validate(store, {'pqmf.taps': (num_bands * store.config.pqmf.taps_per_band,), 'pqmf.design': (4,)})
    cutoff = store.config.pqmf.cutoff_8 if num_bands == 8 else float(design[1])
    return PrototypeFilter(num_bands, store.entries['pqmf.taps'].astype(np.float32), cutoff,
                           store.config.pqmf.window_beta, float(design[3]))


def write_prototype(path: str, p: PrototypeFilter):
    write_weights(path, prototype_to_store(p))


def read_prototype(path: str) -> PrototypeFilter:
    return prototype_from_store(read_weights(path, expected=None))


def upsample_zero_stuff(x: np.ndarray) -> np.ndarray:
    """2x zero insertion with gain 2: x[n] lands on index 2n"""
    out = np.zeros(2 * len(x), dtype=np.float32)
    out[0::2] = np.float32(2.0) * np.asarray(x, dtype=np.float32)
    return out


def wideband_analysis_step(x_wb: np.ndarray, p8: PrototypeFilter, state: PqmfState) -> SubbandSignal:
    """
    Four 2 kHz subbands of a 16 kHz stream on the 8-band synthesis grid

    The wideband block is zero-stuffed to 32 kHz and analysed with the lower
    four filters of the 8-band bank, so the resulting subbands line up with
    the bank used to synthesize the super-wideband output.
    """
    if p8.num_bands != 8:
        raise BandCountMismatch("wideband analysis runs on the 8-band prototype")
    return analysis_step(AudioBuffer(upsample_zero_stuff(x_wb), 8 * SUBBAND_RATE), p8, state, bands=range(4))


def polyphase_synthesis_kernel(p: PrototypeFilter) -> np.ndarray:
    """
    Synthesis as one causal convolution over the subbands

    Returns W of shape N x N x (L/N + 1) such that a dense causal convolution
    of the N x T subbands with W gives an N x T matrix whose column j holds
    output samples j*N .. j*N + N - 1.
    """
    bands, length = p.num_bands, p.length
    history = length // bands
    kernel = np.zeros((bands, bands, history + 1), dtype=np.float32)
    for r in range(bands):
        for q in range(history + 1):
            idx = q * bands + r - bands + 1
            if 0 <= idx < length:
                kernel[r, :, history - q] = bands * p.synthesis_filters[:, idx]
    return kernel


def band_energies(sb: SubbandSignal) -> np.ndarray:
    """Fraction of total subband energy held by each band"""
    energy = np.sum(sb.data.astype(np.float64) ** 2, axis=1)
    total = float(np.sum(energy))
    return energy / total if total > 0 else energy


def synthesis_flops_per_second(p: PrototypeFilter) -> float:
    """MAC = 2 FLOPs: every output sample uses L/N taps in each of the N bands"""
    return 2.0 * p.num_bands * SUBBAND_RATE * p.length


def analysis_flops_per_second(p: PrototypeFilter, bands: int) -> float:
    return 2.0 * bands * SUBBAND_RATE * p.length
