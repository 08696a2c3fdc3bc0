"""
Side-info - guided-mode encoder and the .ubs bitstream

The encoder looks at the four high subbands (4-7) of the 8-band analysis of
the original 32 kHz signal. Every 20 ms it gathers a rolling window of
[20 history | 80 current | 20 look-ahead] samples per band (480 values),
runs pointwise 480->80, a GRU(80), pointwise 80->80, a linear 80->1 map and
the 16-level quantizer. One 4-bit code per frame is 200 bit/s.

.ubs file (little-endian): "UBS1" | u16 version | u16 frame_ms | u32 num_frames |
ceil(num_frames / 2) payload bytes, high nibble first.
"""

import os
import struct
import logging
import tempfile
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

import nnengine as nn
import pqmf
from audioio import AudioBuffer
from config import Config, DpcrnnConfig
from errors import BadMagic, CodeOutOfRange, FrameAlignment, IndexOutOfRange, LengthMismatch, RateMismatch
from layers import GRU, Linear, Module, Pointwise, StreamState
from pqmf import SubbandSignal

MAGIC = b'UBS1'
VERSION = 1
HEADER = struct.Struct('<4sHHI')
CODE_BITS = 4


@dataclass
class SideInfoBitstream:
    codes: List[int] = field(default_factory=list)
    frame_ms: int = Config.FRAME_MS
    version: int = VERSION

    @property
    def num_frames(self) -> int:
        return len(self.codes)

    @property
    def payload_bits(self) -> int:
        return CODE_BITS * len(self.codes)

    @property
    def bitrate(self) -> float:
        """Payload bits per second"""
        return CODE_BITS * 1000.0 / self.frame_ms


def rolling_window(bands: SubbandSignal, frame_index: int, cfg: DpcrnnConfig = DpcrnnConfig()) -> np.ndarray:
    """
    Encoder input of one frame

    Element 0 is the oldest history sample of the first band. History before
    the stream start and look-ahead past its end are zeros.

    Raises:
        IndexOutOfRange: frame_index outside the signal
    """
    frames = bands.steps // cfg.current
    if frame_index < 0 or frame_index >= frames:
        raise IndexOutOfRange(f"Frame {frame_index} outside 0..{frames - 1}")

    padded = np.pad(bands.data, ((0, 0), (cfg.history, cfg.lookahead)))
    start = frame_index * cfg.current
    span = cfg.history + cfg.current + cfg.lookahead
    return padded[:, start:start + span].reshape(-1).astype(np.float32)


def rolling_windows(bands: SubbandSignal, cfg: DpcrnnConfig = DpcrnnConfig()) -> np.ndarray:
    """in_dim x frames matrix of every frame's rolling window"""
    frames = bands.steps // cfg.current
    if frames == 0:
        return np.zeros((cfg.in_dim, 0), dtype=np.float32)
    return np.stack([rolling_window(bands, i, cfg) for i in range(frames)], axis=1)


def high_bands(x_swb: AudioBuffer, cfg: DpcrnnConfig = DpcrnnConfig(),
               prototype: Optional[pqmf.PrototypeFilter] = None) -> SubbandSignal:
    if x_swb.sample_rate != Config.SWB_RATE:
        raise RateMismatch(f"Side-info encoding needs {Config.SWB_RATE} Hz input, got {x_swb.sample_rate} Hz")
    if len(x_swb) % Config.SWB_FRAME != 0:
        raise FrameAlignment(f"Input length {len(x_swb)} is not a multiple of {Config.SWB_FRAME} samples")
    prototype = prototype or pqmf.default_prototype(8)
    sb = pqmf.analysis(x_swb, prototype)
    return SubbandSignal(len(cfg.high_bands), sb.data[list(cfg.high_bands)])


class SideInfoEncoder(Module):
    def __init__(self, cfg: DpcrnnConfig = DpcrnnConfig()):
        self.cfg = cfg
        self.in_proj = Pointwise('sideinfo.in_proj', cfg.in_dim, cfg.hidden)
        self.gru = GRU('sideinfo.gru', cfg.hidden, cfg.hidden)
        self.out_proj = Pointwise('sideinfo.out_proj', cfg.hidden, cfg.latent)
        self.project = Linear('sideinfo.project', cfg.latent, 1)

    def latent(self, windows: nn.Tensor, state: Optional[StreamState] = None) -> nn.Tensor:
        """in_dim x F windows -> 1 x F pre-quantization values"""
        h = self.gru(self.in_proj(windows), state)
        return self.project(nn.tanh(self.out_proj(h)))

    def encode_tensor(self, windows: nn.Tensor, state: Optional[StreamState] = None) -> Tuple[np.ndarray, nn.Tensor]:
        """Trainable path: (codes, dequantized 1 x F) with the straight-through gradient"""
        return nn.quantize_st(self.latent(nn.as_tensor(windows), state), self.cfg.levels)

    def encode_frame(self, window: np.ndarray, state: StreamState) -> int:
        with nn.no_grad():
            codes, _ = self.encode_tensor(nn.Tensor(np.asarray(window).reshape(-1, 1)), state)
        return int(codes.reshape(-1)[0])

    def flops(self, frame_rate: float) -> float:
        total = self.in_proj.spec.flops(frame_rate) + self.gru.spec.flops(frame_rate)
        total += self.out_proj.spec.flops(frame_rate) + self.cfg.latent * frame_rate
        total += self.project.spec.flops(frame_rate)
        # tanh bound, scale and rounding
        total += 4 * frame_rate
        return float(total)


class EncoderStream:
    """One stream of frame-by-frame encoding"""

    def __init__(self, encoder: SideInfoEncoder):
        self.encoder = encoder
        self.reset()

    def reset(self):
        self.state = self.encoder.new_state()

    def encode_frame(self, window: np.ndarray) -> int:
        return self.encoder.encode_frame(window, self.state)


def encode(x_swb: AudioBuffer, encoder: SideInfoEncoder,
           prototype: Optional[pqmf.PrototypeFilter] = None) -> SideInfoBitstream:
    """
    One 4-bit code per 20 ms frame of a 32 kHz signal

    Raises:
        RateMismatch, FrameAlignment
    """
    bands = high_bands(x_swb, encoder.cfg, prototype)
    windows = rolling_windows(bands, encoder.cfg)
    if windows.shape[1] == 0:
        return SideInfoBitstream([])
    with nn.no_grad():
        codes, _ = encoder.encode_tensor(nn.Tensor(windows))
    codes = [int(c) for c in codes.reshape(-1)]
    logging.info(f"Encoded {len(codes)} side-info frames ({len(set(codes))} distinct codes)")
    return SideInfoBitstream(codes)


def pack(codes: Sequence[int], frame_ms: int = Config.FRAME_MS) -> bytes:
    """Header plus nibble payload; an odd count leaves the final low nibble zero"""
    codes = np.asarray(list(codes), dtype=np.int64)
    if codes.size and (codes.min() < 0 or codes.max() > 15):
        bad = int(codes[(codes < 0) | (codes > 15)][0])
        raise CodeOutOfRange(f"Code {bad} does not fit in {CODE_BITS} bits")

    padded = np.concatenate([codes, np.zeros(codes.size % 2, dtype=np.int64)])
    payload = ((padded[0::2] << 4) | padded[1::2]).astype(np.uint8).tobytes()
    return HEADER.pack(MAGIC, VERSION, frame_ms, int(codes.size)) + payload


def unpack(data: bytes) -> List[int]:
    return parse(data).codes


def parse(data: bytes) -> SideInfoBitstream:
    """
    Parse a .ubs byte string

    Raises:
        BadMagic: wrong magic or version
        LengthMismatch: payload size disagrees with the header frame count
    """
    if len(data) < HEADER.size:
        if not data[:4] or MAGIC.startswith(data[:4]):
            raise LengthMismatch(f"Bitstream of {len(data)} bytes is shorter than its {HEADER.size}-byte header")
        raise BadMagic(f"Not a UBS1 bitstream (magic {data[:4]!r})")
    magic, version, frame_ms, num_frames = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagic(f"Not a UBS1 bitstream (magic {magic!r})")
    if version != VERSION:
        raise BadMagic(f"Unsupported bitstream version {version}")

    payload = np.frombuffer(data, dtype=np.uint8, offset=HEADER.size)
    expected = (num_frames + 1) // 2
    if payload.size != expected:
        raise LengthMismatch(f"Header says {num_frames} frames ({expected} bytes) but the payload has {payload.size} bytes")

    codes = np.empty(2 * payload.size, dtype=np.int64)
    codes[0::2] = payload >> 4
    codes[1::2] = payload & 0x0F
    return SideInfoBitstream([int(c) for c in codes[:num_frames]], frame_ms, version)


def write_bitstream(path: str, stream: SideInfoBitstream):
    data = pack(stream.codes, stream.frame_ms)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp_path = tempfile.mkstemp(suffix='.ubs', dir=directory)
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(data)
        os.replace(tmp_path, path)
    except Exception:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise
    logging.info(f"Wrote {stream.num_frames} codes ({len(data)} bytes) to {path}")


def read_bitstream(path: str) -> SideInfoBitstream:
    with open(path, 'rb') as f:
        return parse(f.read())
