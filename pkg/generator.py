"""
Generator - the bandwidth extension network and the extend pipeline

    16 kHz input -> 4 low subbands (2 kHz each, 4 kHz subband rate)
                 -> pre-conv -> 6 downsample blocks -> 6 upsample blocks -> post-conv
                 -> 4 generated high subbands
    coded band 3 + generated band 4 -> overlap compensator
    8 subbands -> 8-band PQMF synthesis -> 32 kHz output

Each downsample block hands a (gamma, beta) pair to its mirrored upsample
block. The conditioning vector (log-mel in blind mode, the expanded side-info
scalar in guided mode) enters every downsample block at frame rate.
"""

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

import conditioning
import nnengine as nn
import pqmf
from audioio import AudioBuffer
from config import Config, ModelConfig, as_fraction
from errors import FrameAlignment, FrameCountMismatch, RateMismatch, ShapeMismatch, UninitializedState
from layers import (ChannelNorm, CausalConv1d, DepthwiseConv1d, DSConv1d, Gated, Interp, Linear, Module,
                    Pointwise, StreamState, Tade, count_params, shape_table)
from pqmf import PqmfState, SubbandSignal
from sideinfo import SideInfoEncoder
from weight_store import WeightStore, validate

GENERATED_BANDS = 4


class DownBlock(Module):
    """
    norm -> DSConv(C_prev, 2C) = a -> gate -> DSConv(C, 2C) -> interp 1/f -> DSConv(2C, C)

    The conditioning is projected to 2C at frame rate, repeated to the block
    rate and filtered by a causal depthwise convolution. (a + conditioning),
    resampled to the block output rate, yields gamma and beta.
    """

    def __init__(self, index: int, in_channels: int, channels: int, factor: Fraction, cond_steps: int,
                 cond_dim: int, kernel_size: int):
        prefix = f"down{index}"
        self.factor = factor
        self.norm = ChannelNorm(f"{prefix}.norm", in_channels)
        self.in_conv = DSConv1d(f"{prefix}.in_conv", in_channels, 2 * channels, kernel_size)
        self.cond_proj = Pointwise(f"{prefix}.cond_proj", cond_dim, 2 * channels)
        self.cond_up = Interp(f"{prefix}.cond_up", 2 * channels, Fraction(cond_steps), mode='nearest')
        self.cond_conv = DepthwiseConv1d(f"{prefix}.cond_conv", 2 * channels, kernel_size)
        self.gate = Gated(f"{prefix}.gate", channels)
        self.conv_a = DSConv1d(f"{prefix}.conv_a", channels, 2 * channels, kernel_size)
        self.down = Interp(f"{prefix}.down", 2 * channels, 1 / factor)
        self.conv_b = DSConv1d(f"{prefix}.conv_b", 2 * channels, channels, kernel_size)
        self.mod_down = Interp(f"{prefix}.mod_down", 2 * channels, 1 / factor)
        self.gamma = DSConv1d(f"{prefix}.gamma", 2 * channels, channels, kernel_size)
        self.beta = DSConv1d(f"{prefix}.beta", 2 * channels, channels, kernel_size)

    def __call__(self, x: nn.Tensor, cond: nn.Tensor, state: Optional[StreamState] = None):
        a = self.in_conv(self.norm(x), state)
        c = self.cond_conv(self.cond_up(self.cond_proj(cond)), state)
        h = self.conv_b(self.down(self.conv_a(self.gate(a), state), state), state)
        m = self.mod_down(a + c, state)
        return h, self.gamma(m, state), self.beta(m, state)

    def flops(self, in_rate: float, frame_rate: float) -> float:
        out_rate = in_rate / self.factor
        total = self.norm.spec.flops(in_rate) + self.in_conv.spec.flops(in_rate)
        total += self.cond_proj.spec.flops(frame_rate) + self.cond_conv.spec.flops(in_rate)
        total += self.gate.spec.flops(in_rate) + self.conv_a.spec.flops(in_rate)
        total += self.down.spec.flops(in_rate) + self.conv_b.spec.flops(out_rate)
        # a + conditioning
        total += self.cond_conv.spec.out_channels * in_rate
        total += self.mod_down.spec.flops(in_rate)
        total += self.gamma.spec.flops(out_rate) + self.beta.spec.flops(out_rate)
        return float(total)


class UpBlock(Module):
    """
    TADE(gamma, beta) -> 2 x [norm -> DSConv(C, 2C) -> gate -> DSConv(C, C)] + identity
    -> DSConv(C, C_out) -> causal linear upsampling by f
    """

    def __init__(self, index: int, channels: int, out_channels: int, factor: Fraction, kernel_size: int,
                 rounds: int = 2):
        prefix = f"up{index}"
        self.factor = factor
        self.tade = Tade(f"{prefix}.tade", channels)
        self.norms = [ChannelNorm(f"{prefix}.norm{r}", channels) for r in range(rounds)]
        self.expands = [DSConv1d(f"{prefix}.expand{r}", channels, 2 * channels, kernel_size) for r in range(rounds)]
        self.gates = [Gated(f"{prefix}.gate{r}", channels) for r in range(rounds)]
        self.projects = [DSConv1d(f"{prefix}.project{r}", channels, channels, kernel_size) for r in range(rounds)]
        self.out_conv = DSConv1d(f"{prefix}.out_conv", channels, out_channels, kernel_size)
        self.up = Interp(f"{prefix}.up", out_channels, factor)

    def __call__(self, x: nn.Tensor, gamma: nn.Tensor, beta: nn.Tensor, state: Optional[StreamState] = None):
        h = self.tade(x, gamma, beta)
        r = h
        for norm, expand, gate, project in zip(self.norms, self.expands, self.gates, self.projects):
            r = project(gate(expand(norm(r), state)), state)
        return self.up(self.out_conv(h + r, state), state)

    def flops(self, in_rate: float) -> float:
        total = self.tade.spec.flops(in_rate)
        for norm, expand, gate, project in zip(self.norms, self.expands, self.gates, self.projects):
            total += norm.spec.flops(in_rate) + expand.spec.flops(in_rate)
            total += gate.spec.flops(in_rate) + project.spec.flops(in_rate)
        # residual
        total += self.tade.spec.in_channels * in_rate
        total += self.out_conv.spec.flops(in_rate) + self.up.spec.flops(in_rate)
        return float(total)


class OverlapCompensator(Module):
    """Causal conv 2->C (tanh), conv C->2 (linear), plus identity on both channels"""

    def __init__(self, channels: int = 16, kernel_size: int = 7):
        self.conv1 = CausalConv1d('compensator.conv1', 2, channels, kernel_size)
        self.conv2 = CausalConv1d('compensator.conv2', channels, 2, kernel_size)

    def __call__(self, pair: nn.Tensor, state: Optional[StreamState] = None) -> nn.Tensor:
        return pair + self.conv2(nn.tanh(self.conv1(pair, state)), state)

    def flops(self, rate: float) -> float:
        hidden = self.conv1.spec.out_channels
        return float(self.conv1.spec.flops(rate) + hidden * rate + self.conv2.spec.flops(rate) + 2 * rate)


def overlap_compensate(coded_top: nn.Tensor, gen_bottom: nn.Tensor, comp: OverlapCompensator,
                       state: Optional[StreamState] = None) -> Tuple[nn.Tensor, nn.Tensor]:
    """Adjust (coded band 3, generated band 4); both 1 x T"""
    coded_top, gen_bottom = nn.as_tensor(coded_top), nn.as_tensor(gen_bottom)
    if coded_top.shape != gen_bottom.shape or coded_top.ndim != 2 or coded_top.shape[0] != 1:
        raise ShapeMismatch(f"Overlap compensation needs two 1 x T inputs, got {coded_top.shape} and {gen_bottom.shape}")
    adjusted = comp(nn.concat([coded_top, gen_bottom], axis=0), state)
    return adjusted[0:1], adjusted[1:2]


def expand_sideinfo(dequant, layer: Linear) -> nn.Tensor:
    """
    Map dequantized side-info to conditioning vectors

    Args:
        dequant: one value per frame (scalar, F values, or a 1 x F tensor)
        layer: the learned 1 -> cond_dim affine map

    Returns:
        cond_dim vector for a scalar, else cond_dim x F
    """
    dequant = nn.as_tensor(dequant)
    if dequant.ndim == 0:
        return layer(dequant.reshape(1))
    if dequant.ndim == 1:
        dequant = dequant.reshape(1, -1)
    return layer(dequant)


class Generator(Module):
    def __init__(self, config: ModelConfig):
        g = config.generator
        self.config = config
        self.mode = config.mode
        self.pre_conv = DSConv1d('pre_conv', g.in_bands, g.pre_channels, g.kernel_size)

        channels = [g.pre_channels] + list(g.down_channels)
        factors = [as_fraction(f) for f in g.down_factors]
        self.down = [
            DownBlock(i, channels[i], channels[i + 1], factors[i], g.cond_up_factors[i], g.cond_dim, g.kernel_size)
            for i in range(len(factors))
        ]
        self.up = [
            UpBlock(i, channels[i + 1], channels[i], factors[i], g.kernel_size)
            for i in reversed(range(len(factors)))
        ]
        self.post_conv = DSConv1d('post_conv', g.pre_channels, GENERATED_BANDS, g.kernel_size)
        self.compensator = OverlapCompensator(g.compensator_channels, g.kernel_size)
        if self.mode == 'guided':
            self.encoder = SideInfoEncoder(config.dpcrnn)
            self.expand = Linear('sideinfo.expand', 1, g.cond_dim)

    @classmethod
    def init_weights(cls, config: ModelConfig, seed: int = 0, zero_final: bool = False) -> 'Generator':
        """
        Randomly initialized model

        Args:
            config: Architecture
            seed: RNG seed
            zero_final: zero the post-conv and the compensator correction, so
                nothing is generated and the compensator is the identity
        """
        model = cls(config)
        model.init_params(np.random.default_rng(seed))
        if zero_final:
            for tensor in list(model.post_conv.params.values()) + list(model.compensator.conv2.params.values()):
                tensor.data = np.zeros_like(tensor.data)
        return model

    @property
    def prototype(self) -> pqmf.PrototypeFilter:
        return synthesis_prototype(self.config)

    def to_store(self) -> WeightStore:
        return WeightStore(self.config, {name: t.data.copy() for name, t in self.named_parameters()})

    def run(self, sb_in: nn.Tensor, cond: nn.Tensor, state: Optional[StreamState] = None) -> Tuple[nn.Tensor, nn.Tensor]:
        """
        Network body on in_bands x T subbands with cond_dim x F conditioning

        Returns:
            (generated in_bands x T, bottleneck activation)
        """
        g = self.config.generator
        sb_in, cond = nn.as_tensor(sb_in), nn.as_tensor(cond)
        if sb_in.ndim != 2 or sb_in.shape[0] != g.in_bands:
            raise ShapeMismatch(f"Generator input must be {g.in_bands} x T, got {sb_in.shape}")
        if cond.ndim != 2 or cond.shape[0] != g.cond_dim or cond.shape[1] * g.frame_subband_steps != sb_in.shape[1]:
            raise ShapeMismatch(f"Conditioning {cond.shape} does not match {sb_in.shape[1]} subband steps")

        x = self.pre_conv(sb_in, state)
        modulation = []
        for block in self.down:
            x, gamma, beta = block(x, cond, state)
            modulation.append((gamma, beta))
        bottleneck = x
        for block, (gamma, beta) in zip(self.up, reversed(modulation)):
            x = block(x, gamma, beta, state)
        return self.post_conv(x, state), bottleneck

    def forward(self, sb_in: nn.Tensor, cond: nn.Tensor) -> nn.Tensor:
        """Batch (trainable) pass over all frames from zero history"""
        return self.run(sb_in, cond)[0]

    def forward_frame(self, sb_in: SubbandSignal, cond, state: StreamState) -> SubbandSignal:
        """
        One 20 ms frame: 4 x 80 low subbands and a cond_dim vector -> 4 x 80 generated subbands

        Raises:
            ShapeMismatch, UninitializedState
        """
        if state is None:
            raise UninitializedState("forward_frame needs a stream state; use Generator.new_state()")
        g = self.config.generator
        if sb_in.data.shape != (g.in_bands, g.frame_subband_steps):
            raise ShapeMismatch(f"Frame must be {g.in_bands} x {g.frame_subband_steps}, got {sb_in.data.shape}")
        cond = nn.as_tensor(cond)
        if cond.shape != (g.cond_dim,):
            raise ShapeMismatch(f"Conditioning must hold {g.cond_dim} values, got {cond.shape}")
        generated, _ = self.run(nn.Tensor(sb_in.data), cond.reshape(g.cond_dim, 1), state)
        return SubbandSignal(GENERATED_BANDS, generated.data)

    def assemble(self, sb_in: nn.Tensor, generated: nn.Tensor, state: Optional[StreamState] = None) -> nn.Tensor:
        """Eight synthesis bands: coded 0-2, compensated (3, 4), generated 5-7"""
        sb_in, generated = nn.as_tensor(sb_in), nn.as_tensor(generated)
        top, bottom = overlap_compensate(sb_in[3:4], generated[0:1], self.compensator, state)
        return nn.concat([sb_in[0:3], top, bottom, generated[1:]], axis=0)

    def conditioning(self, x_wb: AudioBuffer, codes: Optional[Sequence[int]] = None) -> np.ndarray:
        """cond_dim x F conditioning matrix: log-mel (blind) or expanded side-info (guided)"""
        frames = len(x_wb) // self.config.mel.hop
        if self.mode == 'blind':
            return conditioning.mel_matrix(x_wb, self.config.mel).T.copy()
        if codes is None:
            raise FrameCountMismatch("Guided extension needs one side-info code per frame")
        if len(codes) != frames:
            raise FrameCountMismatch(f"Bitstream has {len(codes)} frames but the audio has {frames}")
        with nn.no_grad():
            dequant = nn.dequantize(np.asarray(codes), self.config.dpcrnn.levels)
            return expand_sideinfo(dequant, self.expand).data.copy()


@lru_cache(maxsize=8)
def _prototype(taps_per_band: int, beta: float, cutoff: Optional[float]) -> pqmf.PrototypeFilter:
    if cutoff is not None:
        return pqmf.prototype_from_cutoff(8, taps_per_band, cutoff, beta)
    return pqmf.design_prototype(8, taps_per_band, None, beta)


def synthesis_prototype(config: ModelConfig) -> pqmf.PrototypeFilter:
    return _prototype(config.pqmf.taps_per_band, config.pqmf.window_beta, config.pqmf.cutoff_8)


@lru_cache(maxsize=4)
def _shape_table(config_json: str):
    return shape_table(Generator(ModelConfig.from_json(config_json)).specs())


def expected_shape_table(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    return dict(_shape_table(config.model_dump_json()))


def build(config: ModelConfig, weights: WeightStore) -> Generator:
    """
    Generator from a weight store

    Raises:
        ShapeTableMismatch: a tensor is missing, unknown or misshapen
    """
    validate(weights, expected_shape_table(config))
    model = Generator(config)
    for name, tensor in model.named_parameters():
        tensor.data = np.array(weights.entries[name], dtype=np.float32)
    logging.info(f"Built {config.mode} generator with {count_params(model.specs())} parameters")
    return model


# complexity

def param_breakdown(config: ModelConfig) -> Dict[str, int]:
    """Parameters per top-level block; sums to count_params"""
    model = Generator(config)
    groups: Dict[str, int] = {}
    for spec in model.specs():
        key = spec.name.split('.')[0]
        groups[key] = groups.get(key, 0) + spec.param_count()
    return groups


def count_model_params(config: ModelConfig) -> int:
    return sum(param_breakdown(config).values())


def flop_breakdown(config: ModelConfig) -> Dict[str, float]:
    """
    FLOPs per second of extension, per stage

    MAC = 2 FLOPs; bias, activation and normalization cost 1 per scalar op.
    Features, PQMF filtering and (guided) the side-info encoder are included.
    """
    model = Generator(config)
    g = config.generator
    frame_rate = 1000 / config.mel.frame_ms
    rate = g.frame_subband_steps * frame_rate
    p8 = synthesis_prototype(config)

    breakdown: Dict[str, float] = {}
    if model.mode == 'blind':
        breakdown['features'] = conditioning.flops_per_second(config.mel)
    else:
        breakdown['sideinfo_analysis'] = pqmf.analysis_flops_per_second(p8, len(config.dpcrnn.high_bands))
        breakdown['sideinfo_encoder'] = model.encoder.flops(frame_rate)
        breakdown['sideinfo_expand'] = model.expand.spec.flops(frame_rate)
    breakdown['pqmf_analysis'] = pqmf.analysis_flops_per_second(p8, g.in_bands)
    breakdown['pre_conv'] = model.pre_conv.spec.flops(rate)
    for i, block in enumerate(model.down):
        breakdown[f'down{i}'] = block.flops(rate, frame_rate)
        rate = rate / block.factor
    for block in model.up:
        breakdown[block.tade.name.split('.')[0]] = block.flops(rate)
        rate = rate * block.factor
    breakdown['post_conv'] = model.post_conv.spec.flops(rate)
    breakdown['compensator'] = model.compensator.flops(rate)
    breakdown['pqmf_synthesis'] = pqmf.synthesis_flops_per_second(p8)
    return {k: float(v) for k, v in breakdown.items()}


def count_flops_per_second(config: ModelConfig) -> float:
    return float(sum(flop_breakdown(config).values()))


# extension

@dataclass
class ExtensionResult:
    audio: AudioBuffer
    delay_samples: int
    lookahead_samples: int
    codes: List[int] = field(default_factory=list)


def _check_input(x_wb: AudioBuffer, config: ModelConfig):
    if x_wb.sample_rate != Config.WB_RATE:
        raise RateMismatch(f"Extension input must be {Config.WB_RATE} Hz, got {x_wb.sample_rate} Hz")
    if len(x_wb) % config.mel.hop != 0:
        raise FrameAlignment(f"Input length {len(x_wb)} is not a multiple of {config.mel.hop} samples")


def _flush_condition(cond: np.ndarray) -> np.ndarray:
    # the extra frame that drains the synthesis delay reuses the last conditioning
    if cond.shape[1] == 0:
        return np.zeros((cond.shape[0], 1), dtype=np.float32)
    return cond[:, -1:]


def extend(x_wb: AudioBuffer, model: Generator, codes: Optional[Sequence[int]] = None,
           compensate_delay: bool = False) -> ExtensionResult:
    """
    Extend a 16 kHz signal to 32 kHz (batch)

    Args:
        x_wb: Coded wideband input, a whole number of 20 ms frames
        model: Built generator
        codes: One side-info code per frame (guided mode)
        compensate_delay: drop the leading filter delay so out[2n] ~ in[n]

    Returns:
        ExtensionResult; without compensation the audio holds
        2 * len(x_wb) + delay_samples samples and out[2n + delay] ~ in[n]
    """
    config = model.config
    _check_input(x_wb, config)
    p8 = model.prototype
    cond = model.conditioning(x_wb, codes)
    hop = config.mel.hop

    with nn.no_grad():
        padded = np.concatenate([x_wb.samples, np.zeros(hop, dtype=np.float32)])
        sb = pqmf.wideband_analysis_step(padded, p8, PqmfState.zeros(p8))
        full_cond = np.concatenate([cond, _flush_condition(cond)], axis=1)
        generated = model.forward(nn.Tensor(sb.data), nn.Tensor(full_cond))
        bands = model.assemble(nn.Tensor(sb.data), generated)
        out = pqmf.synthesis(SubbandSignal(8, bands.data), p8).samples

    out = out[:2 * len(x_wb) + p8.delay]
    if compensate_delay:
        out = out[p8.delay:]
    logging.info(f"Extended {len(x_wb) // hop} frames ({config.mode})")
    return ExtensionResult(
        audio=AudioBuffer(out, Config.SWB_RATE),
        delay_samples=p8.delay,
        lookahead_samples=config.mel.lookahead,
        codes=list(codes) if codes is not None else [],
    )


class StreamingExtender:
    """
    Frame-by-frame extension with one stream's state

    push() takes 320-sample hops and returns the 640 output samples of every
    frame whose conditioning is complete (blind frames wait for their 5 ms
    look-ahead). flush() finishes the stream and returns the remaining
    samples, including the filter delay tail.
    """

    def __init__(self, model: Generator, codes: Optional[Sequence[int]] = None):
        self.model = model
        self.config = model.config
        self.codes = list(codes) if codes is not None else None
        if model.mode == 'guided' and self.codes is None:
            raise FrameCountMismatch("Guided extension needs one side-info code per frame")
        self.p8 = model.prototype
        self.state = model.new_state()
        self.analysis_state = PqmfState.zeros(self.p8)
        self.synthesis_state = PqmfState.zeros(self.p8)
        self.mel = conditioning.MelStream(self.config.mel) if model.mode == 'blind' else None
        self.pending: List[np.ndarray] = []
        self.frames_in = 0
        self.frames_out = 0
        self.last_cond = np.zeros(self.config.generator.cond_dim, dtype=np.float32)

    def _guided_cond(self, index: int) -> np.ndarray:
        if index >= len(self.codes):
            raise FrameCountMismatch(f"Bitstream has {len(self.codes)} frames but the audio has more")
        with nn.no_grad():
            dequant = nn.dequantize(self.codes[index], self.config.dpcrnn.levels)
            return expand_sideinfo(float(dequant), self.model.expand).data.copy()

    def _process(self, hop: np.ndarray, cond: np.ndarray) -> np.ndarray:
        with nn.no_grad():
            sb = pqmf.wideband_analysis_step(hop, self.p8, self.analysis_state)
            generated = self.model.forward_frame(sb, cond, self.state)
            bands = self.model.assemble(nn.Tensor(sb.data), nn.Tensor(generated.data), self.state)
            out = pqmf.synthesis_step(SubbandSignal(8, bands.data), self.p8, self.synthesis_state)
        self.last_cond = np.asarray(cond, dtype=np.float32)
        self.frames_out += 1
        return out.samples

    def push(self, hop: np.ndarray) -> np.ndarray:
        hop = np.asarray(hop, dtype=np.float32)
        if len(hop) != self.config.mel.hop:
            raise FrameAlignment(f"Hops must hold {self.config.mel.hop} samples, got {len(hop)}")
        self.pending.append(hop)
        self.frames_in += 1
        if self.mel is not None:
            conds = self.mel.push(hop)
        else:
            conds = [self._guided_cond(self.frames_out)]
        return self._drain(conds)

    def _drain(self, conds) -> np.ndarray:
        parts = [self._process(self.pending.pop(0), cond) for cond in conds]
        if not parts:
            return np.zeros(0, dtype=np.float32)
        return np.concatenate(parts)

    def flush(self) -> np.ndarray:
        if self.codes is not None and self.frames_in != len(self.codes):
            raise FrameCountMismatch(f"Bitstream has {len(self.codes)} frames but the audio has {self.frames_in}")
        parts = [self._drain(self.mel.flush() if self.mel is not None else [])]
        tail = self._process(np.zeros(self.config.mel.hop, dtype=np.float32), self.last_cond)
        parts.append(tail[:self.p8.delay])
        return np.concatenate(parts)


def extend_streaming(x_wb: AudioBuffer, model: Generator, codes: Optional[Sequence[int]] = None) -> np.ndarray:
    """Raw extension output produced hop by hop"""
    _check_input(x_wb, model.config)
    extender = StreamingExtender(model, codes)
    hop = model.config.mel.hop
    parts = [extender.push(x_wb.samples[i:i + hop]) for i in range(0, len(x_wb), hop)]
    parts.append(extender.flush())
    return np.concatenate(parts)
