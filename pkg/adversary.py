"""
Adversary - spectral losses, STFT discriminators, optimizers and the toy trainer

Generator loss: L_sc + L_mag + L_adv + 10 * L_feat, with least-squares GAN
losses over an ensemble of four STFT discriminators (windows 2048, 1024, 512,
256 at 75% overlap). The toy trainer overfits a single clip to check that the
whole training path works end to end.
"""

import os
import csv
import logging
import tempfile
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.signal import windows

import conditioning
import nnengine as nn
import pqmf
import sideinfo
from audioio import AudioBuffer, delay
from config import Config, DiscriminatorConfig, ModelConfig, TrainConfig
from errors import (ClipTooShort, FrameAlignment, NonFiniteLoss, RateMismatch, ShapeMismatch, WrongEnsembleSize,
                    ZeroReference)
from generator import Generator, expand_sideinfo
from layers import Conv2d, Module
from pqmf import PqmfState, SubbandSignal
from weight_store import WeightStore

ENSEMBLE_SIZE = 4


@dataclass
class Spectrogram:
    magnitude: nn.Tensor
    window_length: int
    hop_length: int

    @property
    def bins(self) -> int:
        return self.magnitude.shape[0]


@dataclass
class LossReport:
    sc: float = 0.0
    mag: float = 0.0
    adv: float = 0.0
    feat: float = 0.0
    disc: float = 0.0
    feat_weight: float = 10.0

    @property
    def weighted_total(self) -> float:
        return self.sc + self.mag + self.adv + self.feat_weight * self.feat


@lru_cache(maxsize=16)
def _dft_basis(window: int) -> Tuple[np.ndarray, np.ndarray]:
    n = np.arange(window)[:, None]
    k = np.arange(window // 2 + 1)[None, :]
    angle = 2 * np.pi * n * k / window
    taper = windows.hann(window, sym=False)[:, None]
    return taper * np.cos(angle), -taper * np.sin(angle)


def stft(x, window: int, hop: int) -> Tuple[nn.Tensor, nn.Tensor]:
    """
    Differentiable Hann-windowed STFT of a 1-D signal

    The signal is zero padded by window/2 on both sides before framing.

    Returns:
        (real, imag), each frames x (window/2 + 1)
    """
    x = nn.as_tensor(x)
    if x.ndim != 1:
        raise ShapeMismatch(f"STFT expects a 1-D signal, got {x.shape}")
    padded = nn.pad(x, window // 2, window // 2)
    frames = nn.frame_signal(padded, window, hop)
    cos_basis, sin_basis = _dft_basis(window)
    return frames @ nn.Tensor(cos_basis), frames @ nn.Tensor(sin_basis)


def stft_magnitude(x, window: int = 1024, hop: int = 256) -> Spectrogram:
    """|X| as bins x frames"""
    real, imag = stft(x, window, hop)
    return Spectrogram(nn.hypot(real, imag).T, window, hop)


def _magnitude(s: Union[Spectrogram, nn.Tensor, np.ndarray]) -> nn.Tensor:
    return s.magnitude if isinstance(s, Spectrogram) else nn.as_tensor(s)


def loss_sc(X, Xh) -> nn.Tensor:
    """Spectral convergence ||X| - |Xh||_F / ||X||_F"""
    X, Xh = _magnitude(X), _magnitude(Xh)
    if X.shape != Xh.shape:
        raise ShapeMismatch(f"Spectrogram shapes differ: {X.shape} vs {Xh.shape}")
    if not np.any(X.data):
        raise ZeroReference("Spectral convergence is undefined for an all-zero reference")
    return nn.norm(X - Xh) / nn.norm(X)


def loss_mag(X, Xh, floor: float = 1e-7) -> nn.Tensor:
    """Mean absolute difference of natural-log magnitudes, floored at `floor`"""
    X, Xh = _magnitude(X), _magnitude(Xh)
    if X.shape != Xh.shape:
        raise ShapeMismatch(f"Spectrogram shapes differ: {X.shape} vs {Xh.shape}")
    return nn.absolute(nn.log(nn.clamp_min(X, floor)) - nn.log(nn.clamp_min(Xh, floor))).mean()


def _check_ensemble(outputs: Sequence):
    if len(outputs) != ENSEMBLE_SIZE:
        raise WrongEnsembleSize(f"Expected {ENSEMBLE_SIZE} discriminator outputs, got {len(outputs)}")


def loss_adv_gen(disc_outputs: Sequence) -> nn.Tensor:
    """sum_k mean((D_k(G(x)) - 1)^2)"""
    _check_ensemble(disc_outputs)
    total = nn.Tensor(0.0)
    for output in disc_outputs:
        total = total + nn.square(nn.as_tensor(output) - 1).mean()
    return total


def loss_disc(real_outputs: Sequence, fake_outputs: Sequence) -> nn.Tensor:
    """sum_k [mean((D_k(x) - 1)^2) + mean(D_k(G(x))^2)]"""
    _check_ensemble(real_outputs)
    _check_ensemble(fake_outputs)
    total = nn.Tensor(0.0)
    for real, fake in zip(real_outputs, fake_outputs):
        total = total + nn.square(nn.as_tensor(real) - 1).mean() + nn.square(nn.as_tensor(fake)).mean()
    return total


def loss_feat(real_feats: Sequence[Sequence], fake_feats: Sequence[Sequence]) -> nn.Tensor:
    """Per discriminator: mean over layers of the mean absolute difference; summed over discriminators"""
    if len(real_feats) != len(fake_feats):
        raise ShapeMismatch(f"{len(real_feats)} real vs {len(fake_feats)} fake feature sets")
    total = nn.Tensor(0.0)
    for real_layers, fake_layers in zip(real_feats, fake_feats):
        if len(real_layers) != len(fake_layers):
            raise ShapeMismatch("Feature sets have different layer counts")
        if not real_layers:
            continue
        per_disc = nn.Tensor(0.0)
        for real, fake in zip(real_layers, fake_layers):
            real, fake = nn.as_tensor(real), nn.as_tensor(fake)
            if real.shape != fake.shape:
                raise ShapeMismatch(f"Feature shapes differ: {real.shape} vs {fake.shape}")
            per_disc = per_disc + nn.absolute(real - fake).mean()
        total = total + per_disc * (1.0 / len(real_layers))
    return total


class StftDiscriminator(Module):
    """
    Conv2d stack over the (real, imag) STFT, laid out channels x bins x frames

    The first layer keeps the resolution; the others halve the time axis.
    """

    def __init__(self, window: int, cfg: DiscriminatorConfig = DiscriminatorConfig()):
        self.window = window
        self.hop = int(window * cfg.hop_ratio)
        self.slope = cfg.slope
        prefix = f"disc{window}"
        self.convs = [
            Conv2d(f"{prefix}.conv{i}", 2 if i == 0 else cfg.channels, cfg.channels, cfg.kernel,
                   (1, 1) if i == 0 else cfg.stride)
            for i in range(cfg.num_layers)
        ]
        self.out = Conv2d(f"{prefix}.out", cfg.channels, 1, (3, 3))

    def __call__(self, x) -> Tuple[nn.Tensor, List[nn.Tensor]]:
        real, imag = stft(x, self.window, self.hop)
        h = nn.stack([real.T, imag.T], axis=0)
        features = []
        for conv in self.convs:
            h = nn.leaky_relu(conv(h), self.slope)
            features.append(h)
        return self.out(h), features


class DiscriminatorEnsemble(Module):
    def __init__(self, cfg: DiscriminatorConfig = DiscriminatorConfig()):
        if len(cfg.windows) != ENSEMBLE_SIZE:
            raise WrongEnsembleSize(f"Expected {ENSEMBLE_SIZE} windows, got {len(cfg.windows)}")
        self.members = [StftDiscriminator(w, cfg) for w in cfg.windows]

    def __call__(self, x) -> Tuple[List[nn.Tensor], List[List[nn.Tensor]]]:
        outputs, features = [], []
        for member in self.members:
            out, feats = member(x)
            outputs.append(out)
            features.append(feats)
        return outputs, features


# optimizers

@dataclass
class OptimizerState:
    lr: float
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)


def optimizer_step(params: List[np.ndarray], grads: List[Optional[np.ndarray]], state: OptimizerState,
                   variant: str = 'adamw') -> List[np.ndarray]:
    """
    One bias-corrected Adam update; 'adamw' decays weights decoupled from the gradient

    Returns:
        Updated parameter arrays (the inputs are not modified)
    """
    if variant not in ('adam', 'adamw'):
        raise ValueError(f"Unknown optimizer {variant}")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    beta1, beta2 = state.betas
    correction1 = 1 - beta1 ** state.step
    correction2 = 1 - beta2 ** state.step

    updated = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape or state.m[i].shape != p.shape:
            raise ShapeMismatch(f"Gradient {g.shape} does not match parameter {p.shape}")
        if variant == 'adam' and state.weight_decay:
            g = g + state.weight_decay * p
        state.m[i] = beta1 * state.m[i] + (1 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1 - beta2) * g * g
        m_hat = state.m[i] / correction1
        v_hat = state.v[i] / correction2
        new = p
        if variant == 'adamw' and state.weight_decay:
            new = new - state.lr * state.weight_decay * new
        new = new - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        updated.append(new.astype(p.dtype))
    return updated


class Adam:
    variant = 'adam'

    def __init__(self, params: List[nn.Tensor], lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = params
        self.state = OptimizerState(lr=lr, betas=tuple(betas), eps=eps, weight_decay=weight_decay)

    def step(self):
        updated = optimizer_step([p.data for p in self.params], [p.grad for p in self.params], self.state, self.variant)
        for p, value in zip(self.params, updated):
            p.data = value

    def zero_grad(self):
        for p in self.params:
            p.grad = None


class AdamW(Adam):
    variant = 'adamw'

    def __init__(self, params: List[nn.Tensor], lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.01):
        super().__init__(params, lr, betas, eps, weight_decay)


class LrSchedule:
    """Multiply the initial rate by `factor` once every `every` epochs"""

    def __init__(self, initial_lr: float, factor: float = 0.99, every: int = 5):
        self.initial_lr = initial_lr
        self.factor = factor
        self.every = every

    def lr_at(self, epoch: int) -> float:
        return self.initial_lr * self.factor ** (epoch // self.every)

    def apply(self, optimizer: Adam, epoch: int):
        optimizer.state.lr = self.lr_at(epoch)


# toy training

def synthesize(bands: nn.Tensor, p: pqmf.PrototypeFilter) -> nn.Tensor:
    """Differentiable N-band synthesis of N x T subbands to N*T samples"""
    out = nn.causal_conv1d(bands, pqmf.polyphase_synthesis_kernel(p))
    return out.T.reshape(-1)


def wideband_surrogate(clip: AudioBuffer, p8: pqmf.PrototypeFilter) -> AudioBuffer:
    """
    Ideal-codec stand-in: zero subbands 4-7, resynthesize, decimate by 2

    The synthesis delay is removed so sample n lines up with clip sample 2n.
    """
    sb = pqmf.analysis(clip, p8)
    data = sb.data.copy()
    data[4:] = 0
    low = pqmf.synthesis(SubbandSignal(8, data), p8).samples
    low = np.concatenate([low, np.zeros(p8.delay + 1, dtype=np.float32)])
    return AudioBuffer(low[p8.delay:p8.delay + len(clip):2], Config.WB_RATE)


@dataclass
class TrainResult:
    store: WeightStore
    trace: List[Tuple[int, float, float, float, float, float]] = field(default_factory=list)
    codes: List[int] = field(default_factory=list)


def _finite(value: float, step: int, what: str) -> float:
    if not np.isfinite(value):
        raise NonFiniteLoss(f"{what} became non-finite at step {step}")
    return value


def toy_train(clip: AudioBuffer, mode: str = 'blind', steps: int = 500, adversarial_steps: int = 0,
              seed: int = 0, wb_input: Optional[AudioBuffer] = None, train_config: TrainConfig = TrainConfig(),
              disc_config: DiscriminatorConfig = DiscriminatorConfig()) -> TrainResult:
    """
    Overfit the generator on one clip

    Phase 1 (`steps` steps) minimizes L_sc + L_mag; phase 2
    (`adversarial_steps` more) adds L_adv + 10 * L_feat and trains the
    discriminators. One step is one epoch over the clip. Phase 1 runs at
    `pretrain_lr_scale` times the generator rate.

    Args:
        clip: 32 kHz target, a whole number of 20 ms frames
        mode: 'blind' or 'guided' (guided trains the side-info encoder through
            the straight-through quantizer)
        wb_input: coded 16 kHz version of the clip; the subband-zeroing
            surrogate is used when None

    Returns:
        TrainResult with the weights and rows (step, sc, mag, adv, feat, disc)
    """

    if clip.sample_rate != Config.SWB_RATE:
        raise RateMismatch(f"Training clip must be {Config.SWB_RATE} Hz, got {clip.sample_rate} Hz")
    if len(clip) == 0:
        raise ClipTooShort("Training clip is empty")
    if len(clip) % Config.SWB_FRAME != 0:
        raise FrameAlignment(f"Clip length {len(clip)} is not a multiple of {Config.SWB_FRAME} samples")

    config = ModelConfig.for_mode(mode)
    model = Generator.init_weights(config, seed)
    p8 = model.prototype

    wb = wb_input if wb_input is not None else wideband_surrogate(clip, p8)
    if wb.sample_rate != Config.WB_RATE or 2 * len(wb) != len(clip):
        raise ShapeMismatch(f"Coded input must be {Config.WB_RATE} Hz and half the clip length")

    sb_in = nn.Tensor(pqmf.wideband_analysis_step(wb.samples, p8, PqmfState.zeros(p8)).data)
    if mode == 'blind':
        mel = nn.Tensor(conditioning.mel_matrix(wb, config.mel).T)
    else:
        windows_in = nn.Tensor(sideinfo.rolling_windows(sideinfo.high_bands(clip, config.dpcrnn, p8), config.dpcrnn))

    target = nn.Tensor(delay(clip.samples, p8.delay))
    target_spec = stft_magnitude(target, train_config.loss_window, train_config.loss_hop)

    generator_opt = AdamW(model.parameters(), train_config.lr_generator, train_config.betas, train_config.eps,
                          train_config.weight_decay)
    generator_lr = LrSchedule(train_config.lr_generator, train_config.decay_factor, train_config.decay_every_epochs)
    pretrain_lr = LrSchedule(train_config.lr_generator * train_config.pretrain_lr_scale, train_config.decay_factor,
                             train_config.decay_every_epochs)

    discriminators = None
    if adversarial_steps > 0:
        discriminators = DiscriminatorEnsemble(disc_config)
        discriminators.init_params(np.random.default_rng(seed + 1))
        disc_opt = Adam(discriminators.parameters(), train_config.lr_discriminator, train_config.betas,
                        train_config.eps)
        disc_lr = LrSchedule(train_config.lr_discriminator, train_config.decay_factor,
                             train_config.decay_every_epochs)

    trace = []
    codes: List[int] = []
    for step in range(steps + adversarial_steps):
        (pretrain_lr if step < steps else generator_lr).apply(generator_opt, step)
        generator_opt.zero_grad()

        if mode == 'blind':
            cond = mel
        else:
            step_codes, dequant = model.encoder.encode_tensor(windows_in)
            codes = [int(c) for c in step_codes.reshape(-1)]
            cond = expand_sideinfo(dequant, model.expand)

        generated = model.forward(sb_in, cond)
        y = synthesize(model.assemble(sb_in, generated), p8)
        spec = stft_magnitude(y, train_config.loss_window, train_config.loss_hop)
        sc = loss_sc(target_spec, spec)
        mag = loss_mag(target_spec, spec, train_config.magnitude_floor)
        report = LossReport(sc=_finite(sc.item(), step, 'L_sc'), mag=_finite(mag.item(), step, 'L_mag'),
                            feat_weight=train_config.feat_weight)
        total = sc + mag

        if discriminators is not None and step >= steps:
            disc_lr.apply(disc_opt, step - steps)
            disc_opt.zero_grad()
            real_out, real_feats = discriminators(target)
            fake_out, _ = discriminators(y.detach())
            disc = loss_disc(real_out, fake_out)
            report.disc = _finite(disc.item(), step, 'L_disc')
            disc.backward()
            disc_opt.step()

            fake_out, fake_feats = discriminators(y)
            adv = loss_adv_gen(fake_out)
            feat = loss_feat([[f.detach() for f in layer] for layer in real_feats], fake_feats)
            report.adv = _finite(adv.item(), step, 'L_adv')
            report.feat = _finite(feat.item(), step, 'L_feat')
            total = total + adv + feat * train_config.feat_weight
            # discriminator grads from the generator pass are discarded
            disc_opt.zero_grad()

        _finite(total.item(), step, 'generator loss')
        total.backward()
        generator_opt.step()

        trace.append((step, report.sc, report.mag, report.adv, report.feat, report.disc))
        if step % train_config.log_every == 0:
            logging.info(f"step {step}: sc {report.sc:.4f} mag {report.mag:.4f} adv {report.adv:.4f} "
                         f"feat {report.feat:.4f} disc {report.disc:.4f}")

    if mode == 'guided':
        with nn.no_grad():
            final_codes, _ = model.encoder.encode_tensor(windows_in)
        codes = [int(c) for c in final_codes.reshape(-1)]
    return TrainResult(store=model.to_store(), trace=trace, codes=codes)


def write_trace_csv(path: str, trace: Sequence[Tuple]):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp_path = tempfile.mkstemp(suffix='.csv', dir=directory)
    try:
        with os.fdopen(fd, 'w', newline='') as f:
            writer = csv.writer(f)
            writer.writerow(['step', 'sc', 'mag', 'adv', 'feat', 'disc'])
            for row in trace:
                writer.writerow([row[0]] + [f"{v:.6g}" for v in row[1:]])
        os.replace(tmp_path, path)
    except Exception:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise
    logging.info(f"Wrote {len(trace)} trace rows to {path}")


# gradient checks

OP_TOLERANCE = 1e-3
MODEL_TOLERANCE = 1e-2


@dataclass
class GradcheckResult:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.error < self.tolerance


def _away_from_zero(rng: np.random.Generator, shape, low: float = 0.2) -> np.ndarray:
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(low, 1.0, size=shape)


def _op_checks(rng: np.random.Generator):
    def leaf(shape, positive=False):
        data = rng.uniform(0.5, 2.0, shape) if positive else _away_from_zero(rng, shape)
        return nn.Tensor(data, requires_grad=True)

    a, b = leaf((3, 4)), leaf((3, 4))
    yield 'add', lambda x, y: x + y, [a, b]
    yield 'mul', lambda x, y: x * y, [leaf((3, 4)), leaf((4,))]
    yield 'div', lambda x, y: x / y, [leaf((3, 4)), leaf((3, 4), positive=True)]
    yield 'matmul', nn.matmul, [leaf((3, 5)), leaf((5, 2))]
    yield 'sqrt', nn.sqrt, [leaf((6,), positive=True)]
    yield 'log', nn.log, [leaf((6,), positive=True)]
    yield 'abs', nn.absolute, [leaf((6,))]
    yield 'tanh', nn.tanh, [leaf((6,))]
    yield 'sigmoid', nn.sigmoid, [leaf((6,))]
    yield 'leaky_relu', nn.leaky_relu, [leaf((6,))]
    yield 'hypot', nn.hypot, [leaf((3, 3)), leaf((3, 3))]
    yield 'norm', nn.norm, [leaf((3, 3))]
    yield 'mean', lambda x: x.mean(axis=1), [leaf((3, 4))]
    mix = nn.Tensor(rng.standard_normal((4, 3)))
    yield 'transpose', lambda x: x.T * mix, [leaf((3, 4))]
    yield 'concat', lambda x, y: nn.concat([x, y], axis=1), [leaf((2, 3)), leaf((2, 2))]
    yield 'slice', lambda x: x[1:3, ::2], [leaf((4, 5))]
    yield 'frame_signal', lambda x: nn.frame_signal(x, 4, 2), [leaf((10,))]
    yield 'causal_conv1d', nn.causal_conv1d, [leaf((2, 9)), leaf((3, 2, 3)), leaf((3,))]
    yield 'depthwise_conv1d', nn.depthwise_conv1d, [leaf((3, 9)), leaf((3, 7))]
    yield 'dsconv1d', nn.dsconv1d, [leaf((2, 9)), leaf((2, 7)), leaf((4, 2)), leaf((4,))]
    yield 'conv2d', lambda x, w: nn.conv2d(x, w, stride=(1, 2), padding=(1, 1)), [leaf((2, 4, 6)), leaf((3, 2, 3, 3))]
    yield 'channel_norm', nn.channel_norm, [leaf((4, 5)), leaf((4,)), leaf((4,))]
    yield 'gated', nn.gated, [leaf((3, 4)), leaf((3, 4))]
    yield 'interp_linear', lambda x: nn.interp(x, Fraction(5, 2), causal=True), [leaf((2, 4))]
    yield 'interp_down', lambda x: nn.interp(x, Fraction(2, 5), causal=True), [leaf((2, 10))]
    yield 'interp_nearest', lambda x: nn.interp(x, 4, mode='nearest'), [leaf((2, 3))]
    yield 'gru_step', nn.gru_step, [leaf((3,)), leaf((2,)), leaf((6, 3)), leaf((6, 2)), leaf((6,)), leaf((6,))]
    yield 'stft_magnitude', lambda x: stft_magnitude(x, 16, 4).magnitude, [leaf((32,))]
    yield 'loss_sc', lambda x, y: loss_sc(x, y), [leaf((4, 4), positive=True), leaf((4, 4), positive=True)]
    yield 'loss_mag', lambda x, y: loss_mag(x, y + 2.5), [leaf((4, 4), positive=True), leaf((4, 4), positive=True)]


def straight_through_error(seed: int = 0) -> float:
    """Largest difference between the quantizer gradient and 1 - tanh(z)^2"""
    rng = np.random.default_rng(seed)
    with nn.default_dtype(np.float64):
        z = nn.Tensor(rng.standard_normal(8), requires_grad=True)
        _, dequant = nn.quantize_st(z)
        dequant.sum().backward()
        expected = 1 - np.tanh(z.data) ** 2
        return float(np.max(np.abs(z.grad - expected)))


def generator_gradcheck(seed: int = 0, mode: str = 'blind', frames: int = 2) -> float:
    """
    Finite-difference check of L_sc + L_mag through the whole generator

    A few small parameter tensors from both ends of the network are probed.
    """
    rng = np.random.default_rng(seed)
    with nn.default_dtype(np.float64):
        config = ModelConfig.for_mode(mode)
        model = Generator.init_weights(config, seed)
        g = config.generator
        steps = frames * g.frame_subband_steps
        sb_in = nn.Tensor(0.1 * rng.standard_normal((g.in_bands, steps)))
        cond = nn.Tensor(rng.standard_normal((g.cond_dim, frames)))
        target = stft_magnitude(0.1 * rng.standard_normal(8 * steps))
        p8 = model.prototype

        small = [t for _, t in model.named_parameters() if t.size <= 32]
        probes = small[:3] + small[-3:]
        for t in probes:
            t.data = t.data + 0.05 * rng.standard_normal(t.shape)

        def loss(*_):
            y = synthesize(model.assemble(sb_in, model.forward(sb_in, cond)), p8)
            spec = stft_magnitude(y)
            return loss_sc(target, spec) + loss_mag(target, spec)

        return nn.gradcheck(loss, probes, seed=seed)


def gradcheck_suite(seed: int = 0, include_model: bool = True) -> List[GradcheckResult]:
    """Every differentiable op, the straight-through quantizer and (optionally) the full generator loss"""
    rng = np.random.default_rng(seed)
    results = []
    with nn.default_dtype(np.float64):
        for name, fn, inputs in _op_checks(rng):
            results.append(GradcheckResult(name, nn.gradcheck(fn, inputs, seed=seed), OP_TOLERANCE))
    results.append(GradcheckResult('quantize_st', straight_through_error(seed), OP_TOLERANCE))
    if include_model:
        results.append(GradcheckResult('generator', generator_gradcheck(seed), MODEL_TOLERANCE))
    failed = [r.name for r in results if not r.passed]
    if failed:
        logging.warning(f"Gradient checks failed: {', '.join(failed)}")
    return results
