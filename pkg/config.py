import os
import logging
from fractions import Fraction
from math import prod
from typing import List, Literal, Optional, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from errors import InvalidConfig

load_dotenv()


class Config:
    # Default weight file for extend / report-complexity / sideinfo-encode
    UBGAN_WEIGHTS = os.getenv('UBGAN_WEIGHTS')

    # Logging
    UBGAN_LOG_LEVEL = os.getenv('UBGAN_LOG_LEVEL', 'WARNING')

    # Seed used by every randomized path when --seed is not given
    UBGAN_SEED = int(os.getenv('UBGAN_SEED', '0'))

    # Worker threads for multi-file extend
    UBGAN_WORKERS = int(os.getenv('UBGAN_WORKERS', '2'))

    # Operating points
    WB_RATE = 16000
    SWB_RATE = 32000
    SUBBAND_RATE = 4000
    FRAME_MS = 20
    WB_FRAME = 320
    SWB_FRAME = 640

    @classmethod
    def get_weights_path(cls, cli_value: Optional[str] = None) -> Optional[str]:
        """
        Resolve the weights path for a command

        Args:
            cli_value: value of --weights, if given

        Returns:
            The CLI value, else UBGAN_WEIGHTS, else None
        """
        if cli_value:
            return cli_value
        return cls.UBGAN_WEIGHTS

    @classmethod
    def get_log_level(cls, verbose: bool = False) -> int:
        """Log level for the CLI: INFO when verbose, else UBGAN_LOG_LEVEL"""
        if verbose:
            return logging.INFO
        return getattr(logging, str(cls.UBGAN_LOG_LEVEL).upper(), logging.WARNING)


def as_fraction(value: float) -> Fraction:
    """Exact rational form of an interpolation factor such as 2.5"""
    return Fraction(str(value)).limit_denominator(100)


class MelConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    num_mels: int = 80
    frame_ms: int = 20
    context_ms: int = 5
    lookahead_ms: int = 5
    sample_rate: int = 16000
    fft_size: int = 512
    mel_fmin: float = 0.0
    mel_fmax: float = 8000.0
    log_floor: float = 1e-5

    @property
    def hop(self) -> int:
        return self.frame_ms * self.sample_rate // 1000

    @property
    def context(self) -> int:
        return self.context_ms * self.sample_rate // 1000

    @property
    def lookahead(self) -> int:
        return self.lookahead_ms * self.sample_rate // 1000

    @property
    def window_length(self) -> int:
        return self.context + self.hop + self.lookahead

    @model_validator(mode='after')
    def _window_fits_fft(self):
        if self.window_length > self.fft_size:
            raise ValueError(f"analysis window {self.window_length} exceeds fft_size {self.fft_size}")
        return self


class PqmfConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    taps_per_band: int = 16
    window_beta: float = 9.0
    # Optimized cutoffs; None means "design on first use"
    cutoff_8: Optional[float] = None


class GeneratorConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    down_channels: List[int] = [8, 16, 32, 48, 48, 64]
    down_factors: List[float] = [1, 2, 2, 2, 2.5, 2]
    cond_up_factors: List[int] = [80, 80, 40, 20, 10, 4]
    kernel_size: int = 7
    frame_subband_steps: int = 80
    in_bands: int = 4
    pre_channels: int = 8
    cond_dim: int = 80
    compensator_channels: int = 16
    mode: Literal['blind', 'guided'] = 'blind'

    @property
    def bottleneck_steps(self) -> int:
        return int(Fraction(self.frame_subband_steps) / prod(as_fraction(f) for f in self.down_factors))

    @model_validator(mode='after')
    def _check_geometry(self):
        if len(self.down_channels) != len(self.down_factors) or len(self.down_factors) != len(self.cond_up_factors):
            raise ValueError("down_channels, down_factors and cond_up_factors must have equal length")
        steps = Fraction(self.frame_subband_steps)
        for i, factor in enumerate(self.down_factors):
            expected = Fraction(self.frame_subband_steps) / prod((as_fraction(f) for f in self.down_factors[:i]), start=Fraction(1))
            if expected != self.cond_up_factors[i]:
                raise ValueError(f"cond_up_factors[{i}] must be {expected}, got {self.cond_up_factors[i]}")
            steps = steps / as_fraction(factor)
            if steps.denominator != 1:
                raise ValueError(f"frame of {self.frame_subband_steps} steps is not divisible through block {i}")
        if self.kernel_size < 1:
            raise ValueError("kernel_size must be positive")
        return self


class DpcrnnConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    high_bands: List[int] = [4, 5, 6, 7]
    history: int = 20
    current: int = 80
    lookahead: int = 20
    hidden: int = 80
    latent: int = 80
    levels: int = 16

    @property
    def in_dim(self) -> int:
        return len(self.high_bands) * (self.history + self.current + self.lookahead)


class DiscriminatorConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    windows: List[int] = [2048, 1024, 512, 256]
    hop_ratio: float = 0.25
    channels: int = 32
    num_layers: int = 5
    kernel: Tuple[int, int] = (3, 9)
    stride: Tuple[int, int] = (1, 2)
    slope: float = 0.2

    @field_validator('hop_ratio')
    @classmethod
    def _quarter_hop(cls, value: float) -> float:
        if value != 0.25:
            raise ValueError("STFT discriminators use 75% overlap (hop/window == 0.25)")
        return value

    @field_validator('windows')
    @classmethod
    def _four_members(cls, value: List[int]) -> List[int]:
        if len(value) != 4:
            raise ValueError("the discriminator ensemble has exactly four members")
        return value


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    lr_generator: float = 5e-4
    lr_discriminator: float = 2e-4
    # single-clip pre-training runs at a multiple of the corpus rate
    pretrain_lr_scale: float = 4.0
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    decay_factor: float = 0.99
    decay_every_epochs: int = 5
    feat_weight: float = 10.0
    loss_window: int = 1024
    loss_hop: int = 256
    magnitude_floor: float = 1e-7
    log_every: int = 50


class ModelConfig(BaseModel):
    """Architecture description stored in every weight file"""
    model_config = ConfigDict(frozen=True)

    mode: Literal['blind', 'guided'] = 'blind'
    generator: GeneratorConfig = GeneratorConfig()
    mel: MelConfig = MelConfig()
    pqmf: PqmfConfig = PqmfConfig()
    dpcrnn: DpcrnnConfig = DpcrnnConfig()

    @model_validator(mode='after')
    def _mode_consistent(self):
        if self.generator.mode != self.mode:
            raise ValueError(f"generator mode {self.generator.mode} differs from model mode {self.mode}")
        if self.generator.cond_dim != self.mel.num_mels:
            raise ValueError("conditioning width must equal the number of mel bands")
        return self

    @classmethod
    def for_mode(cls, mode: str) -> 'ModelConfig':
        return cls(mode=mode, generator=GeneratorConfig(mode=mode))

    @classmethod
    def from_json(cls, text: str) -> 'ModelConfig':
        """Parse a stored architecture description, raising InvalidConfig"""
        try:
            return cls.model_validate_json(text)
        except ValidationError as e:
            raise InvalidConfig(f"Invalid architecture config: {e.errors()[0]['msg']}")
