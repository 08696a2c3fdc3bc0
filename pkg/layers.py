"""
Layers - parameterized building blocks, stream state and complexity accounting

Every layer is described by a LayerSpec. The spec alone fixes the shapes of
the layer's tensors, its stream history and its parameter/FLOP cost, so a
weight file can be validated and a model's complexity reported without
running it.

Calling a layer without a StreamState runs it on a whole sequence starting
from zero history. Calling it with a state reads the layer's history from the
state and writes the new history back, so a sequence cut into frames gives
the same result as one batch call.
"""

import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, Iterable, Iterator, List, Optional, Tuple

import numpy as np

import nnengine as nn
from errors import ShapeMismatch, UninitializedState

KINDS = (
    'causal_conv1d', 'dsconv1d', 'depthwise_conv1d', 'pointwise_conv', 'channel_norm',
    'gated', 'gru', 'linear', 'interp', 'tade', 'conv2d',
)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    name: str
    in_channels: int
    out_channels: int
    kernel_size: int = 1
    interp_factor: Fraction = Fraction(1)
    interp_mode: str = 'linear'
    bias: bool = True
    kernel2d: Tuple[int, int] = (1, 1)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"Unknown layer kind {self.kind}")

    def param_shapes(self) -> Dict[str, Tuple[int, ...]]:
        """Named tensor shapes of the layer, in serialization order"""
        cin, cout, k = self.in_channels, self.out_channels, self.kernel_size
        shapes: Dict[str, Tuple[int, ...]] = {}
        if self.kind == 'causal_conv1d':
            shapes['weight'] = (cout, cin, k)
        elif self.kind == 'dsconv1d':
            shapes['depthwise'] = (cin, k)
            shapes['pointwise'] = (cout, cin)
        elif self.kind == 'depthwise_conv1d':
            shapes['weight'] = (cin, k)
        elif self.kind == 'conv2d':
            shapes['weight'] = (cout, cin) + tuple(self.kernel2d)
        elif self.kind in ('pointwise_conv', 'linear'):
            shapes['weight'] = (cout, cin)
        elif self.kind == 'channel_norm':
            if self.bias:
                shapes['scale'] = (cin,)
                shapes['shift'] = (cin,)
            return shapes
        elif self.kind == 'gru':
            shapes['w_ih'] = (3 * cout, cin)
            shapes['w_hh'] = (3 * cout, cout)
            shapes['b_ih'] = (3 * cout,)
            shapes['b_hh'] = (3 * cout,)
            return shapes
        else:
            return shapes
        if self.bias:
            shapes['bias'] = (cout,)
        return shapes

    def param_count(self) -> int:
        return sum(int(np.prod(shape)) for shape in self.param_shapes().values())

    def history_shape(self) -> Optional[Tuple[int, ...]]:
        if self.kind in ('causal_conv1d', 'dsconv1d', 'depthwise_conv1d') and self.kernel_size > 1:
            return (self.in_channels, self.kernel_size - 1)
        if self.kind == 'interp' and self.interp_factor > 1 and self.interp_mode == 'linear':
            return (self.in_channels, 1)
        if self.kind == 'gru':
            return (self.out_channels,)
        return None

    def flops(self, in_rate: float) -> float:
        """
        FLOPs per second when the layer consumes `in_rate` steps per second

        MAC = 2 FLOPs; bias, activation and normalization cost 1 per scalar op.
        """
        cin, cout, k = self.in_channels, self.out_channels, self.kernel_size
        bias = cout if self.bias else 0
        if self.kind == 'causal_conv1d':
            per_step = 2 * cin * cout * k + bias
        elif self.kind == 'dsconv1d':
            per_step = 2 * cin * k + 2 * cin * cout + bias
        elif self.kind == 'depthwise_conv1d':
            per_step = 2 * cin * k
        elif self.kind in ('pointwise_conv', 'linear'):
            per_step = 2 * cin * cout + bias
        elif self.kind == 'channel_norm':
            # mean, centering, variance, scaling; affine adds two more
            per_step = 4 * cin + (2 * cin if self.bias else 0)
        elif self.kind == 'tade':
            per_step = 4 * cin + 2 * cin
        elif self.kind == 'gated':
            # tanh, sigmoid, product
            per_step = 3 * cout
        elif self.kind == 'gru':
            per_step = 2 * 3 * cout * (cin + cout) + 6 * cout + 3 * cout + 5 * cout
        elif self.kind == 'interp':
            if self.interp_factor == 1 or self.interp_mode != 'linear':
                return 0.0
            # two MACs per output sample
            return float(4 * cin * in_rate * self.interp_factor)
        else:
            per_step = 0
        return float(per_step * in_rate)


class StreamState:
    """Per-stream history buffers, keyed by layer name"""

    def __init__(self, buffers: Optional[Dict[str, np.ndarray]] = None):
        self.buffers: Dict[str, np.ndarray] = buffers or {}

    @classmethod
    def zeros(cls, specs: Iterable[LayerSpec]) -> 'StreamState':
        buffers = {}
        for spec in specs:
            shape = spec.history_shape()
            if shape is not None:
                buffers[spec.name] = np.zeros(shape, dtype=np.float32)
        return cls(buffers)

    def get(self, name: str) -> np.ndarray:
        if name not in self.buffers:
            raise UninitializedState(f"Stream state has no history for layer '{name}'")
        return self.buffers[name]

    def set(self, name: str, value: np.ndarray):
        self.buffers[name] = np.array(value, dtype=np.float32)

    def copy(self) -> 'StreamState':
        return StreamState({k: v.copy() for k, v in self.buffers.items()})


class Layer:
    def __init__(self, spec: LayerSpec):
        self.spec = spec
        self.params: Dict[str, nn.Tensor] = {
            key: nn.Tensor(np.zeros(shape), requires_grad=True, name=f"{spec.name}.{key}")
            for key, shape in spec.param_shapes().items()
        }

    @property
    def name(self) -> str:
        return self.spec.name

    def named_parameters(self) -> Iterator[Tuple[str, nn.Tensor]]:
        for key, tensor in self.params.items():
            yield f"{self.spec.name}.{key}", tensor

    def init_params(self, rng: np.random.Generator):
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, unit norm scales"""
        for key, tensor in self.params.items():
            if key in ('bias', 'shift', 'b_ih', 'b_hh'):
                tensor.data = np.zeros(tensor.shape, dtype=tensor.data.dtype)
            elif key == 'scale':
                tensor.data = np.ones(tensor.shape, dtype=tensor.data.dtype)
            else:
                fan_in = int(np.prod(tensor.shape[1:]))
                bound = 1.0 / np.sqrt(max(fan_in, 1))
                tensor.data = rng.uniform(-bound, bound, tensor.shape).astype(tensor.data.dtype)

    def _history(self, state: Optional[StreamState]) -> Optional[np.ndarray]:
        if state is None or self.spec.history_shape() is None:
            return None
        return state.get(self.spec.name)

    def _keep_history(self, state: Optional[StreamState], x: nn.Tensor, history: Optional[np.ndarray]):
        if state is None or self.spec.history_shape() is None:
            return
        width = self.spec.kernel_size - 1
        past = history if history is not None else np.zeros((x.shape[0], width), dtype=np.float32)
        joined = np.concatenate([past, x.data.astype(np.float32)], axis=1)
        state.set(self.spec.name, joined[:, joined.shape[1] - width:])


class CausalConv1d(Layer):
    def __init__(self, name: str, in_channels: int, out_channels: int, kernel_size: int = 7, bias: bool = True):
        super().__init__(LayerSpec('causal_conv1d', name, in_channels, out_channels, kernel_size, bias=bias))

    def __call__(self, x: nn.Tensor, state: Optional[StreamState] = None) -> nn.Tensor:
        history = self._history(state)
        y = nn.causal_conv1d(x, self.params['weight'], self.params.get('bias'), history=history)
        self._keep_history(state, x, history)
        return y


class DSConv1d(Layer):
    """Causal depthwise K-tap convolution, then 1x1 mixing with bias"""

    def __init__(self, name: str, in_channels: int, out_channels: int, kernel_size: int = 7):
        super().__init__(LayerSpec('dsconv1d', name, in_channels, out_channels, kernel_size))

    def __call__(self, x: nn.Tensor, state: Optional[StreamState] = None) -> nn.Tensor:
        history = self._history(state)
        y = nn.dsconv1d(x, self.params['depthwise'], self.params['pointwise'], self.params['bias'], history=history)
        self._keep_history(state, x, history)
        return y


class DepthwiseConv1d(Layer):
    def __init__(self, name: str, channels: int, kernel_size: int = 7):
        super().__init__(LayerSpec('depthwise_conv1d', name, channels, channels, kernel_size, bias=False))

    def __call__(self, x: nn.Tensor, state: Optional[StreamState] = None) -> nn.Tensor:
        history = self._history(state)
        y = nn.depthwise_conv1d(x, self.params['weight'], history=history)
        self._keep_history(state, x, history)
        return y


class Pointwise(Layer):
    def __init__(self, name: str, in_channels: int, out_channels: int, bias: bool = True):
        super().__init__(LayerSpec('pointwise_conv', name, in_channels, out_channels, bias=bias))

    def __call__(self, x: nn.Tensor, state: Optional[StreamState] = None) -> nn.Tensor:
        return nn.pointwise_conv(x, self.params['weight'], self.params.get('bias'))


class Conv2d(Layer):
    """2-D convolution over channels x rows x columns with 'same' zero padding"""

    def __init__(self, name: str, in_channels: int, out_channels: int, kernel: Tuple[int, int],
                 stride: Tuple[int, int] = (1, 1)):
        super().__init__(LayerSpec('conv2d', name, in_channels, out_channels, kernel2d=tuple(kernel)))
        self.stride = tuple(stride)
        self.padding = (kernel[0] // 2, kernel[1] // 2)

    def __call__(self, x: nn.Tensor, state: Optional[StreamState] = None) -> nn.Tensor:
        return nn.conv2d(x, self.params['weight'], self.params['bias'], self.stride, self.padding)


class Linear(Layer):
    def __init__(self, name: str, in_features: int, out_features: int):
        super().__init__(LayerSpec('linear', name, in_features, out_features))

    def __call__(self, x: nn.Tensor, state: Optional[StreamState] = None) -> nn.Tensor:
        """x is a vector or in_features x frames"""
        if x.shape[0] != self.spec.in_channels:
            raise ShapeMismatch(f"{self.name} expects {self.spec.in_channels} features, got {x.shape}")
        if x.ndim == 1:
            return self.params['weight'] @ x + self.params['bias']
        return nn.pointwise_conv(x, self.params['weight'], self.params['bias'])


class ChannelNorm(Layer):
    def __init__(self, name: str, channels: int, affine: bool = True):
        super().__init__(LayerSpec('channel_norm', name, channels, channels, bias=affine))

    def __call__(self, x: nn.Tensor, state: Optional[StreamState] = None) -> nn.Tensor:
        return nn.channel_norm(x, self.params.get('scale'), self.params.get('shift'))


class Gated(Layer):
    """Splits 2C channels into halves a, b and returns tanh(a) * sigmoid(b)"""

    def __init__(self, name: str, channels: int):
        super().__init__(LayerSpec('gated', name, 2 * channels, channels))

    def __call__(self, x: nn.Tensor, state: Optional[StreamState] = None) -> nn.Tensor:
        half = self.spec.out_channels
        if x.shape[0] != 2 * half:
            raise ShapeMismatch(f"{self.name} expects {2 * half} channels, got {x.shape[0]}")
        return nn.gated(x[:half], x[half:])


class Tade(Layer):
    """Parameter-free channel normalization modulated by external gamma/beta"""

    def __init__(self, name: str, channels: int):
        super().__init__(LayerSpec('tade', name, channels, channels, bias=False))

    def __call__(self, x: nn.Tensor, gamma: nn.Tensor, beta: nn.Tensor) -> nn.Tensor:
        if gamma.shape != x.shape or beta.shape != x.shape:
            raise ShapeMismatch(f"TADE parameters {gamma.shape}/{beta.shape} do not match input {x.shape}")
        return nn.channel_norm(x) * gamma + beta


class Interp(Layer):
    """Causal rational-factor resampling; linear upsampling keeps one sample of history"""

    def __init__(self, name: str, channels: int, factor: Fraction, mode: str = 'linear'):
        super().__init__(LayerSpec('interp', name, channels, channels, interp_factor=Fraction(factor),
                                   interp_mode=mode, bias=False))
        self.mode = mode

    def __call__(self, x: nn.Tensor, state: Optional[StreamState] = None) -> nn.Tensor:
        if self.spec.history_shape() is None or self.mode != 'linear':
            return nn.interp(x, self.spec.interp_factor, self.mode, causal=True)
        history = self._history(state)
        y = nn.interp(x, self.spec.interp_factor, self.mode, causal=True, history=history)
        if state is not None:
            state.set(self.name, x.data[:, -1:])
        return y


class GRU(Layer):
    def __init__(self, name: str, input_size: int, hidden_size: int):
        super().__init__(LayerSpec('gru', name, input_size, hidden_size))

    def step(self, x_t: nn.Tensor, h: nn.Tensor) -> nn.Tensor:
        p = self.params
        return nn.gru_step(x_t, h, p['w_ih'], p['w_hh'], p['b_ih'], p['b_hh'])

    def __call__(self, x: nn.Tensor, state: Optional[StreamState] = None) -> nn.Tensor:
        """x is input_size x frames; returns hidden_size x frames"""
        h = nn.Tensor(self._history(state)) if state is not None else nn.Tensor(np.zeros(self.spec.out_channels))
        outputs = []
        for t in range(x.shape[1]):
            h = self.step(x[:, t], h)
            outputs.append(h)
        if state is not None:
            state.set(self.name, h.data)
        return nn.stack(outputs, axis=1)


class Module:
    """A named collection of layers and sub-modules"""

    def layers(self) -> List[Layer]:
        found: List[Layer] = []
        for value in vars(self).values():
            items = value if isinstance(value, (list, tuple)) else [value]
            for item in items:
                if isinstance(item, Layer):
                    found.append(item)
                elif isinstance(item, Module):
                    found.extend(item.layers())
        return found

    def specs(self) -> List[LayerSpec]:
        return [layer.spec for layer in self.layers()]

    def named_parameters(self) -> Iterator[Tuple[str, nn.Tensor]]:
        for layer in self.layers():
            yield from layer.named_parameters()

    def parameters(self) -> List[nn.Tensor]:
        return [tensor for _, tensor in self.named_parameters()]

    def init_params(self, rng: np.random.Generator):
        for layer in self.layers():
            layer.init_params(rng)

    def zero_grad(self):
        for tensor in self.parameters():
            tensor.grad = None

    def new_state(self) -> StreamState:
        return StreamState.zeros(self.specs())


def shape_table(specs: Iterable[LayerSpec]) -> Dict[str, Tuple[int, ...]]:
    """Expected name -> shape of every stored tensor"""
    table: Dict[str, Tuple[int, ...]] = {}
    for spec in specs:
        for key, shape in spec.param_shapes().items():
            table[f"{spec.name}.{key}"] = shape
    return table


def count_params(specs: Iterable[LayerSpec]) -> int:
    return sum(spec.param_count() for spec in specs)


def param_breakdown(specs: Iterable[LayerSpec], depth: int = 1) -> Dict[str, int]:
    """Parameters grouped by the first `depth` components of the layer names"""
    groups: Dict[str, int] = {}
    for spec in specs:
        key = '.'.join(spec.name.split('.')[:depth])
        groups[key] = groups.get(key, 0) + spec.param_count()
    return groups


def log_summary(name: str, specs: List[LayerSpec]):
    logging.info(f"{name}: {len(specs)} layers, {count_params(specs)} parameters")
