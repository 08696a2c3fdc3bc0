"""
NN engine - tensors with reverse-mode gradients and the op set the model needs

A Tensor wraps a numpy array. Every op is a Function subclass: forward works
on arrays, backward maps the output gradient to one gradient per input.
Function.apply records the graph only while gradients are enabled and some
input requires them.

Signal tensors are channels x time (no batch axis). Convolutions are causal:
the output at step t sees inputs up to t only, with either zeros or a stream
history standing in for the past.
"""

import threading
from contextlib import contextmanager
from fractions import Fraction
from functools import lru_cache
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from config import as_fraction
from errors import GraphDetached, NonIntegralOutputLength, NotScalarLoss, ShapeMismatch

_local = threading.local()


def get_default_dtype():
    return getattr(_local, 'dtype', np.float32)


def is_grad_enabled() -> bool:
    return getattr(_local, 'grad_enabled', True)


@contextmanager
def default_dtype(dtype):
    """Create tensors with `dtype` inside the block (float64 for finite-difference checks)"""
    previous = get_default_dtype()
    _local.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _local.dtype = previous


@contextmanager
def no_grad():
    previous = is_grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = previous


class Tensor:
    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, _ctx: Optional['Function'] = None):
        self.data = np.asarray(data, dtype=get_default_dtype())
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._ctx = _ctx

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> 'Tensor':
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = f" '{self.name}'" if self.name else ''
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return Add.apply(self, other)

    def __radd__(self, other):
        return Add.apply(other, self)

    def __sub__(self, other):
        return Sub.apply(self, other)

    def __rsub__(self, other):
        return Sub.apply(other, self)

    def __mul__(self, other):
        return Mul.apply(self, other)

    def __rmul__(self, other):
        return Mul.apply(other, self)

    def __truediv__(self, other):
        return Div.apply(self, other)

    def __neg__(self):
        return Neg.apply(self)

    def __matmul__(self, other):
        return MatMul.apply(self, other)

    def __getitem__(self, index):
        return GetItem.apply(self, index=index)

    def sum(self, axis=None, keepdims: bool = False) -> 'Tensor':
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> 'Tensor':
        count = self.size if axis is None else self.shape[axis]
        return Sum.apply(self, axis=axis, keepdims=keepdims) * (1.0 / max(count, 1))

    def reshape(self, *shape) -> 'Tensor':
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    def transpose(self, *axes) -> 'Tensor':
        return Transpose.apply(self, axes=axes or None)

    @property
    def T(self) -> 'Tensor':
        return self.transpose()

    def backward(self):
        """
        Populate .grad of every leaf tensor that requires gradients

        Raises:
            NotScalarLoss: the tensor holds more than one value
            GraphDetached: nothing in the recorded graph requires gradients
        """
        if self.size != 1:
            raise NotScalarLoss(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise GraphDetached("Loss was not computed from any tensor that requires gradients")

        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            if node._ctx is not None:
                for parent in node._ctx.parents:
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            if node._ctx is None:
                node.grad = grad.copy() if node.grad is None else node.grad + grad
                continue
            for parent, parent_grad in zip(node._ctx.parents, node._ctx.backward(grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                parent_grad = np.asarray(parent_grad, dtype=parent.data.dtype)
                key = id(parent)
                grads[key] = grads[key] + parent_grad if key in grads else parent_grad


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class Function:
    def __init__(self, *parents: Tensor):
        self.parents = parents

    def forward(self, *args, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs, **kwargs) -> Tensor:
        tensors = tuple(as_tensor(t) for t in inputs)
        fn = cls(*tensors)
        data = fn.forward(*(t.data for t in tensors), **kwargs)
        track = is_grad_enabled() and any(t.requires_grad for t in tensors)
        return Tensor(data, requires_grad=track, _ctx=fn if track else None)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# elementwise

class Add(Function):
    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, grad):
        return _unbroadcast(grad, self.shapes[0]), _unbroadcast(grad, self.shapes[1])


class Sub(Function):
    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return a - b

    def backward(self, grad):
        return _unbroadcast(grad, self.shapes[0]), _unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return _unbroadcast(grad * self.b, self.a.shape), _unbroadcast(grad * self.a, self.b.shape)


class Div(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a / b

    def backward(self, grad):
        return (_unbroadcast(grad / self.b, self.a.shape),
                _unbroadcast(-grad * self.a / (self.b * self.b), self.b.shape))


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, grad):
        return (-grad,)


class Square(Function):
    def forward(self, a):
        self.a = a
        return a * a

    def backward(self, grad):
        return (2 * grad * self.a,)


class Sqrt(Function):
    def forward(self, a):
        self.out = np.sqrt(a)
        return self.out

    def backward(self, grad):
        return (grad / (2 * self.out),)


class Log(Function):
    def forward(self, a):
        self.a = a
        return np.log(a)

    def backward(self, grad):
        return (grad / self.a,)


class Abs(Function):
    def forward(self, a):
        self.sign = np.sign(a)
        return np.abs(a)

    def backward(self, grad):
        return (grad * self.sign,)


class ClampMin(Function):
    def forward(self, a, floor: float = 0.0):
        self.mask = a > floor
        return np.maximum(a, np.asarray(floor, dtype=a.dtype))

    def backward(self, grad):
        return (grad * self.mask,)


class Tanh(Function):
    def forward(self, a):
        self.out = np.tanh(a)
        return self.out

    def backward(self, grad):
        return (grad * (1 - self.out * self.out),)


class Sigmoid(Function):
    def forward(self, a):
        self.out = 1 / (1 + np.exp(-a))
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1 - self.out),)


class LeakyRelu(Function):
    def forward(self, a, slope: float = 0.2):
        self.scale = np.where(a > 0, 1.0, slope).astype(a.dtype)
        return a * self.scale

    def backward(self, grad):
        return (grad * self.scale,)


class Hypot(Function):
    """sqrt(a^2 + b^2); the gradient is zero where the magnitude is zero"""

    def forward(self, a, b):
        self.a, self.b = a, b
        self.out = np.sqrt(a * a + b * b)
        return self.out

    def backward(self, grad):
        safe = np.where(self.out > 0, self.out, 1)
        scale = np.where(self.out > 0, grad / safe, 0)
        return scale * self.a, scale * self.b


class Norm(Function):
    """Frobenius norm; the gradient at zero is zero"""

    def forward(self, a):
        self.a = a
        self.out = np.sqrt(np.sum(a * a))
        return self.out

    def backward(self, grad):
        if self.out == 0:
            return (np.zeros_like(self.a),)
        return (grad * self.a / self.out,)


class StraightThrough(Function):
    """Forward snaps to the quantizer grid; backward passes the gradient unchanged"""

    def forward(self, bounded, levels: int = 16):
        steps = levels - 1
        self.index = round_half_away((bounded.astype(np.float64) + 1) / 2 * steps).astype(np.int64)
        return (2 * self.index / steps - 1).astype(bounded.dtype)

    def backward(self, grad):
        return (grad,)


# reductions and shapes

class Sum(Function):
    def forward(self, a, axis=None, keepdims: bool = False):
        self.shape, self.axis, self.keepdims = a.shape, axis, keepdims
        return np.sum(a, axis=axis, keepdims=keepdims)

    def backward(self, grad):
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.array(np.broadcast_to(grad, self.shape)),)


class Reshape(Function):
    def forward(self, a, shape=()):
        self.shape = a.shape
        return a.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.shape),)


class Transpose(Function):
    def forward(self, a, axes=None):
        self.axes = axes
        return np.transpose(a, axes)

    def backward(self, grad):
        if self.axes is None:
            return (np.transpose(grad),)
        return (np.transpose(grad, np.argsort(self.axes)),)


class Concat(Function):
    def forward(self, *arrays, axis: int = 0):
        self.axis = axis
        self.bounds = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        return tuple(np.split(grad, self.bounds, axis=self.axis))


class Stack(Function):
    def forward(self, *arrays, axis: int = 0):
        self.axis = axis
        return np.stack(arrays, axis=axis)

    def backward(self, grad):
        return tuple(np.take(grad, i, axis=self.axis) for i in range(grad.shape[self.axis]))


class GetItem(Function):
    def forward(self, a, index=None):
        self.shape, self.index, self.dtype = a.shape, index, a.dtype
        return a[index]

    def backward(self, grad):
        out = np.zeros(self.shape, dtype=self.dtype)
        np.add.at(out, self.index, grad)
        return (out,)


class Pad(Function):
    """Zero padding of the last axis"""

    def forward(self, a, left: int = 0, right: int = 0):
        self.left, self.length = left, a.shape[-1]
        widths = [(0, 0)] * (a.ndim - 1) + [(left, right)]
        return np.pad(a, widths)

    def backward(self, grad):
        return (grad[..., self.left:self.left + self.length],)


class MatMul(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a @ b

    def backward(self, grad):
        a, b = self.a, self.b
        if a.ndim == 1:
            return b @ grad, np.outer(a, grad)
        if b.ndim == 1:
            return np.outer(grad, b), a.T @ grad
        return grad @ b.T, a.T @ grad


# signal ops

class DepthwiseConv1d(Function):
    """y[c, t] = sum_k w[c, k] x[c, t - K + 1 + k]; tap K - 1 multiplies the current sample"""

    def forward(self, x, w, history=None):
        channels, kernel = w.shape
        if x.ndim != 2 or x.shape[0] != channels:
            raise ShapeMismatch(f"Depthwise kernel {w.shape} does not fit input {x.shape}")
        if history is None:
            history = np.zeros((channels, kernel - 1), dtype=x.dtype)
        self.padded, self.w = np.concatenate([history.astype(x.dtype), x], axis=1), w
        steps = x.shape[1]
        out = np.zeros_like(x)
        for k in range(kernel):
            out += w[:, k:k + 1] * self.padded[:, k:k + steps]
        return out

    def backward(self, grad):
        kernel = self.w.shape[1]
        steps = grad.shape[1]
        dpadded = np.zeros_like(self.padded)
        dw = np.zeros_like(self.w)
        for k in range(kernel):
            dpadded[:, k:k + steps] += self.w[:, k:k + 1] * grad
            dw[:, k] = np.sum(grad * self.padded[:, k:k + steps], axis=1)
        return dpadded[:, kernel - 1:], dw


class CausalConv1d(Function):
    """Dense causal convolution: w is out_channels x in_channels x K"""

    def forward(self, x, w, history=None):
        out_channels, in_channels, kernel = w.shape
        if x.ndim != 2 or x.shape[0] != in_channels:
            raise ShapeMismatch(f"Kernel {w.shape} does not fit input {x.shape}")
        if history is None:
            history = np.zeros((in_channels, kernel - 1), dtype=x.dtype)
        self.padded, self.w = np.concatenate([history.astype(x.dtype), x], axis=1), w
        steps = x.shape[1]
        out = np.zeros((out_channels, steps), dtype=x.dtype)
        for k in range(kernel):
            out += w[:, :, k] @ self.padded[:, k:k + steps]
        return out

    def backward(self, grad):
        kernel = self.w.shape[2]
        steps = grad.shape[1]
        dpadded = np.zeros_like(self.padded)
        dw = np.zeros_like(self.w)
        for k in range(kernel):
            dpadded[:, k:k + steps] += self.w[:, :, k].T @ grad
            dw[:, :, k] = grad @ self.padded[:, k:k + steps].T
        return dpadded[:, kernel - 1:], dw


class Conv2d(Function):
    """x: in_channels x H x W, w: out_channels x in_channels x kh x kw, zero padding, strided"""

    def forward(self, x, w, stride=(1, 1), padding=(0, 0)):
        out_channels, in_channels, kh, kw = w.shape
        if x.ndim != 3 or x.shape[0] != in_channels:
            raise ShapeMismatch(f"Kernel {w.shape} does not fit input {x.shape}")
        sh, sw = stride
        ph, pw = padding
        padded = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
        height = (padded.shape[1] - kh) // sh + 1
        width = (padded.shape[2] - kw) // sw + 1
        if height <= 0 or width <= 0:
            raise ShapeMismatch(f"Input {x.shape} is smaller than kernel {w.shape[2:]}")

        cols = np.empty((in_channels, kh, kw, height, width), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                cols[:, i, j] = padded[:, i:i + sh * (height - 1) + 1:sh, j:j + sw * (width - 1) + 1:sw]
        self.cols, self.w, self.padded_shape = cols, w, padded.shape
        self.stride, self.padding, self.x_shape = stride, padding, x.shape
        return np.tensordot(w, cols, axes=([1, 2, 3], [0, 1, 2]))

    def backward(self, grad):
        _, _, kh, kw = self.w.shape
        sh, sw = self.stride
        ph, pw = self.padding
        height, width = grad.shape[1:]
        dw = np.tensordot(grad, self.cols, axes=([1, 2], [3, 4]))
        dcols = np.tensordot(self.w, grad, axes=([0], [0]))
        dpadded = np.zeros(self.padded_shape, dtype=grad.dtype)
        for i in range(kh):
            for j in range(kw):
                dpadded[:, i:i + sh * (height - 1) + 1:sh, j:j + sw * (width - 1) + 1:sw] += dcols[:, i, j]
        dx = dpadded[:, ph:ph + self.x_shape[1], pw:pw + self.x_shape[2]]
        return dx, dw


class ChannelNorm(Function):
    """Per time step: (x - mean over channels) / sqrt(var over channels + eps)"""

    def forward(self, x, eps: float = 1e-5):
        mean = x.mean(axis=0, keepdims=True)
        centered = x - mean
        self.inv_std = 1 / np.sqrt((centered * centered).mean(axis=0, keepdims=True) + eps)
        self.z = centered * self.inv_std
        return self.z

    def backward(self, grad):
        mean_grad = grad.mean(axis=0, keepdims=True)
        mean_grad_z = (grad * self.z).mean(axis=0, keepdims=True)
        return (self.inv_std * (grad - mean_grad - self.z * mean_grad_z),)


class Interp(Function):
    def forward(self, x, grid=None, history=None):
        lower, upper, weight, extended = grid
        if extended:
            if history is None:
                history = np.zeros((x.shape[0], 1), dtype=x.dtype)
            x = np.concatenate([history.astype(x.dtype), x], axis=1)
        self.shape, self.extended = x.shape, extended
        self.lower, self.upper = lower, upper
        self.weight = weight.astype(x.dtype)
        return x[:, lower] * (1 - self.weight) + x[:, upper] * self.weight

    def backward(self, grad):
        out = np.zeros(self.shape, dtype=grad.dtype)
        np.add.at(out, (slice(None), self.lower), grad * (1 - self.weight))
        np.add.at(out, (slice(None), self.upper), grad * self.weight)
        return (out[:, 1:] if self.extended else out,)


# functional surface

def add(a, b) -> Tensor:
    return Add.apply(a, b)


def sub(a, b) -> Tensor:
    return Sub.apply(a, b)


def mul(a, b) -> Tensor:
    return Mul.apply(a, b)


def div(a, b) -> Tensor:
    return Div.apply(a, b)


def neg(a) -> Tensor:
    return Neg.apply(a)


def matmul(a, b) -> Tensor:
    return MatMul.apply(a, b)


def square(a) -> Tensor:
    return Square.apply(a)


def sqrt(a) -> Tensor:
    return Sqrt.apply(a)


def log(a) -> Tensor:
    return Log.apply(a)


def absolute(a) -> Tensor:
    return Abs.apply(a)


def hypot(a, b) -> Tensor:
    return Hypot.apply(a, b)


def norm(a) -> Tensor:
    return Norm.apply(a)


def clamp_min(a, floor: float) -> Tensor:
    return ClampMin.apply(a, floor=floor)


def tanh(a) -> Tensor:
    return Tanh.apply(a)


def sigmoid(a) -> Tensor:
    return Sigmoid.apply(a)


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    return LeakyRelu.apply(a, slope=slope)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    return Stack.apply(*tensors, axis=axis)


def pad(a, left: int = 0, right: int = 0) -> Tensor:
    return Pad.apply(a, left=left, right=right)


def frame_signal(x, window: int, hop: int) -> Tensor:
    """Frames x window matrix of a 1-D tensor (gather; no padding)"""
    x = as_tensor(x)
    count = 1 + (x.shape[0] - window) // hop
    if count <= 0:
        raise ShapeMismatch(f"Signal of {x.shape[0]} samples is shorter than window {window}")
    index = np.arange(count)[:, None] * hop + np.arange(window)[None, :]
    return GetItem.apply(x, index=index)


def round_half_away(v: np.ndarray) -> np.ndarray:
    """Round to nearest integer, ties away from zero"""
    v = np.asarray(v)
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def _check_same_shape(*tensors: Tensor):
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeMismatch(f"Expected equal shapes, got {sorted(shapes)}")


def causal_conv1d(x, w, b=None, history: Optional[np.ndarray] = None) -> Tensor:
    """
    Dense causal convolution

    Args:
        x: in_channels x T
        w: out_channels x in_channels x K
        b: optional bias of out_channels values
        history: in_channels x (K - 1) past samples; zeros when None

    Returns:
        out_channels x T tensor; step t depends on x[:, t - K + 1 .. t] only
    """
    y = CausalConv1d.apply(x, w, history=history)
    if b is not None:
        y = y + as_tensor(b).reshape(-1, 1)
    return y


def depthwise_conv1d(x, w, history: Optional[np.ndarray] = None) -> Tensor:
    return DepthwiseConv1d.apply(x, w, history=history)


def pointwise_conv(x, w, b=None) -> Tensor:
    w = as_tensor(w)
    if as_tensor(x).shape[0] != w.shape[1]:
        raise ShapeMismatch(f"Pointwise weights {w.shape} do not fit input {as_tensor(x).shape}")
    y = MatMul.apply(w, x)
    if b is not None:
        y = y + as_tensor(b).reshape(-1, 1)
    return y


def dsconv1d(x, depthwise_w, pointwise_w, b=None, history: Optional[np.ndarray] = None) -> Tensor:
    """Causal depthwise convolution followed by 1x1 channel mixing"""
    return pointwise_conv(depthwise_conv1d(x, depthwise_w, history=history), pointwise_w, b)


def conv2d(x, w, b=None, stride=(1, 1), padding=(0, 0)) -> Tensor:
    y = Conv2d.apply(x, w, stride=tuple(stride), padding=tuple(padding))
    if b is not None:
        y = y + as_tensor(b).reshape(-1, 1, 1)
    return y


def channel_norm(x, scale=None, shift=None, eps: float = 1e-5) -> Tensor:
    """Normalize across channels per time step, then scale * z + shift"""
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ShapeMismatch(f"channel_norm expects channels x time, got {x.shape}")
    z = ChannelNorm.apply(x, eps=eps)
    if scale is not None:
        scale = as_tensor(scale)
        if scale.shape[0] != x.shape[0]:
            raise ShapeMismatch(f"Norm scale of {scale.shape[0]} channels for {x.shape[0]} channels")
        z = z * scale.reshape(-1, 1)
    if shift is not None:
        z = z + as_tensor(shift).reshape(-1, 1)
    return z


def gated(xa, xb) -> Tensor:
    """tanh(xa) * sigmoid(xb)"""
    xa, xb = as_tensor(xa), as_tensor(xb)
    _check_same_shape(xa, xb)
    return Tanh.apply(xa) * Sigmoid.apply(xb)


@lru_cache(maxsize=256)
def interp_grid(steps: int, factor: Fraction, mode: str = 'linear', causal: bool = False):
    """
    Index grid for resampling `steps` samples by a rational factor

    The start-aligned grid puts output j at input position j / factor and
    holds the right edge. The causal grid puts output j at
    (j + 1) / factor - 1, so the last output of a block lands on the last
    input; positions before the block read one sample of history (index 0
    of the extended input).

    Returns:
        (lower, upper, weight, extended) index arrays and whether the input
        is extended by one history column
    """
    out_steps = steps * factor
    if out_steps.denominator != 1:
        raise NonIntegralOutputLength(f"{steps} steps x {factor} is not an integer")
    out_steps = int(out_steps)

    lower = np.zeros(out_steps, dtype=np.int64)
    upper = np.zeros(out_steps, dtype=np.int64)
    weight = np.zeros(out_steps, dtype=np.float64)
    extended = causal and mode == 'linear'
    for j in range(out_steps):
        if mode == 'nearest':
            lower[j] = upper[j] = (j * factor.denominator) // factor.numerator
            continue
        if causal:
            position = Fraction(j + 1) / factor
            last = steps
        else:
            position = Fraction(j) / factor
            last = steps - 1
        base = position.numerator // position.denominator
        lower[j] = min(base, last)
        upper[j] = min(base + 1, last)
        weight[j] = float(position - base) if base < last else 0.0
    return lower, upper, weight, extended


def interp(x, factor: Union[float, Fraction], mode: str = 'linear', causal: bool = False,
           history: Optional[np.ndarray] = None) -> Tensor:
    """
    Resample channels x T by a rational factor

    Args:
        x: channels x T
        factor: > 1 upsamples, < 1 downsamples; T * factor must be an integer
        mode: 'linear' (piecewise linear) or 'nearest' (sample repetition)
        causal: use the end-aligned causal grid
        history: channels x 1 previous sample for the causal grid

    Returns:
        channels x (T * factor) tensor
    """
    if mode not in ('linear', 'nearest'):
        raise ValueError(f"Unknown interpolation mode {mode}")
    x = as_tensor(x)
    factor = factor if isinstance(factor, Fraction) else as_fraction(factor)
    grid = interp_grid(x.shape[1], factor, mode, causal)
    if factor == 1:
        return x
    return Interp.apply(x, grid=grid, history=history)


def gru_step(x_t, h, w_ih, w_hh, b_ih, b_hh) -> Tensor:
    """
    One GRU update with gates ordered (reset, update, candidate)

        r = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
        z = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
        n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
        h' = (1 - z) * n + z * h
    """
    x_t, h, w_ih, w_hh = as_tensor(x_t), as_tensor(h), as_tensor(w_ih), as_tensor(w_hh)
    hidden = h.shape[0]
    if w_ih.shape != (3 * hidden, x_t.shape[0]) or w_hh.shape != (3 * hidden, hidden):
        raise ShapeMismatch(f"GRU weights {w_ih.shape}/{w_hh.shape} do not fit x {x_t.shape}, h {h.shape}")

    gi = w_ih @ x_t + b_ih
    gh = w_hh @ h + b_hh
    r = sigmoid(gi[0:hidden] + gh[0:hidden])
    z = sigmoid(gi[hidden:2 * hidden] + gh[hidden:2 * hidden])
    n = tanh(gi[2 * hidden:] + r * gh[2 * hidden:])
    return (1 - z) * n + z * h


def quantize_st(z, levels: int = 16) -> Tuple[np.ndarray, Tensor]:
    """
    Bounded scalar quantization with a straight-through gradient

    tanh bounds z to (-1, 1); the index is round_half_away((b + 1) / 2 * (levels - 1))
    and the dequantized value 2 * index / (levels - 1) - 1. The gradient of
    the dequantized value is the gradient of tanh(z).

    Returns:
        (indices, dequantized tensor)
    """
    bounded = tanh(z)
    dequant = StraightThrough.apply(bounded, levels=levels)
    steps = levels - 1
    index = round_half_away((bounded.data.astype(np.float64) + 1) / 2 * steps).astype(np.int64)
    return index, dequant


def dequantize(index, levels: int = 16) -> np.ndarray:
    return (2 * np.asarray(index, dtype=np.float64) / (levels - 1) - 1).astype(np.float32)


def gradcheck(fn: Callable[..., Tensor], inputs: List[Tensor], eps: float = 1e-3, seed: int = 0) -> float:
    """
    Compare analytic gradients against central finite differences

    Non-scalar outputs are projected onto a fixed random direction first.
    Run under default_dtype(np.float64) for meaningful results.

    Returns:
        Largest relative error ||analytic - numeric|| / max(||analytic||, ||numeric||) over inputs
    """
    rng = np.random.default_rng(seed)
    for t in inputs:
        t.grad = None

    out = fn(*inputs)
    projection = Tensor(rng.standard_normal(out.shape)) if out.size != 1 else None

    def scalar(o: Tensor) -> Tensor:
        return (o * projection).sum() if projection is not None else o.sum()

    scalar(out).backward()

    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = np.zeros_like(t.data)
        with no_grad():
            for i in range(t.size):
                original = t.data.flat[i]
                t.data.flat[i] = original + eps
                plus = scalar(fn(*inputs)).item()
                t.data.flat[i] = original - eps
                minus = scalar(fn(*inputs)).item()
                t.data.flat[i] = original
                numeric.flat[i] = (plus - minus) / (2 * eps)
        scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
        worst = max(worst, float(np.linalg.norm(analytic - numeric) / scale))
    return worst
