"""
Layer definitions for the desk-scale CNN.
Each layer computes its forward pass, caches what its backward pass needs,
and writes exact reverse-mode gradients into its parameter tensors.
"""

from dataclasses import dataclass, asdict
from typing import Dict, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.exceptions import BadArgumentError
from src.numerics.tensor import Tensor

LAYER_KINDS = ("conv2d", "maxpool2d", "relu", "linear", "flatten")

Shape = Tuple[int, ...]


@dataclass(frozen=True)
class LayerSpec:
    """
    Declarative description of one layer.

    Attributes:
        kind (str): One of conv2d, maxpool2d, relu, linear, flatten
        out_channels (int): Number of filters (conv2d)
        kernel_size (tuple): Kernel extents (conv2d, maxpool2d)
        stride (int): Step between windows; maxpool2d defaults to its kernel height
        padding (int): Zero padding on each spatial border (conv2d)
        out_features (int): Output width (linear)
        lr_mult (float): Learning-rate multiplier applied by the optimizer
    """
    kind: str
    out_channels: int = 0
    kernel_size: Tuple[int, int] = (0, 0)
    stride: int = 1
    padding: int = 0
    out_features: int = 0
    lr_mult: float = 1.0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise BadArgumentError(f"Unknown layer kind '{self.kind}', expected one of {LAYER_KINDS}")
        object.__setattr__(self, "kernel_size", tuple(int(k) for k in self.kernel_size))
        if self.lr_mult < 0 or not np.isfinite(self.lr_mult):
            raise BadArgumentError(f"Learning-rate multiplier must be a nonnegative real, got {self.lr_mult}")
        if self.kind in ("conv2d", "maxpool2d"):
            if len(self.kernel_size) != 2 or min(self.kernel_size) <= 0:
                raise BadArgumentError(f"{self.kind} kernel extents must be positive, got {self.kernel_size}")
            if self.stride <= 0:
                raise BadArgumentError(f"{self.kind} stride must be positive, got {self.stride}")
        if self.kind == "conv2d":
            if self.out_channels <= 0:
                raise BadArgumentError(f"conv2d needs a positive filter count, got {self.out_channels}")
            if self.padding < 0:
                raise BadArgumentError(f"conv2d padding must be nonnegative, got {self.padding}")
        if self.kind == "linear" and self.out_features <= 0:
            raise BadArgumentError(f"linear needs a positive output width, got {self.out_features}")

    @classmethod
    def conv2d(cls, out_channels: int, kernel: int = 3, stride: int = 1,
               padding: int = 0, lr_mult: float = 1.0) -> "LayerSpec":
        return cls("conv2d", out_channels=out_channels, kernel_size=(kernel, kernel),
                   stride=stride, padding=padding, lr_mult=lr_mult)

    @classmethod
    def maxpool2d(cls, kernel: int = 2, stride: Optional[int] = None) -> "LayerSpec":
        return cls("maxpool2d", kernel_size=(kernel, kernel), stride=stride or kernel)

    @classmethod
    def relu(cls) -> "LayerSpec":
        return cls("relu")

    @classmethod
    def flatten(cls) -> "LayerSpec":
        return cls("flatten")

    @classmethod
    def linear(cls, out_features: int, lr_mult: float = 1.0) -> "LayerSpec":
        return cls("linear", out_features=out_features, lr_mult=lr_mult)

    def with_lr_mult(self, lr_mult: float) -> "LayerSpec":
        values = asdict(self)
        values["lr_mult"] = lr_mult
        return LayerSpec(**values)

    def to_dict(self) -> Dict:
        values = asdict(self)
        values["kernel_size"] = list(self.kernel_size)
        return values

    @classmethod
    def from_dict(cls, values: Dict) -> "LayerSpec":
        values = dict(values)
        values["kernel_size"] = tuple(values.get("kernel_size", (0, 0)))
        return cls(**values)


class Layer:
    """
    Base class for all layers. Subclasses set output_shape in __init__ and
    implement _forward / _backward on batched arrays.
    """

    def __init__(self, spec: LayerSpec, input_shape: Shape, index: int):
        self.spec = spec
        self.input_shape = tuple(input_shape)
        self.index = index
        self.output_shape: Shape = self.input_shape
        self.parameters: Dict[str, Tensor] = {}
        self._cache = None

    @property
    def name(self) -> str:
        return f"layer{self.index}.{self.spec.kind}"

    def fail(self, message: str) -> BadArgumentError:
        return BadArgumentError(f"layer {self.index} ({self.spec.kind}): {message}")

    def init_parameters(self, rng: np.random.Generator):
        """Layers without parameters have nothing to draw."""

    def forward(self, x: np.ndarray, cache: bool = True) -> np.ndarray:
        if tuple(x.shape[1:]) != self.input_shape:
            raise self.fail(f"expected per-sample shape {self.input_shape}, got {tuple(x.shape[1:])}")
        out, saved = self._forward(x)
        self._cache = saved if cache else None
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise self.fail("backward called without a cached forward pass")
        return self._backward(grad_out, self._cache)

    def clear_cache(self):
        self._cache = None

    def routing(self) -> Optional[np.ndarray]:
        """Piecewise branch taken by the cached forward pass (ReLU masks, pooling winners)."""
        return None

    def _forward(self, x: np.ndarray):
        raise NotImplementedError

    def _backward(self, grad_out: np.ndarray, saved):
        raise NotImplementedError


def _uniform_fan_in(rng: np.random.Generator, shape: Shape, fan_in: int) -> np.ndarray:
    limit = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-limit, limit, size=shape)


class Conv2d(Layer):
    """2-D convolution over NCHW batches, computed as a matrix product on unfolded windows."""

    def __init__(self, spec: LayerSpec, input_shape: Shape, index: int):
        super().__init__(spec, input_shape, index)
        if len(self.input_shape) != 3:
            raise self.fail(f"needs a C×H×W input, got {self.input_shape}")
        channels, height, width = self.input_shape
        kh, kw = spec.kernel_size
        padded_h = height + 2 * spec.padding
        padded_w = width + 2 * spec.padding
        if kh > padded_h or kw > padded_w:
            raise self.fail(f"kernel {spec.kernel_size} larger than padded input {(padded_h, padded_w)}")
        out_h = (padded_h - kh) // spec.stride + 1
        out_w = (padded_w - kw) // spec.stride + 1
        self.output_shape = (spec.out_channels, out_h, out_w)
        self.parameters = {
            "weight": Tensor.zeros((spec.out_channels, channels, kh, kw)),
            "bias": Tensor.zeros((spec.out_channels,)),
        }

    def init_parameters(self, rng: np.random.Generator):
        weight = self.parameters["weight"]
        fan_in = int(np.prod(weight.shape[1:]))
        weight.data = _uniform_fan_in(rng, weight.shape, fan_in)
        self.parameters["bias"].data = np.zeros(self.parameters["bias"].shape)

    def _forward(self, x: np.ndarray):
        pad = self.spec.padding
        stride = self.spec.stride
        kh, kw = self.spec.kernel_size
        if pad:
            x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        batch = x.shape[0]
        filters, out_h, out_w = self.output_shape
        windows = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
        cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(batch * out_h * out_w, -1)
        weight = self.parameters["weight"].data.reshape(filters, -1)
        out = cols @ weight.T + self.parameters["bias"].data
        out = out.reshape(batch, out_h, out_w, filters).transpose(0, 3, 1, 2)
        return np.ascontiguousarray(out), (cols, x.shape)

    def _backward(self, grad_out: np.ndarray, saved):
        cols, padded_shape = saved
        pad = self.spec.padding
        stride = self.spec.stride
        kh, kw = self.spec.kernel_size
        filters, out_h, out_w = self.output_shape
        channels, height, width = self.input_shape
        weight = self.parameters["weight"]

        grad_mat = grad_out.transpose(0, 2, 3, 1).reshape(-1, filters)
        weight.set_grad((grad_mat.T @ cols).reshape(weight.shape))
        self.parameters["bias"].set_grad(grad_mat.sum(axis=0))

        grad_cols = (grad_mat @ weight.data.reshape(filters, -1))
        grad_cols = grad_cols.reshape(-1, out_h, out_w, channels, kh, kw)
        grad_padded = np.zeros(padded_shape)
        row_stop = stride * (out_h - 1) + 1
        col_stop = stride * (out_w - 1) + 1
        for i in range(kh):
            for j in range(kw):
                grad_padded[:, :, i:i + row_stop:stride, j:j + col_stop:stride] += \
                    grad_cols[..., i, j].transpose(0, 3, 1, 2)
        return grad_padded[:, :, pad:pad + height, pad:pad + width]


class MaxPool2d(Layer):
    """Max pooling; ties go to the first maximal element in row-major window order."""

    def __init__(self, spec: LayerSpec, input_shape: Shape, index: int):
        super().__init__(spec, input_shape, index)
        if len(self.input_shape) != 3:
            raise self.fail(f"needs a C×H×W input, got {self.input_shape}")
        channels, height, width = self.input_shape
        kh, kw = spec.kernel_size
        if kh > height or kw > width:
            raise self.fail(f"window {spec.kernel_size} larger than input {(height, width)}")
        self.output_shape = (channels, (height - kh) // spec.stride + 1, (width - kw) // spec.stride + 1)

    def _forward(self, x: np.ndarray):
        kh, kw = self.spec.kernel_size
        stride = self.spec.stride
        windows = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
        flat = windows.reshape(*windows.shape[:4], kh * kw)
        winners = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, winners[..., None], axis=-1)[..., 0]
        return np.ascontiguousarray(out), (winners, x.shape[0])

    def routing(self) -> Optional[np.ndarray]:
        return None if self._cache is None else self._cache[0]

    def _backward(self, grad_out: np.ndarray, saved):
        winners, batch = saved
        kw = self.spec.kernel_size[1]
        stride = self.spec.stride
        channels, out_h, out_w = self.output_shape
        rows = np.arange(out_h)[None, None, :, None] * stride + winners // kw
        cols = np.arange(out_w)[None, None, None, :] * stride + winners % kw
        batch_idx = np.arange(batch)[:, None, None, None]
        channel_idx = np.arange(channels)[None, :, None, None]
        index = np.broadcast_arrays(batch_idx, channel_idx, rows, cols)
        grad_in = np.zeros((batch,) + self.input_shape)
        np.add.at(grad_in, tuple(index), grad_out)
        return grad_in


class ReLU(Layer):

    def _forward(self, x: np.ndarray):
        mask = x > 0
        return np.where(mask, x, 0.0), mask

    def _backward(self, grad_out: np.ndarray, mask):
        return np.where(mask, grad_out, 0.0)

    def routing(self) -> Optional[np.ndarray]:
        return self._cache


class Flatten(Layer):

    def __init__(self, spec: LayerSpec, input_shape: Shape, index: int):
        super().__init__(spec, input_shape, index)
        self.output_shape = (int(np.prod(self.input_shape)),)

    def _forward(self, x: np.ndarray):
        return x.reshape(x.shape[0], -1), x.shape

    def _backward(self, grad_out: np.ndarray, original_shape):
        return grad_out.reshape(original_shape)


class Linear(Layer):
    """Fully-connected layer, y = x W + b with W stored as (in_features, out_features)."""

    def __init__(self, spec: LayerSpec, input_shape: Shape, index: int):
        super().__init__(spec, input_shape, index)
        if len(self.input_shape) != 1:
            raise self.fail(f"needs a flat input, got {self.input_shape}; insert a flatten layer")
        in_features = self.input_shape[0]
        self.output_shape = (spec.out_features,)
        self.parameters = {
            "weight": Tensor.zeros((in_features, spec.out_features)),
            "bias": Tensor.zeros((spec.out_features,)),
        }

    def init_parameters(self, rng: np.random.Generator):
        weight = self.parameters["weight"]
        weight.data = _uniform_fan_in(rng, weight.shape, weight.shape[0])
        self.parameters["bias"].data = np.zeros(self.parameters["bias"].shape)

    def _forward(self, x: np.ndarray):
        out = x @ self.parameters["weight"].data + self.parameters["bias"].data
        return out, x

    def _backward(self, grad_out: np.ndarray, x):
        self.parameters["weight"].set_grad(x.T @ grad_out)
        self.parameters["bias"].set_grad(grad_out.sum(axis=0))
        return grad_out @ self.parameters["weight"].data.T


LAYER_CLASSES = {
    "conv2d": Conv2d,
    "maxpool2d": MaxPool2d,
    "relu": ReLU,
    "linear": Linear,
    "flatten": Flatten,
}


def build_layer(spec: LayerSpec, input_shape: Shape, index: int) -> Layer:
    return LAYER_CLASSES[spec.kind](spec, input_shape, index)
