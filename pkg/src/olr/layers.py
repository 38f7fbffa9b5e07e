"""Layer specifications and a sequential network built from them.

Layer parameters follow the ``(k, k, c, s, p)`` convention: kernel size,
channel count, stride and padding. Shapes exclude the batch axis.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor

KINDS = ("conv2d", "conv_transpose2d", "dense", "avg_pool2d", "max_pool2d",
         "relu", "sigmoid", "flatten", "reshape")


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    channels: int | None = None
    kernel: tuple[int, int] = (3, 3)
    stride: int = 1
    padding: str = "same"
    shape: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.padding not in ("same", "valid"):
            raise ValueError(f"padding must be 'same' or 'valid', got {self.padding!r}")
        if self.stride < 1:
            raise ValueError("stride must be positive")

    def describe(self) -> str:
        if self.kind in ("conv2d", "conv_transpose2d"):
            k = self.kernel
            return f"{self.kind}({k[0]},{k[1]},{self.channels},{self.stride},'{self.padding}')"
        if self.kind == "dense":
            return f"dense({self.channels})"
        if self.kind == "reshape":
            return f"reshape{self.shape}"
        if self.kind.endswith("pool2d"):
            return f"{self.kind}({self.kernel[0]},{self.stride})"
        return self.kind


def conv(kh: int, kw: int, channels: int, stride: int = 1, padding: str = "same") -> LayerSpec:
    return LayerSpec("conv2d", channels, (kh, kw), stride, padding)


def conv_t(kh: int, kw: int, channels: int, stride: int = 2, padding: str = "same") -> LayerSpec:
    return LayerSpec("conv_transpose2d", channels, (kh, kw), stride, padding)


def dense(units: int) -> LayerSpec:
    return LayerSpec("dense", units)


def max_pool(size: int = 2) -> LayerSpec:
    return LayerSpec("max_pool2d", kernel=(size, size), stride=size, padding="valid")


def avg_pool(size: int) -> LayerSpec:
    return LayerSpec("avg_pool2d", kernel=(size, size), stride=size, padding="valid")


def reshape(*shape: int) -> LayerSpec:
    return LayerSpec("reshape", shape=tuple(shape))


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


def relu() -> LayerSpec:
    return LayerSpec("relu")


def sigmoid() -> LayerSpec:
    return LayerSpec("sigmoid")


def _output_shape(index: int, spec: LayerSpec, shape: tuple) -> tuple:
    where = f"layer {index} ({spec.describe()})"
    kind = spec.kind
    if kind in ("conv2d", "conv_transpose2d", "avg_pool2d", "max_pool2d"):
        if len(shape) != 3:
            raise ShapeError(f"{where}: expects (H, W, C) input, got rank-{len(shape)} shape {shape}")
        h, w, c = shape
        kh, kw = spec.kernel
        if kind == "conv2d":
            for name, n, k in (("height", h, kh), ("width", w, kw)):
                if spec.padding == "valid" and n < k:
                    raise ShapeError(f"{where}: input {name} {n} smaller than kernel {k}")
            ho = T.conv_output_size(h, kh, spec.stride, spec.padding)[0]
            wo = T.conv_output_size(w, kw, spec.stride, spec.padding)[0]
            return (ho, wo, spec.channels)
        if kind == "conv_transpose2d":
            if spec.padding == "same":
                return (h * spec.stride, w * spec.stride, spec.channels)
            return ((h - 1) * spec.stride + kh, (w - 1) * spec.stride + kw, spec.channels)
        for name, n in (("height", h), ("width", w)):
            if n < kh:
                raise ShapeError(f"{where}: input {name} {n} smaller than pool window {kh}")
        return ((h - kh) // spec.stride + 1, (w - kw) // spec.stride + 1, c)
    if kind == "dense":
        if len(shape) != 1:
            raise ShapeError(f"{where}: expects a flat input, got shape {shape}")
        return (spec.channels,)
    if kind == "flatten":
        return (int(np.prod(shape)),)
    if kind == "reshape":
        if int(np.prod(shape)) != int(np.prod(spec.shape)):
            raise ShapeError(f"{where}: cannot reshape {shape} ({int(np.prod(shape))} values) "
                             f"to {spec.shape} ({int(np.prod(spec.shape))} values)")
        return tuple(spec.shape)
    return tuple(shape)


class Network:
    """Sequential stack of ``LayerSpec`` layers with its own parameter set."""

    def __init__(self, specs: Iterable[LayerSpec], input_shape: Sequence[int], seed: int = 0,
                 dtype=np.float32):
        self.specs = list(specs)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        self.input_shapes: list[tuple] = []
        self.output_shapes: list[tuple] = []
        rng = np.random.default_rng(seed)
        shape = self.input_shape
        for i, spec in enumerate(self.specs):
            self.input_shapes.append(shape)
            self._init_params(i, spec, shape, rng)
            shape = _output_shape(i, spec, shape)
            self.output_shapes.append(shape)

    @property
    def output_shape(self) -> tuple:
        return self.output_shapes[-1] if self.output_shapes else self.input_shape

    def _init_params(self, i: int, spec: LayerSpec, shape: tuple, rng: np.random.Generator):
        if spec.kind == "conv2d":
            kh, kw = spec.kernel
            cin = shape[-1]
            w = T.he_normal(rng, (kh, kw, cin, spec.channels), kh * kw * cin, self.dtype)
        elif spec.kind == "conv_transpose2d":
            kh, kw = spec.kernel
            cin = shape[-1]
            w = T.he_normal(rng, (kh, kw, spec.channels, cin), kh * kw * cin, self.dtype)
        elif spec.kind == "dense":
            if len(shape) != 1:
                raise ShapeError(f"layer {i} ({spec.describe()}): expects a flat input, got shape {shape}")
            w = T.he_normal(rng, (shape[0], spec.channels), shape[0], self.dtype)
        else:
            return
        self.params[f"{i}.{spec.kind}.weight"] = Tensor(w, requires_grad=True)
        self.params[f"{i}.{spec.kind}.bias"] = Tensor(np.zeros(spec.channels, self.dtype),
                                                      requires_grad=True)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            if name not in state:
                raise KeyError(f"missing parameter {name!r} in state")
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ShapeError(f"parameter {name!r}: expected shape {p.shape}, got {value.shape}")
            p.data = value.astype(self.dtype)

    def forward(self, x, collect: bool = False):
        """Run the stack on a batch ``x`` of shape (N, *input_shape).

        With ``collect=True`` returns the list of every layer's output instead.
        """
        x = T.as_tensor(x)
        if tuple(x.shape[1:]) != self.input_shape:
            bad = _first_mismatch(x.shape[1:], self.input_shape)
            raise ShapeError(f"network input: expected per-sample shape {self.input_shape}, "
                             f"got {tuple(x.shape[1:])} (dimension {bad} differs)")
        outputs = []
        for i, spec in enumerate(self.specs):
            x = self._apply(i, spec, x)
            outputs.append(x)
        return outputs if collect else x

    __call__ = forward

    def _apply(self, i: int, spec: LayerSpec, x: Tensor) -> Tensor:
        kind = spec.kind
        expected = self.input_shapes[i]
        if tuple(x.shape[1:]) != expected:
            bad = _first_mismatch(x.shape[1:], expected)
            raise ShapeError(f"layer {i} ({spec.describe()}): expected input {expected}, "
                             f"got {tuple(x.shape[1:])} (dimension {bad} differs)")
        if kind == "conv2d":
            p = self.params
            return T.conv2d(x, p[f"{i}.conv2d.weight"], p[f"{i}.conv2d.bias"],
                            spec.stride, spec.padding)
        if kind == "conv_transpose2d":
            p = self.params
            return T.conv_transpose2d(x, p[f"{i}.conv_transpose2d.weight"],
                                      p[f"{i}.conv_transpose2d.bias"], spec.stride, spec.padding)
        if kind == "dense":
            return T.matmul(x, self.params[f"{i}.dense.weight"]) + self.params[f"{i}.dense.bias"]
        if kind == "max_pool2d":
            return T.max_pool2d(x, spec.kernel[0], spec.stride)
        if kind == "avg_pool2d":
            return T.avg_pool2d(x, spec.kernel[0], spec.stride)
        if kind == "relu":
            return T.relu(x)
        if kind == "sigmoid":
            return T.sigmoid(x)
        if kind == "flatten":
            return x.reshape(x.shape[0], -1)
        return x.reshape((x.shape[0],) + tuple(spec.shape))


def _first_mismatch(got: Sequence[int], want: Sequence[int]) -> int:
    if len(got) != len(want):
        return min(len(got), len(want))
    for d, (a, b) in enumerate(zip(got, want)):
        if a != b:
            return d
    return -1


# Reference decoder for 38 labels x 32-wide embeddings and 176x176x3 output.
REFERENCE_DECODER: list[LayerSpec] = [
    flatten(),
    dense(18432),
    reshape(6, 6, 512),
    conv_t(3, 3, 128, 2, "same"),
    conv(3, 3, 64, 1, "same"),
    conv_t(3, 3, 64, 2, "same"),
    conv(3, 3, 64, 1, "valid"),
    conv_t(3, 3, 64, 2, "same"),
    conv(3, 3, 64, 1, "same"),
    conv_t(3, 3, 64, 2, "same"),
    conv(3, 3, 64, 1, "same"),
    conv_t(3, 3, 64, 2, "same"),
    conv(3, 3, 32, 1, "same"),
    conv(3, 3, 3, 1, "same"),
]

REFERENCE_OUTPUT_SIZES: list[tuple[int, ...]] = [
    (1216,), (18432,), (6, 6, 512), (12, 12, 128), (12, 12, 64), (24, 24, 64), (22, 22, 64),
    (44, 44, 64), (44, 44, 64), (88, 88, 64), (88, 88, 64), (176, 176, 64), (176, 176, 32),
    (176, 176, 3),
]
