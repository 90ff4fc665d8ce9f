"""Feedforward encoder: conv backbone (H space) + projection head (Z space).

Forward caches every layer input; :func:`backward` differentiates ``<dZ, Z>`` exactly.
"""

from __future__ import annotations

import itertools
from collections.abc import Iterable
from dataclasses import dataclass, field, replace
from typing import Any, NamedTuple, Optional

import numpy as np
import numpy.typing as npt
from numpy.lib.stride_tricks import sliding_window_view
from typing_extensions import TypeAlias

from .exceptions import ShapeError, StaleCacheError, ValidationError
from .models import (
    ConvSpec,
    DenseSpec,
    GlobalAvgPoolSpec,
    LayerSpec,
    MaxPoolSpec,
    ReLUSpec,
)
from .numeric import Matrix, RandomStream

Array: TypeAlias = npt.NDArray[Any]
ParamGrads: TypeAlias = list[Optional[tuple[Array, Array]]]

_tokens = itertools.count(1)


def _next_token() -> int:
    return next(_tokens)


def layer_shapes(input_shape: tuple[int, ...], layers: list[LayerSpec]) -> list[tuple[int, ...]]:
    """Per-layer output shapes (batch axis excluded); raises on the first misfit layer."""
    shapes: list[tuple[int, ...]] = []
    shape = tuple(input_shape)
    for i, spec in enumerate(layers):
        where = f"layer {i} ({spec.kind})"
        if isinstance(spec, ConvSpec):
            if len(shape) != 3 or shape[0] != spec.in_channels:
                raise ShapeError(f"{where}: expected ({spec.in_channels}, H, W) input, got {shape}")
            shape = (spec.out_channels, shape[1], shape[2])
        elif isinstance(spec, MaxPoolSpec):
            if len(shape) != 3 or min(shape[1], shape[2]) < spec.size:
                raise ShapeError(
                    f"{where}: expected (C, H, W) with H and W >= {spec.size}, got {shape}"
                )
            shape = (shape[0], shape[1] // spec.size, shape[2] // spec.size)
        elif isinstance(spec, GlobalAvgPoolSpec):
            if len(shape) != 3:
                raise ShapeError(f"{where}: expected (C, H, W) input, got {shape}")
            shape = (shape[0],)
        elif isinstance(spec, DenseSpec):
            flat = int(np.prod(shape))
            if flat != spec.in_units:
                raise ShapeError(f"{where}: expected {spec.in_units} input units, got {flat}")
            shape = (spec.out_units,)
        shapes.append(shape)
    return shapes


def _has_params(spec: LayerSpec) -> bool:
    return isinstance(spec, (ConvSpec, DenseSpec))


def param_shapes(spec: LayerSpec) -> Optional[tuple[tuple[int, ...], int]]:
    """Weight shape and bias length of a layer, or None for parameter-free layers."""
    if isinstance(spec, ConvSpec):
        return (spec.out_channels, spec.in_channels, spec.kernel, spec.kernel), spec.out_channels
    if isinstance(spec, DenseSpec):
        return (spec.in_units, spec.out_units), spec.out_units
    return None


def _init_layer(
    spec: LayerSpec, rng: RandomStream, dtype: npt.DTypeLike
) -> tuple[Optional[Array], Optional[Array]]:
    """Glorot-uniform weights, zero biases."""
    shapes = param_shapes(spec)
    if shapes is None:
        return None, None
    shape, n_out = shapes
    if len(shape) == 4:
        area = shape[2] * shape[3]
        fan_in, fan_out = shape[1] * area, shape[0] * area
    else:
        fan_in, fan_out = shape
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    w = rng.generator().uniform(-limit, limit, size=shape).astype(dtype)
    return w, np.zeros(n_out, dtype=dtype)


@dataclass
class EncoderParams:
    layers: list[LayerSpec]
    backbone_len: int
    input_shape: tuple[int, int, int]
    weights: list[Optional[Array]]
    biases: list[Optional[Array]]
    frozen: list[bool]
    version: int = 0
    token: int = field(default_factory=_next_token)

    def __post_init__(self) -> None:
        n = len(self.layers)
        if not n or not isinstance(self.layers[-1], DenseSpec):
            raise ValidationError("the last layer must be a dense readout layer")
        if not 0 <= self.backbone_len < n:
            raise ValidationError(f"backbone_len must be in [0, {n - 1}], got {self.backbone_len}")
        if not len(self.weights) == len(self.biases) == len(self.frozen) == n:
            raise ValidationError("weights, biases and freeze mask must have one entry per layer")
        layer_shapes(self.input_shape, self.layers)

    @property
    def readout_dim(self) -> int:
        return self.layers[-1].out_units  # type: ignore[union-attr]

    @property
    def readout_index(self) -> int:
        return len(self.layers) - 1

    @property
    def dtype(self) -> np.dtype[Any]:
        return self.weights[-1].dtype  # type: ignore[union-attr]

    @property
    def param_count(self) -> int:
        return sum(w.size + b.size for w, b in self.arrays())

    def arrays(self) -> list[tuple[Array, Array]]:
        """Weight/bias pairs of the parameterised layers in declaration order."""
        pairs = zip(self.weights, self.biases)
        return [(w, b) for w, b in pairs if w is not None and b is not None]

    def copy(self, **changes: Any) -> EncoderParams:
        weights = [None if w is None else w.copy() for w in self.weights]
        biases = [None if b is None else b.copy() for b in self.biases]
        base = replace(
            self,
            layers=list(self.layers),
            weights=weights,
            biases=biases,
            frozen=list(self.frozen),
            version=0,
            token=_next_token(),
        )
        return replace(base, **changes) if changes else base

    def astype(self, dtype: npt.DTypeLike) -> EncoderParams:
        p = self.copy()
        p.weights = [None if w is None else w.astype(dtype) for w in p.weights]
        p.biases = [None if b is None else b.astype(dtype) for b in p.biases]
        return p


def build_encoder(
    input_shape: tuple[int, int, int],
    layers: list[LayerSpec],
    backbone_len: int,
    rng: RandomStream,
    dtype: npt.DTypeLike = np.float64,
) -> EncoderParams:
    weights: list[Optional[Array]] = []
    biases: list[Optional[Array]] = []
    for i, spec in enumerate(layers):
        w, b = _init_layer(spec, rng.child(i), dtype)
        weights.append(w)
        biases.append(b)
    return EncoderParams(
        layers=list(layers),
        backbone_len=backbone_len,
        input_shape=tuple(input_shape),  # type: ignore[arg-type]
        weights=weights,
        biases=biases,
        frozen=[False] * len(layers),
    )


# --- forward / backward --------------------------------------------------------------------


@dataclass
class ForwardCache:
    token: int
    version: int
    inputs: list[Array]
    aux: list[Any]
    z_shape: tuple[int, ...]


class ForwardResult(NamedTuple):
    h: Matrix
    z: Matrix
    cache: ForwardCache


def _conv_forward(x: Array, w: Array, b: Array, k: int) -> tuple[Array, Array]:
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))
    out = np.tensordot(windows, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.moveaxis(out, 3, 1) + b[None, :, None, None], windows


def _conv_param_grads(dout: Array, windows: Array) -> tuple[Array, Array]:
    dw = np.tensordot(dout, windows, axes=([0, 2, 3], [0, 2, 3]))
    return dw, dout.sum(axis=(0, 2, 3))


def _conv_input_grad(dout: Array, w: Array, k: int) -> Array:
    pad = k // 2
    dp = np.pad(dout, ((0, 0), (0, 0), (k - 1 - pad, pad), (k - 1 - pad, pad)))
    dwin = sliding_window_view(dp, (k, k), axis=(2, 3))
    dx = np.tensordot(dwin, w[:, :, ::-1, ::-1], axes=([1, 4, 5], [0, 2, 3]))
    return np.moveaxis(dx, 3, 1)


def _pool_forward(x: Array, s: int) -> tuple[Array, Array]:
    # odd trailing rows and columns are dropped
    n, c, h, w = x.shape
    h, w = h - h % s, w - w % s
    blocks = x[:, :, :h, :w].reshape(n, c, h // s, s, w // s, s).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(n, c, h // s, w // s, s * s)
    idx = blocks.argmax(axis=-1)
    return np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0], idx


def _pool_backward(dout: Array, idx: Array, s: int, in_shape: tuple[int, ...]) -> Array:
    n, c = in_shape[:2]
    ho, wo = idx.shape[2], idx.shape[3]
    routed = np.zeros((*idx.shape, s * s), dtype=dout.dtype)
    np.put_along_axis(routed, idx[..., None], dout[..., None], axis=-1)
    routed = routed.reshape(n, c, ho, wo, s, s).transpose(0, 1, 2, 4, 3, 5)
    dx = np.zeros(in_shape, dtype=dout.dtype)
    dx[:, :, : ho * s, : wo * s] = routed.reshape(n, c, ho * s, wo * s)
    return dx


def _layer_forward(
    spec: LayerSpec, w: Optional[Array], b: Optional[Array], x: Array
) -> tuple[Array, Any]:
    if isinstance(spec, ConvSpec):
        return _conv_forward(x, w, b, spec.kernel)  # type: ignore[arg-type]
    if isinstance(spec, ReLUSpec):
        mask = x > 0
        return np.where(mask, x, 0).astype(x.dtype, copy=False), mask
    if isinstance(spec, MaxPoolSpec):
        return _pool_forward(x, spec.size)
    if isinstance(spec, GlobalAvgPoolSpec):
        return x.mean(axis=(2, 3)), None
    flat = x.reshape(x.shape[0], -1)
    return flat @ w + b, None


def forward(images: Array, p: EncoderParams) -> ForwardResult:
    x = np.asarray(images, dtype=p.dtype)
    if x.ndim != 4 or tuple(x.shape[1:]) != tuple(p.input_shape):
        raise ShapeError(
            f"layer 0 ({p.layers[0].kind}): expected images of shape "
            f"(n, {', '.join(map(str, p.input_shape))}), got {x.shape}"
        )
    h = x.reshape(x.shape[0], -1)
    inputs: list[Array] = []
    aux: list[Any] = []
    for i, spec in enumerate(p.layers):
        inputs.append(x)
        x, extra = _layer_forward(spec, p.weights[i], p.biases[i], x)
        aux.append(extra)
        if i == p.backbone_len - 1:
            h = x.reshape(x.shape[0], -1)
    z = x.reshape(x.shape[0], -1)
    cache = ForwardCache(token=p.token, version=p.version, inputs=inputs, aux=aux, z_shape=z.shape)
    return ForwardResult(h=h, z=z, cache=cache)


def backward(cache: ForwardCache, dz: Matrix, p: EncoderParams) -> ParamGrads:
    """Gradients of ``<dz, Z>`` for every parameterised layer; frozen layers get zeros."""
    if cache.token != p.token or cache.version != p.version:
        raise StaleCacheError("forward cache does not belong to the current parameters")
    dz = np.asarray(dz, dtype=p.dtype)
    if dz.shape != cache.z_shape:
        raise ShapeError(f"dZ has shape {dz.shape}, expected {cache.z_shape}")

    grads: ParamGrads = [
        None if w is None else (np.zeros_like(w), np.zeros_like(b))  # type: ignore[arg-type]
        for w, b in zip(p.weights, p.biases)
    ]
    active = [i for i, spec in enumerate(p.layers) if _has_params(spec) and not p.frozen[i]]
    if not active:
        return grads

    d: Array = dz
    for i in range(len(p.layers) - 1, active[0] - 1, -1):
        spec, x, extra = p.layers[i], cache.inputs[i], cache.aux[i]
        need_dx = i > active[0]
        if isinstance(spec, ConvSpec):
            if not p.frozen[i]:
                grads[i] = _conv_param_grads(d, extra)
            if need_dx:
                d = _conv_input_grad(d, p.weights[i], spec.kernel)  # type: ignore[arg-type]
        elif isinstance(spec, DenseSpec):
            flat = x.reshape(x.shape[0], -1)
            w = p.weights[i]
            if not p.frozen[i]:
                grads[i] = (flat.T @ d, d.sum(axis=0))
            if need_dx:
                d = (d @ w.T).reshape(x.shape)  # type: ignore[union-attr]
        elif isinstance(spec, ReLUSpec):
            d = d * extra
        elif isinstance(spec, MaxPoolSpec):
            d = _pool_backward(d, extra, spec.size, x.shape)
        elif isinstance(spec, GlobalAvgPoolSpec):
            area = x.shape[2] * x.shape[3]
            d = np.broadcast_to((d / area)[:, :, None, None], x.shape).copy()
    return grads


# --- parameter surgery ---------------------------------------------------------------------


def reinit_readout(p: EncoderParams, new_dim: int, rng: RandomStream) -> EncoderParams:
    """Replace the readout layer with a freshly initialised one of width ``new_dim``."""
    if new_dim < 1:
        raise ValidationError(f"readout dimension must be >= 1, got {new_dim}")
    idx = p.readout_index
    old = p.layers[idx]
    spec = DenseSpec(in_units=old.in_units, out_units=new_dim)  # type: ignore[union-attr]
    w, b = _init_layer(spec, rng, p.dtype)
    out = p.copy()
    out.layers[idx] = spec
    out.weights[idx] = w
    out.biases[idx] = b
    return out


def set_freeze(p: EncoderParams, frozen_layers: Iterable[int]) -> EncoderParams:
    frozen = set(frozen_layers)
    n = len(p.layers)
    bad = sorted(i for i in frozen if not 0 <= i < n)
    if bad:
        raise ValidationError(f"layer index {bad[0]} out of range for a {n}-layer encoder")
    out = p.copy()
    out.frozen = [i in frozen for i in range(n)]
    return out


def all_but_readout(p: EncoderParams) -> set[int]:
    return set(range(p.readout_index))


# --- inference -----------------------------------------------------------------------------


def scale_images(images: Array, dtype: npt.DTypeLike = np.float64) -> Array:
    """uint8 pixels to floats in [0, 1]."""
    return np.asarray(images, dtype=dtype) / 255.0


def embed(p: EncoderParams, images: Array, chunk: int = 256) -> tuple[Matrix, Matrix]:
    """Deterministic inference over uint8 images (no augmentation); returns ``(H, Z)``."""
    images = np.asarray(images)
    if len(images) == 0:
        shapes = layer_shapes(p.input_shape, p.layers)
        h_shape = shapes[p.backbone_len - 1] if p.backbone_len else p.input_shape
        h_dim = int(np.prod(h_shape))
        return np.zeros((0, h_dim), p.dtype), np.zeros((0, p.readout_dim), p.dtype)
    hs, zs = [], []
    for start in range(0, len(images), chunk):
        result = forward(scale_images(images[start : start + chunk], p.dtype), p)
        hs.append(result.h)
        zs.append(result.z)
    return np.concatenate(hs), np.concatenate(zs)
