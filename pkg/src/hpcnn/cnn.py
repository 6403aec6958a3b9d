"""
Convolution -> ReLU -> max pooling -> dense -> softmax, forward and backward.

Every function accepts either a single sample or a batch with one leading
axis. Arithmetic is float64 throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import CacheMismatch, HpcError, NumericalError, ShapeMismatch


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class ConvLayer:
    filters: np.ndarray  # (K, F, F)
    biases: np.ndarray  # (K,)
    stride: int = 1

    def __post_init__(self):
        f = np.asarray(self.filters)
        if f.ndim != 3 or f.shape[0] < 1 or f.shape[1] < 1 or f.shape[1] != f.shape[2]:
            raise ShapeMismatch(f"filters must be (K, F, F), got {f.shape}")
        if np.shape(self.biases) != (f.shape[0],):
            raise ShapeMismatch(f"conv biases must be ({f.shape[0]},), got {np.shape(self.biases)}")
        if self.stride < 1:
            raise HpcError("stride must be >= 1")

    @property
    def num_filters(self) -> int:
        return self.filters.shape[0]

    @property
    def filter_size(self) -> int:
        return self.filters.shape[1]


@dataclass(frozen=True, eq=False)
class DenseLayer:
    weights: np.ndarray  # (N_out, N_in)
    biases: np.ndarray  # (N_out,)

    def __post_init__(self):
        w = np.asarray(self.weights)
        if w.ndim != 2 or np.shape(self.biases) != (w.shape[0],):
            raise ShapeMismatch(f"dense weights {w.shape} / biases {np.shape(self.biases)} disagree")


def conv_output_side(side: int, size: int, stride: int) -> int:
    if side < size:
        raise ShapeMismatch(f"input side {side} smaller than window {size}")
    return (side - size) // stride + 1


def pooled_side(input_side: int, filter_size: int, conv_stride: int, pool_size: int, pool_stride: int) -> int:
    return conv_output_side(conv_output_side(input_side, filter_size, conv_stride), pool_size, pool_stride)


@dataclass(frozen=True, eq=False)
class CnnModel:
    conv: ConvLayer
    dense: DenseLayer
    input_side: int
    class_names: tuple[str, ...]
    pool_size: int = 2
    pool_stride: int = 1

    def __post_init__(self):
        object.__setattr__(self, "class_names", tuple(self.class_names))
        if self.pool_size < 1 or self.pool_stride < 1:
            raise HpcError("pool size and stride must be >= 1")
        expected = self.num_features
        n_out, n_in = self.dense.weights.shape
        if n_in != expected:
            raise ShapeMismatch(f"dense input {n_in} != pooled feature length {expected}")
        if len(self.class_names) != n_out:
            raise ShapeMismatch(f"{len(self.class_names)} class names for {n_out} outputs")

    @classmethod
    def create(
        cls,
        filters,
        conv_biases,
        dense_weights,
        dense_biases,
        input_side: int,
        class_names,
        stride: int = 1,
        pool_size: int = 2,
        pool_stride: int = 1,
    ) -> "CnnModel":
        """Build an immutable model from raw arrays (copied, made read-only)."""
        return cls(
            conv=ConvLayer(_readonly(filters), _readonly(conv_biases), stride),
            dense=DenseLayer(_readonly(dense_weights), _readonly(dense_biases)),
            input_side=input_side,
            class_names=tuple(class_names),
            pool_size=pool_size,
            pool_stride=pool_stride,
        )

    @property
    def pooled_side(self) -> int:
        return pooled_side(self.input_side, self.conv.filter_size, self.conv.stride, self.pool_size, self.pool_stride)

    @property
    def num_features(self) -> int:
        return self.conv.num_filters * self.pooled_side**2

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def parameters(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return self.conv.filters, self.conv.biases, self.dense.weights, self.dense.biases

    def architecture(self) -> dict:
        return {
            "input_side": self.input_side,
            "num_filters": self.conv.num_filters,
            "filter_size": self.conv.filter_size,
            "conv_stride": self.conv.stride,
            "pool_size": self.pool_size,
            "pool_stride": self.pool_stride,
            "n_in": self.num_features,
            "n_out": self.num_classes,
        }

    def same_as(self, other: "CnnModel") -> bool:
        return (
            self.architecture() == other.architecture()
            and self.class_names == other.class_names
            and all(np.array_equal(a, b) for a, b in zip(self.parameters(), other.parameters()))
        )


@dataclass(frozen=True, eq=False)
class Gradients:
    filters: np.ndarray
    conv_biases: np.ndarray
    dense_weights: np.ndarray
    dense_biases: np.ndarray

    def as_tuple(self):
        return self.filters, self.conv_biases, self.dense_weights, self.dense_biases


@dataclass(eq=False)
class ForwardCache:
    architecture: dict
    batched: bool
    patches: np.ndarray  # (B, Ho, Wo, F, F)
    conv_out: np.ndarray  # (B, K, Ho, Wo), pre-activation
    pool_argmax: np.ndarray  # (B, K, Hp, Wp), window offset index
    features: np.ndarray  # (B, N_in)
    probabilities: np.ndarray  # (B, N)


def _as_batch(x: np.ndarray, ndim: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == ndim:
        return x[None], False
    if x.ndim == ndim + 1:
        return x, True
    raise ShapeMismatch(f"expected {ndim} or {ndim + 1} dims, got shape {x.shape}")


def _patches(x: np.ndarray, size: int, stride: int) -> np.ndarray:
    """``(B, H, W) -> (B, Ho, Wo, size, size)`` receptive-field view."""
    conv_output_side(x.shape[-1], size, stride)
    conv_output_side(x.shape[-2], size, stride)
    return sliding_window_view(x, (size, size), axis=(-2, -1))[:, ::stride, ::stride]


def conv_forward(x: np.ndarray, layer: ConvLayer) -> np.ndarray:
    """Valid cross-correlation, ``(H, W) -> (K, Ho, Wo)`` (batch axis optional)."""
    xb, batched = _as_batch(x, 2)
    out = _conv_from_patches(_patches(xb, layer.filter_size, layer.stride), layer)
    return out if batched else out[0]


def _conv_from_patches(patches: np.ndarray, layer: ConvLayer) -> np.ndarray:
    out = np.einsum("bijuv,kuv->bkij", patches, layer.filters, optimize=True)
    return out + layer.biases[None, :, None, None]


def relu(t: np.ndarray) -> np.ndarray:
    return np.maximum(t, 0.0)


def _pool_offsets(pool_size: int):
    return [(di, dj) for di in range(pool_size) for dj in range(pool_size)]


def maxpool_forward(maps: np.ndarray, pool_size: int = 2, pool_stride: int = 1, with_argmax: bool = True):
    """
    Max pooling over the last two axes.

    Returns the pooled maps and, per output cell, the row-major offset of the
    winning element inside its window (first occurrence on ties), or None when
    ``with_argmax`` is false.
    """
    maps = np.asarray(maps, dtype=np.float64)
    if maps.ndim < 2:
        raise ShapeMismatch("pooling needs at least 2 dims")
    ho = conv_output_side(maps.shape[-2], pool_size, pool_stride)
    wo = conv_output_side(maps.shape[-1], pool_size, pool_stride)
    span_h = pool_stride * (ho - 1) + 1
    span_w = pool_stride * (wo - 1) + 1
    offsets = _pool_offsets(pool_size)
    window = lambda di, dj: maps[..., di : di + span_h : pool_stride, dj : dj + span_w : pool_stride]
    pooled = window(*offsets[0]).copy()
    argmax = np.zeros(pooled.shape, dtype=np.int16) if with_argmax else None
    for k, (di, dj) in enumerate(offsets[1:], 1):
        candidate = window(di, dj)
        if with_argmax:
            # strict comparison keeps the earliest offset on ties
            better = candidate > pooled
            np.copyto(pooled, candidate, where=better)
            argmax[better] = k
        else:
            np.maximum(pooled, candidate, out=pooled)
    return pooled, argmax


def maxpool_backward(grad_out: np.ndarray, argmax: np.ndarray, input_shape, pool_size: int = 2, pool_stride: int = 1) -> np.ndarray:
    """Route each output gradient to the input cell that won its window."""
    grad_in = np.zeros(input_shape, dtype=np.float64)
    ho, wo = grad_out.shape[-2:]
    span_h = pool_stride * (ho - 1) + 1
    span_w = pool_stride * (wo - 1) + 1
    for k, (di, dj) in enumerate(_pool_offsets(pool_size)):
        # positions within one offset are distinct, so += does not collide
        grad_in[..., di : di + span_h : pool_stride, dj : dj + span_w : pool_stride] += np.where(argmax == k, grad_out, 0.0)
    return grad_in


def dense_forward(features: np.ndarray, layer: DenseLayer) -> np.ndarray:
    """Logits ``W x + b``; ``features`` is flattened (per batch row when 2-D or more and not a single sample)."""
    f = np.asarray(features, dtype=np.float64)
    n_in = layer.weights.shape[1]
    if f.size == n_in:
        return f.reshape(-1) @ layer.weights.T + layer.biases
    if f.ndim >= 2 and f.shape[0] and f[0].size == n_in:
        return f.reshape(f.shape[0], -1) @ layer.weights.T + layer.biases
    raise ShapeMismatch(f"dense expects {n_in} inputs per sample, got shape {f.shape}")


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] < 1:
        raise HpcError("softmax of an empty vector")
    if not np.all(np.isfinite(z)):
        raise NumericalError("non-finite logits")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _logits(model: CnnModel, xb: np.ndarray, keep: bool):
    if xb.shape[1:] != (model.input_side, model.input_side):
        raise ShapeMismatch(f"input {xb.shape[1:]} does not match model side {model.input_side}")
    patches = _patches(xb, model.conv.filter_size, model.conv.stride)
    conv_out = _conv_from_patches(patches, model.conv)
    pooled, argmax = maxpool_forward(relu(conv_out), model.pool_size, model.pool_stride, with_argmax=keep)
    features = pooled.reshape(len(xb), -1)
    logits = features @ model.dense.weights.T + model.dense.biases
    return logits, (patches, conv_out, argmax, features)


def forward(model: CnnModel, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Class probabilities for one matrix ``(S, S)`` or a batch ``(B, S, S)``, plus the backward cache."""
    xb, batched = _as_batch(x, 2)
    logits, (patches, conv_out, argmax, features) = _logits(model, xb, keep=True)
    probs = softmax(logits)
    cache = ForwardCache(model.architecture(), batched, patches, conv_out, argmax, features, probs)
    return (probs if batched else probs[0]), cache


def predict_proba(model: CnnModel, x: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Probabilities for a batch ``(B, S, S)``, evaluated in chunks to bound memory; no cache kept."""
    xb, _ = _as_batch(x, 2)
    if len(xb) == 0:
        return np.zeros((0, model.num_classes))
    return np.concatenate([softmax(_logits(model, xb[i : i + chunk], keep=False)[0]) for i in range(0, len(xb), chunk)])


def predict(model: CnnModel, x: np.ndarray, chunk: int = 256) -> np.ndarray:
    # np.argmax returns the lowest index on ties
    return np.argmax(predict_proba(model, x, chunk), axis=1)


def backward(model: CnnModel, cache: ForwardCache, target) -> Gradients:
    """
    Cross-entropy gradients for every parameter, averaged over the batch.

    ``target`` is a one-hot vector (or a ``(B, N)`` stack of them).
    """
    if cache.architecture != model.architecture():
        raise CacheMismatch("cache was produced by a model with a different architecture")
    y = np.asarray(target, dtype=np.float64)
    y = y.reshape(cache.probabilities.shape) if y.size == cache.probabilities.size else None
    if y is None:
        raise CacheMismatch(f"target shape {np.shape(target)} does not match {cache.probabilities.shape}")
    batch = len(y)

    dlogits = (cache.probabilities - y) / batch
    d_dense_w = dlogits.T @ cache.features
    d_dense_b = dlogits.sum(axis=0)

    d_features = dlogits @ model.dense.weights
    d_pooled = d_features.reshape(cache.pool_argmax.shape)
    d_relu = maxpool_backward(d_pooled, cache.pool_argmax, cache.conv_out.shape, model.pool_size, model.pool_stride)
    d_conv = np.where(cache.conv_out > 0.0, d_relu, 0.0)

    d_filters = np.einsum("bkij,bijuv->kuv", d_conv, cache.patches, optimize=True)
    d_conv_b = d_conv.sum(axis=(0, 2, 3))
    return Gradients(d_filters, d_conv_b, d_dense_w, d_dense_b)


def logit_gradient(probabilities, target) -> np.ndarray:
    """Fused softmax + cross-entropy gradient at the logits."""
    return np.asarray(probabilities, dtype=np.float64) - np.asarray(target, dtype=np.float64)
