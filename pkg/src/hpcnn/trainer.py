"""
Mini-batch SGD over cross-entropy, and the ``HPCM`` model file.

Model file layout, little-endian throughout::

    b"HPCM" | u32 version (=1)
    u32 input_side, num_filters, filter_size, conv_stride, pool_size, pool_stride, n_in, n_out
    u32 n_classes | (u32 len, utf-8 bytes) * n_classes
    f32 conv filters (K*F*F) | f32 conv biases (K) | f32 dense weights (n_out*n_in) | f32 dense biases (n_out)
    u32 crc32 of everything above
"""

from __future__ import annotations

import struct
import time
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .cnn import CnnModel, backward, forward, pooled_side
from .dataset import EncodedDataset, _pack_names, _unpack_names
from .errors import (
    BadMagic,
    ChecksumMismatch,
    EmptyDataset,
    HpcError,
    InconsistentShapes,
    LengthMismatch,
    ShapeInconsistent,
    UnsupportedVersion,
)

MODEL_MAGIC = b"HPCM"
MODEL_VERSION = 1
LOSS_EPS = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 0.01
    num_filters: int = 16
    stride: int = 1
    seed: int = 0
    filter_size: int = 3
    pool_size: int = 2
    pool_stride: int = 1

    def __post_init__(self):
        for name in ("epochs", "batch_size", "num_filters", "stride", "filter_size", "pool_size", "pool_stride"):
            if getattr(self, name) < 1:
                raise HpcError(f"{name} must be positive")
        # zero is allowed: it freezes the parameters, which tests rely on
        if self.learning_rate < 0:
            raise HpcError("learning_rate must be non-negative")
        if self.seed < 0:
            raise HpcError("seed must be unsigned")

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainReport:
    losses: list[float] = field(default_factory=list)
    accuracies: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    @property
    def epochs(self) -> int:
        return len(self.losses)


def cross_entropy(prediction, target) -> float:
    p = np.asarray(prediction, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if p.shape != y.shape:
        raise LengthMismatch(f"prediction {p.shape} vs target {y.shape}")
    return float(-np.sum(y * np.log(np.maximum(p, LOSS_EPS))))


def _f32(a: np.ndarray) -> np.ndarray:
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def init_model(input_side: int, class_names, config: TrainConfig, rng: np.random.Generator) -> CnnModel:
    """Glorot-uniform weights, zero biases; values are float32-representable."""
    k, f = config.num_filters, config.filter_size
    n_out = len(class_names)
    n_in = k * pooled_side(input_side, f, config.stride, config.pool_size, config.pool_stride) ** 2
    conv_limit = np.sqrt(6.0 / (f * f + k * f * f))
    dense_limit = np.sqrt(6.0 / (n_in + n_out))
    filters = _f32(rng.uniform(-conv_limit, conv_limit, size=(k, f, f)))
    dense = _f32(rng.uniform(-dense_limit, dense_limit, size=(n_out, n_in)))
    return CnnModel.create(
        filters, np.zeros(k), dense, np.zeros(n_out), input_side, class_names,
        stride=config.stride, pool_size=config.pool_size, pool_stride=config.pool_stride,
    )


def epoch_batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """One epoch's batches: a permutation of ``range(n)`` cut every ``batch_size``; the short tail is kept."""
    order = rng.permutation(n)
    return [order[lo : lo + batch_size] for lo in range(0, n, batch_size)]


def train(
    train_set: EncodedDataset,
    config: TrainConfig = TrainConfig(),
    progress: Callable[[str], None] | None = None,
    initial: CnnModel | None = None,
) -> tuple[CnnModel, TrainReport]:
    """
    Train a classifier on ``train_set`` with plain mini-batch SGD.

    Each epoch visits a seed-determined permutation of the samples in batches
    of ``batch_size`` (the last batch may be short); batch-averaged gradients
    update every parameter by ``-learning_rate * grad``. The returned weights
    are rounded to float32, the precision they are stored at.
    """
    if len(train_set) == 0:
        raise EmptyDataset("no training samples")
    x = train_set.matrices
    if x.ndim != 3 or x.shape[1] != x.shape[2]:
        raise InconsistentShapes(f"expected (n, side, side) matrices, got {x.shape}")
    n_classes = len(train_set.class_names)
    rng = np.random.default_rng(config.seed)
    model = initial or init_model(x.shape[1], train_set.class_names, config, rng)
    if model.input_side != x.shape[1]:
        raise InconsistentShapes(f"model side {model.input_side} vs data side {x.shape[1]}")
    one_hot = np.eye(n_classes)[train_set.labels]

    # private copies, updated in place
    work = CnnModel.create(*model.parameters(), model.input_side, model.class_names, model.conv.stride, model.pool_size, model.pool_stride)
    params = work.parameters()
    for a in params:
        a.flags.writeable = True

    report = TrainReport()
    lr = config.learning_rate
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        loss_sum, correct = 0.0, 0
        for idx in epoch_batches(len(x), config.batch_size, rng):
            probs, cache = forward(work, x[idx])
            y = one_hot[idx]
            loss_sum += float(-np.sum(y * np.log(np.maximum(probs, LOSS_EPS))))
            correct += int(np.sum(np.argmax(probs, axis=1) == train_set.labels[idx]))
            grads = backward(work, cache, y)
            for p, g in zip(params, grads.as_tuple()):
                p -= lr * g
        elapsed = time.perf_counter() - start
        report.losses.append(loss_sum / len(x))
        report.accuracies.append(correct / len(x))
        report.seconds.append(elapsed)
        if progress is not None:
            progress(f"epoch {epoch} loss {report.losses[-1]:.6f} acc {report.accuracies[-1]:.4f} secs {elapsed:.3f}")

    final = CnnModel.create(
        *(_f32(p) for p in params), model.input_side, model.class_names,
        stride=model.conv.stride, pool_size=model.pool_size, pool_stride=model.pool_stride,
    )
    return final, report


def model_to_bytes(model: CnnModel) -> bytes:
    arch = model.architecture()
    parts = [
        MODEL_MAGIC,
        struct.pack("<I", MODEL_VERSION),
        struct.pack(
            "<8I", arch["input_side"], arch["num_filters"], arch["filter_size"], arch["conv_stride"],
            arch["pool_size"], arch["pool_stride"], arch["n_in"], arch["n_out"],
        ),
        _pack_names(model.class_names),
    ]
    parts += [np.ascontiguousarray(p, dtype="<f4").tobytes() for p in model.parameters()]
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def model_from_bytes(buf: bytes) -> CnnModel:
    if buf[:4] != MODEL_MAGIC:
        raise BadMagic("not a model file")
    if len(buf) < 40:
        raise ShapeInconsistent("model header truncated")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != MODEL_VERSION:
        raise UnsupportedVersion(f"model format version {version}")
    side, k, f, stride, pool, pool_stride, n_in, n_out = struct.unpack_from("<8I", buf, 8)
    names, pos = _unpack_names(buf, 40)
    if len(names) != n_out:
        raise ShapeInconsistent(f"{len(names)} class names for {n_out} outputs")
    sizes = [k * f * f, k, n_out * n_in, n_out]
    if len(buf) != pos + 4 * sum(sizes) + 4:
        raise ShapeInconsistent("weight payload length does not match header dims")
    (crc,) = struct.unpack_from("<I", buf, len(buf) - 4)
    if zlib.crc32(buf[:-4]) != crc:
        raise ChecksumMismatch("model CRC mismatch")
    arrays = []
    for size in sizes:
        arrays.append(np.frombuffer(buf, dtype="<f4", count=size, offset=pos).astype(np.float64))
        pos += 4 * size
    try:
        return CnnModel.create(
            arrays[0].reshape(k, f, f), arrays[1], arrays[2].reshape(n_out, n_in), arrays[3],
            side, names, stride=stride, pool_size=pool, pool_stride=pool_stride,
        )
    except HpcError as e:
        raise ShapeInconsistent(str(e)) from None


def save_model(model: CnnModel, path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path) -> CnnModel:
    return model_from_bytes(Path(path).read_bytes())
