"""
Encoded datasets and the packed ``HPDS`` file that caches them.

File layout, little-endian throughout::

    b"HPDS" | u32 version (=1)
    u32 target_bytes | u32 full_side | u32 reduced_side | u32 strip_link_layer
    u32 n_classes | (u32 len, utf-8 bytes) * n_classes
    u32 n_records | (u32 label_index, f32 * full_side**2) * n_records
    u32 crc32 of everything above
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .encoder import EncoderConfig, downsample, encode_many
from .errors import BadMagic, ChecksumMismatch, EmptyDataset, HpcError, ShapeInconsistent, UnsupportedVersion
from .pcap import LabeledDataset, SplitSpec, split_indices

DATASET_MAGIC = b"HPDS"
DATASET_VERSION = 1


@dataclass(frozen=True, eq=False)
class EncodedDataset:
    """Full-size matrices ``(n, side, side)`` with integer labels into ``class_names``."""

    matrices: np.ndarray
    labels: np.ndarray
    class_names: tuple[str, ...]
    encoder: EncoderConfig = EncoderConfig()

    def __post_init__(self):
        object.__setattr__(self, "class_names", tuple(self.class_names))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        if len(self.matrices) != len(self.labels):
            raise HpcError("matrices and labels differ in length")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise HpcError("label index out of range")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def side(self) -> int:
        return self.matrices.shape[-1]

    @property
    def counts(self) -> dict[str, int]:
        c = np.bincount(self.labels, minlength=len(self.class_names))
        return dict(zip(self.class_names, c.tolist()))

    @classmethod
    def from_packets(cls, dataset: LabeledDataset, config: EncoderConfig = EncoderConfig()) -> "EncodedDataset":
        return cls(encode_many(dataset.packets, config), dataset.label_indices(), dataset.class_names, config)

    def at_side(self, side: int) -> np.ndarray:
        """Matrices at ``side``; a smaller side is produced by interpolation."""
        return self.matrices if side == self.side else downsample(self.matrices, side)

    def subset(self, indices) -> "EncodedDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return EncodedDataset(self.matrices[indices], self.labels[indices], self.class_names, self.encoder)

    def split(self, spec: SplitSpec) -> tuple["EncodedDataset", "EncodedDataset"]:
        if len(self) == 0:
            raise EmptyDataset("cannot split an empty dataset")
        train, test = split_indices(self.labels, len(self.class_names), spec)
        return self.subset(train), self.subset(test)

    def relabel(self, mapping: dict[str, str], class_names: Sequence[str]) -> "EncodedDataset":
        """Map every label through ``mapping`` onto a new ordered class list (e.g. application -> service)."""
        index = {name: i for i, name in enumerate(class_names)}
        try:
            table = np.array([index[mapping[name]] for name in self.class_names], dtype=np.int64)
        except KeyError as e:
            raise HpcError(f"no mapping for class {e.args[0]!r}") from None
        return EncodedDataset(self.matrices, table[self.labels] if len(self) else self.labels, class_names, self.encoder)

    def restrict(self, class_names: Sequence[str]) -> "EncodedDataset":
        """Keep only samples of ``class_names``, re-indexed in that order."""
        missing = [n for n in class_names if n not in self.class_names]
        if missing:
            raise HpcError(f"unknown classes {missing}; dataset has {list(self.class_names)}")
        keep = [self.class_names.index(n) for n in class_names]
        remap = np.full(len(self.class_names), -1, dtype=np.int64)
        remap[keep] = np.arange(len(keep))
        sel = np.flatnonzero(remap[self.labels] >= 0)
        return EncodedDataset(self.matrices[sel], remap[self.labels[sel]], class_names, self.encoder)


def _pack_names(names: Sequence[str]) -> bytes:
    out = [struct.pack("<I", len(names))]
    for name in names:
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)) + raw)
    return b"".join(out)


def _unpack_names(buf: bytes, pos: int) -> tuple[list[str], int]:
    try:
        (count,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        names = []
        for _ in range(count):
            (n,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            if pos + n > len(buf):
                raise ShapeInconsistent("class name runs past end of file")
            names.append(buf[pos : pos + n].decode("utf-8"))
            pos += n
    except struct.error:
        raise ShapeInconsistent("class-name block truncated") from None
    return names, pos


def save_dataset(dataset: EncodedDataset, path) -> None:
    cfg = dataset.encoder
    if dataset.side != cfg.full_side:
        raise HpcError("packed datasets hold full-size matrices")
    parts = [
        DATASET_MAGIC,
        struct.pack("<IIIII", DATASET_VERSION, cfg.target_bytes, cfg.full_side, cfg.reduced_side, int(cfg.strip_link_layer)),
        _pack_names(dataset.class_names),
        struct.pack("<I", len(dataset)),
    ]
    cells = cfg.full_side**2
    record = np.zeros(len(dataset), dtype=[("label", "<u4"), ("values", "<f4", (cells,))])
    record["label"] = dataset.labels
    record["values"] = dataset.matrices.reshape(len(dataset), cells)
    parts.append(record.tobytes())
    body = b"".join(parts)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def load_dataset(path) -> EncodedDataset:
    buf = Path(path).read_bytes()
    if buf[:4] != DATASET_MAGIC:
        raise BadMagic(f"{path}: not a packed dataset")
    if len(buf) < 28:
        raise ShapeInconsistent(f"{path}: header truncated")
    version, target_bytes, full_side, reduced_side, strip = struct.unpack_from("<IIIII", buf, 4)
    if version != DATASET_VERSION:
        raise UnsupportedVersion(f"{path}: dataset version {version}")
    cfg = EncoderConfig(target_bytes, full_side, reduced_side, bool(strip))
    names, pos = _unpack_names(buf, 24)
    if pos + 4 > len(buf):
        raise ShapeInconsistent(f"{path}: record count missing")
    (n,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    cells = full_side**2
    dtype = np.dtype([("label", "<u4"), ("values", "<f4", (cells,))])
    if len(buf) != pos + n * dtype.itemsize + 4:
        raise ShapeInconsistent(f"{path}: {n} records do not match file length")
    (crc,) = struct.unpack_from("<I", buf, len(buf) - 4)
    if zlib.crc32(buf[:-4]) != crc:
        raise ChecksumMismatch(f"{path}: CRC mismatch")
    records = np.frombuffer(buf, dtype=dtype, count=n, offset=pos)
    matrices = records["values"].astype(np.float64).reshape(n, full_side, full_side)
    return EncodedDataset(matrices, records["label"].astype(np.int64), names, cfg)
