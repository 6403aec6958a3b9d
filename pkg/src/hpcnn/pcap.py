"""
Classic PCAP reading/writing, labeled packet datasets and stratified splits.

One capture file holds the traffic of one application, so every record in a
file gets the same label. Link-layer framing is recorded per packet but left
untouched here; the encoder decides whether to strip it.
"""

from __future__ import annotations

import struct
import warnings
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateClassWarning, EmptyDataset, HpcError, MalformedHeader, TruncatedRecord

PCAP_MAGIC = 0xA1B2C3D4
PCAP_MAGIC_SWAPPED = 0xD4C3B2A1
GLOBAL_HEADER_LEN = 24
RECORD_HEADER_LEN = 16

LINKTYPE_NULL = 0
LINKTYPE_ETHERNET = 1
LINKTYPE_RAW = 101
LINKTYPE_LINUX_SLL = 113


@dataclass(frozen=True)
class RawPacket:
    data: bytes
    ts_sec: int = 0
    ts_usec: int = 0
    orig_len: int | None = None
    label: str | None = None
    linktype: int = LINKTYPE_ETHERNET

    def __post_init__(self):
        if self.orig_len is None:
            object.__setattr__(self, "orig_len", len(self.data))
        if self.orig_len < len(self.data):
            raise HpcError(f"orig_len {self.orig_len} < captured length {len(self.data)}")

    @property
    def timestamp(self) -> float:
        return self.ts_sec + self.ts_usec * 1e-6


@dataclass(frozen=True)
class LabeledDataset:
    packets: tuple[RawPacket, ...] = ()
    class_names: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "packets", tuple(self.packets))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        known = set(self.class_names)
        if len(known) != len(self.class_names):
            raise HpcError("class_names must be distinct")
        for p in self.packets:
            if p.label not in known:
                raise HpcError(f"packet label {p.label!r} not in class_names")

    def __len__(self) -> int:
        return len(self.packets)

    @property
    def counts(self) -> dict[str, int]:
        c = Counter(p.label for p in self.packets)
        return {name: c.get(name, 0) for name in self.class_names}

    def label_indices(self) -> np.ndarray:
        index = {name: i for i, name in enumerate(self.class_names)}
        return np.array([index[p.label] for p in self.packets], dtype=np.int64)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.4
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise HpcError(f"train_fraction must be in (0, 1), got {self.train_fraction}")
        if self.seed < 0:
            raise HpcError("seed must be unsigned")


def _header_format(magic_bytes: bytes) -> str:
    if struct.unpack("<I", magic_bytes)[0] == PCAP_MAGIC:
        return "<"
    if struct.unpack(">I", magic_bytes)[0] == PCAP_MAGIC:
        return ">"
    raise MalformedHeader(f"bad pcap magic {magic_bytes.hex()}")


def read_pcap(file_path, label: str | None = None) -> tuple[int, list[RawPacket]]:
    """Return ``(linktype, packets)`` for a classic pcap file, in file order."""
    buf = Path(file_path).read_bytes()
    if len(buf) < GLOBAL_HEADER_LEN:
        raise MalformedHeader(f"{file_path}: shorter than the 24-byte global header")
    endian = _header_format(buf[:4])
    _, _major, _minor, _zone, _sigfigs, _snaplen, linktype = struct.unpack(
        endian + "IHHiIII", buf[:GLOBAL_HEADER_LEN]
    )
    record = struct.Struct(endian + "IIII")
    packets = []
    pos = GLOBAL_HEADER_LEN
    while pos < len(buf):
        if pos + RECORD_HEADER_LEN > len(buf):
            raise TruncatedRecord(f"{file_path}: partial record header at offset {pos}")
        ts_sec, ts_usec, incl_len, orig_len = record.unpack_from(buf, pos)
        pos += RECORD_HEADER_LEN
        if pos + incl_len > len(buf):
            raise TruncatedRecord(
                f"{file_path}: record at offset {pos - RECORD_HEADER_LEN} claims {incl_len} bytes, "
                f"{len(buf) - pos} remain"
            )
        packets.append(
            RawPacket(
                data=buf[pos : pos + incl_len],
                ts_sec=ts_sec,
                ts_usec=ts_usec,
                orig_len=max(orig_len, incl_len),
                label=label,
                linktype=linktype,
            )
        )
        pos += incl_len
    return linktype, packets


def parse_pcap(file_path, label: str) -> LabeledDataset:
    _, packets = read_pcap(file_path, label)
    return LabeledDataset(packets, (label,) if packets else ())


def write_pcap(
    file_path,
    packets: Iterable[RawPacket],
    linktype: int = LINKTYPE_ETHERNET,
    byteorder: str = "<",
    snaplen: int = 65535,
) -> None:
    endian = {"<": "<", "little": "<", ">": ">", "big": ">"}[byteorder]
    record = struct.Struct(endian + "IIII")
    with open(file_path, "wb") as f:
        f.write(struct.pack(endian + "IHHiIII", PCAP_MAGIC, 2, 4, 0, 0, snaplen, linktype))
        for p in packets:
            f.write(record.pack(p.ts_sec, p.ts_usec, len(p.data), p.orig_len))
            f.write(p.data)


def merge(datasets: Sequence[LabeledDataset]) -> LabeledDataset:
    packets: list[RawPacket] = []
    names: dict[str, None] = {}
    for ds in datasets:
        packets.extend(ds.packets)
        for name in ds.class_names:
            names.setdefault(name)
    return LabeledDataset(tuple(packets), tuple(names))


def split_indices(labels: np.ndarray, n_classes: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    """
    Stratified split of sample indices.

    Each class contributes ``floor(train_fraction * count)`` samples to train,
    chosen by a seed-determined permutation of that class's indices. Classes
    with a single sample cannot be stratified and go to train with a warning.
    Both index arrays come back sorted, so the original order is kept.
    """
    labels = np.asarray(labels)
    rng = np.random.default_rng(spec.seed)
    train, test = [], []
    for c in range(n_classes):
        idx = np.flatnonzero(labels == c)
        if len(idx) == 0:
            continue
        if len(idx) < 2:
            warnings.warn(f"class {c} has {len(idx)} packet(s); assigned to train", DegenerateClassWarning)
            train.append(idx)
            continue
        perm = idx[rng.permutation(len(idx))]
        n_train = int(np.floor(spec.train_fraction * len(idx)))
        train.append(perm[:n_train])
        test.append(perm[n_train:])
    cat = lambda parts: np.sort(np.concatenate(parts)) if parts else np.zeros(0, dtype=np.int64)
    return cat(train), cat(test)


def split(dataset: LabeledDataset, spec: SplitSpec) -> tuple[LabeledDataset, LabeledDataset]:
    if len(dataset) == 0:
        raise EmptyDataset("cannot split an empty dataset")
    train_idx, test_idx = split_indices(dataset.label_indices(), len(dataset.class_names), spec)
    take = lambda idx: LabeledDataset(tuple(dataset.packets[i] for i in idx), dataset.class_names)
    return take(train_idx), take(test_idx)


def read_manifest(path) -> list[tuple[Path, str]]:
    """Parse ``<file_path>,<application_name>`` lines; relative paths resolve against the manifest."""
    path = Path(path)
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        file_part, sep, name = line.rpartition(",")
        if not sep or not file_part.strip() or not name.strip():
            raise HpcError(f"{path}:{lineno}: expected '<file_path>,<application_name>'")
        file_path = Path(file_part.strip())
        if not file_path.is_absolute():
            file_path = path.parent / file_path
        entries.append((file_path, name.strip()))
    return entries


def load_manifest(path) -> LabeledDataset:
    return merge([parse_pcap(f, label) for f, label in read_manifest(path)])
