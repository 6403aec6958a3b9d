"""Packet bytes -> normalized square matrices (full size and interpolated reduced size)."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .errors import HpcError, InvalidTarget
from .pcap import LINKTYPE_ETHERNET, LINKTYPE_LINUX_SLL, LINKTYPE_NULL, RawPacket

LINKTYPE_LINUX_SLL2 = 276
_VLAN_TPIDS = (0x8100, 0x88A8)


@dataclass(frozen=True)
class EncoderConfig:
    target_bytes: int = 1500
    full_side: int = 39
    reduced_side: int = 20
    strip_link_layer: bool = False

    def __post_init__(self):
        if self.target_bytes < 0 or self.full_side < 1 or self.reduced_side < 1:
            raise HpcError("encoder sizes must be positive")
        if self.full_side**2 < self.target_bytes:
            raise HpcError(f"full_side {self.full_side}^2 cannot hold {self.target_bytes} bytes")
        if self.reduced_side >= self.full_side:
            raise HpcError("reduced_side must be smaller than full_side")

    def as_dict(self) -> dict:
        return asdict(self)


def link_header_len(data: bytes, linktype: int) -> int:
    """Bytes of link-layer framing in front of the network-layer header."""
    if linktype == LINKTYPE_ETHERNET:
        n = 14
        # 802.1Q / 802.1ad tags, possibly stacked
        while len(data) >= n and int.from_bytes(data[n - 2 : n], "big") in _VLAN_TPIDS:
            n += 4
        return min(n, len(data))
    if linktype == LINKTYPE_NULL:
        return min(4, len(data))
    if linktype == LINKTYPE_LINUX_SLL:
        return min(16, len(data))
    if linktype == LINKTYPE_LINUX_SLL2:
        return min(20, len(data))
    return 0


def packet_bytes(packet: RawPacket, config: EncoderConfig) -> bytes:
    data = packet.data
    if config.strip_link_layer:
        data = data[link_header_len(data, packet.linktype) :]
    return data[: config.target_bytes]


def encode_full(packet: RawPacket, config: EncoderConfig = EncoderConfig()) -> np.ndarray:
    side = config.full_side
    cells = np.zeros(side * side, dtype=np.float64)
    data = np.frombuffer(packet_bytes(packet, config), dtype=np.uint8)
    cells[: len(data)] = data / 255.0
    return cells.reshape(side, side)


def encode_reduced(packet: RawPacket, config: EncoderConfig = EncoderConfig()) -> np.ndarray:
    return downsample(encode_full(packet, config), config.reduced_side)


def encode_many(packets: Sequence[RawPacket], config: EncoderConfig = EncoderConfig(), reduced: bool = False) -> np.ndarray:
    """Stack of full-size (or reduced-size) matrices, shape ``(n, side, side)``."""
    side = config.full_side
    out = np.zeros((len(packets), side * side), dtype=np.float64)
    for i, p in enumerate(packets):
        data = np.frombuffer(packet_bytes(p, config), dtype=np.uint8)
        out[i, : len(data)] = data
    out /= 255.0
    out = out.reshape(len(packets), side, side)
    return downsample(out, config.reduced_side) if reduced else out


def _axis_weights(source: int, target: int) -> tuple[np.ndarray, np.ndarray]:
    coords = np.arange(target) * ((source - 1) / (target - 1))
    lo = np.minimum(np.floor(coords).astype(np.int64), source - 2)
    return lo, coords - lo


def downsample(matrix: np.ndarray, target_side: int) -> np.ndarray:
    """
    Corner-aligned bilinear resampling of the last two (square) axes.

    Output cell ``(i, j)`` samples the source at ``(i, j) * (S - 1) / (T - 1)``,
    so the four corners are copied exactly. Leading axes are treated as a batch.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    source = matrix.shape[-1]
    if matrix.ndim < 2 or matrix.shape[-2] != source:
        raise InvalidTarget(f"expected square matrix, got shape {matrix.shape}")
    if target_side < 2 or target_side > source:
        raise InvalidTarget(f"target side {target_side} outside [2, {source}]")
    if target_side == source:
        return matrix.copy()

    lo, frac = _axis_weights(source, target_side)
    # rows, then columns
    top = matrix[..., lo, :]
    bottom = matrix[..., lo + 1, :]
    rows = top + frac[:, None] * (bottom - top)
    left = rows[..., lo]
    right = rows[..., lo + 1]
    out = left + frac * (right - left)
    # convex combinations; clip away the last-ulp overshoot
    return np.clip(out, matrix.min(axis=(-2, -1), keepdims=True), matrix.max(axis=(-2, -1), keepdims=True))
