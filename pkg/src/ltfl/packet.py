"""Byte layout of a compressed gradient packet.

Only used to check payload accounting; nothing is sent over a socket.

Layout (little-endian)::

    offset  size  field
    0       4     magic b"LTGP"
    4       4     device id (uint32)
    8       4     round index (uint32)
    12      4     model dimension V (uint32)
    16      1     bits per coordinate delta (uint8)
    17      4     pruning ratio rho (float32)
    21      2     xi, modelled overhead in bits (uint16)
    23      4     number of kept coordinates K (uint32)
    27      4     g_min (float32)
    31      4     g_max (float32)
    35      4K    kept indices (uint32, ascending)
    ..      ceil(K delta / 8)   level indices, delta bits each, MSB first
    ..      ceil(K / 8)         sign bits, 1 = negative, MSB first

The cost model charges ``V * delta + xi`` bits scaled by ``(1 - rho)``; the
index list and sign bits are real bytes on this wire but are not charged,
matching the assumption that index upload is negligible.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .compression import MalformedPacketError, PruneMask, QuantizedGradient

MAGIC = b"LTGP"
HEADER = struct.Struct("<4sIIIBfHIff")


@dataclass(frozen=True)
class PacketSections:
    header: int
    indices: int
    levels: int
    signs: int

    @property
    def total(self) -> int:
        return self.header + self.indices + self.levels + self.signs


def section_sizes(n_kept: int, delta: int) -> PacketSections:
    return PacketSections(HEADER.size, 4 * n_kept, -(-n_kept * delta // 8), -(-n_kept // 8))


def _pack_levels(levels: np.ndarray, delta: int) -> bytes:
    shifts = np.arange(delta - 1, -1, -1)
    bits = ((levels[:, None] >> shifts) & 1).astype(np.uint8).ravel()
    return np.packbits(bits).tobytes()


def _unpack_levels(raw: bytes, n: int, delta: int) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8))[: n * delta].reshape(n, delta)
    weights = 1 << np.arange(delta - 1, -1, -1)
    return (bits.astype(np.int64) * weights).sum(axis=1)


def encode(packet: QuantizedGradient, mask: PruneMask, device_id: int, round_index: int) -> bytes:
    n = len(mask.kept_indices)
    if packet.level_indices.size != n:
        raise MalformedPacketError("packet and mask disagree on the kept count")
    header = HEADER.pack(MAGIC, device_id, round_index, mask.dim, packet.bits_per_coord, mask.ratio,
                         packet.xi, n, packet.g_min, packet.g_max)
    indices = np.asarray(mask.kept_indices, dtype="<u4").tobytes()
    levels = _pack_levels(np.asarray(packet.level_indices), packet.bits_per_coord)
    signs = np.packbits((np.asarray(packet.signs) < 0).astype(np.uint8)).tobytes()
    return header + indices + levels + signs


def decode(raw: bytes) -> tuple[QuantizedGradient, PruneMask, int, int]:
    """Inverse of :func:`encode`; returns ``(packet, mask, device_id, round_index)``.

    The range bounds travel as float32, so they come back rounded to single
    precision.
    """
    if len(raw) < HEADER.size:
        raise MalformedPacketError("truncated header")
    magic, device_id, round_index, dim, delta, rho, xi, n, g_min, g_max = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise MalformedPacketError("bad magic")
    sizes = section_sizes(n, delta)
    if len(raw) != sizes.total:
        raise MalformedPacketError(f"expected {sizes.total} bytes, got {len(raw)}")
    pos = sizes.header
    kept = np.frombuffer(raw[pos:pos + sizes.indices], dtype="<u4").astype(np.int64)
    pos += sizes.indices
    levels = _unpack_levels(raw[pos:pos + sizes.levels], n, delta)
    pos += sizes.levels
    neg = np.unpackbits(np.frombuffer(raw[pos:], dtype=np.uint8))[:n].astype(bool)
    if n and (kept.max() >= dim or np.any(np.diff(kept) <= 0)):
        raise MalformedPacketError("kept indices out of range or unsorted")
    packet = QuantizedGradient(levels, np.where(neg, -1, 1).astype(np.int8), float(g_min), float(g_max),
                               int(delta), int(dim), int(xi))
    return packet, PruneMask(kept, int(dim), float(rho)), int(device_id), int(round_index)
