"""Wire format of the protocol broadcast.

Layout (little-endian): node_id u16, ch_id u16, degree u16, new_ch_id u16
(0xFFFF means absent), neighbor bitset, connectivity bitset. Each bitset is
ceil(max_nodes / 8) bytes, bit i of byte i // 8 (LSB first) standing for node i.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

NO_NEW_CH = 0xFFFF
HEADER = struct.Struct("<HHHH")
MAX_PAYLOAD = 127 - 25  # 802.15.4 frame minus a full-size MAC header and FCS


@dataclass(frozen=True)
class Frame:
    node_id: int
    ch_id: int
    degree: int = 0
    neighbors: frozenset = frozenset()
    connectivity: frozenset = frozenset()
    new_ch_id: int | None = None

    @classmethod
    def ping(cls, node_id: int) -> "Frame":
        return cls(node_id, node_id)


def bitset_bytes(max_nodes: int) -> int:
    return (max_nodes + 7) // 8


def encoded_size(max_nodes: int) -> int:
    return HEADER.size + 2 * bitset_bytes(max_nodes)


def _check_max_nodes(max_nodes: int):
    if max_nodes < 1:
        raise ValueError("max_nodes must be positive")
    if max_nodes >= NO_NEW_CH or encoded_size(max_nodes) > MAX_PAYLOAD:
        raise ValueError(f"max_nodes={max_nodes} does not fit an 802.15.4 payload")


def _pack_bits(ids, max_nodes: int) -> bytes:
    buf = bytearray(bitset_bytes(max_nodes))
    for i in ids:
        if not 0 <= i < max_nodes:
            raise ValueError(f"node id {i} out of range")
        buf[i >> 3] |= 1 << (i & 7)
    return bytes(buf)


def _unpack_bits(buf: bytes, max_nodes: int) -> frozenset:
    out = []
    for byte_i, b in enumerate(buf):
        while b:
            low = b & -b
            out.append(byte_i * 8 + low.bit_length() - 1)
            b ^= low
    if out and out[-1] >= max_nodes:
        raise ValueError("reserved padding bit set in bitset")
    return frozenset(out)


def encode(f: Frame, max_nodes: int) -> bytes:
    _check_max_nodes(max_nodes)
    for name in ("node_id", "ch_id"):
        v = getattr(f, name)
        if not 0 <= v < max_nodes:
            raise ValueError(f"{name}={v} out of range")
    if f.new_ch_id is not None and not 0 <= f.new_ch_id < max_nodes:
        raise ValueError(f"new_ch_id={f.new_ch_id} out of range")
    if not 0 <= f.degree <= 0xFFFF:
        raise ValueError("degree out of range")
    new_ch = NO_NEW_CH if f.new_ch_id is None else f.new_ch_id
    return (HEADER.pack(f.node_id, f.ch_id, f.degree, new_ch)
            + _pack_bits(f.neighbors, max_nodes) + _pack_bits(f.connectivity, max_nodes))


def decode(buf: bytes, max_nodes: int) -> Frame:
    _check_max_nodes(max_nodes)
    if len(buf) != encoded_size(max_nodes):
        raise ValueError(f"expected {encoded_size(max_nodes)} bytes, got {len(buf)}")
    # header fields are plain u16 on the wire; range checks belong to encode
    node_id, ch_id, degree, new_ch = HEADER.unpack_from(buf)
    k = bitset_bytes(max_nodes)
    nb = _unpack_bits(buf[HEADER.size:HEADER.size + k], max_nodes)
    conn = _unpack_bits(buf[HEADER.size + k:], max_nodes)
    return Frame(node_id, ch_id, degree, nb, conn, None if new_ch == NO_NEW_CH else new_ch)
