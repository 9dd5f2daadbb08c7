"""Bit-exact serialization of variable-depth frame codes.

A stream is a fixed-layout header followed by bit-packed frames, MSB first.
In VBR mode each frame opens with a ceil(log2(n_q_max))-bit field holding
(stage count - 1), then the active stages' indices; CBR frames carry the
indices alone.  The payload is padded with zero bits to a byte boundary only
at the end of the stream.  The full byte layout lives in docs/format.md.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .quantizer import FrameCodes

STREAM_MAGIC = b"VRVQ0001"

MODE_VBR = 0
MODE_CBR = 1

_HEADER_FMT = "<7I"  # sample_rate, hop, n_q_max, codebook_bits, mode, n_active, frame_count
HEADER_SIZE = len(STREAM_MAGIC) + struct.calcsize(_HEADER_FMT) + 32  # + two 16-byte hashes


class StreamFormatError(ValueError):
    """Raised for malformed or truncated streams."""


@dataclass(frozen=True)
class StreamHeader:
    sample_rate: int
    hop: int
    n_q_max: int
    codebook_bits: int
    mode: int  # MODE_VBR or MODE_CBR
    n_active: int = 0  # CBR depth; 0 in VBR mode
    frame_count: int = 0
    checkpoint_hash: bytes = b"\x00" * 16
    config_hash: bytes = b"\x00" * 16

    def __post_init__(self) -> None:
        if self.mode not in (MODE_VBR, MODE_CBR):
            raise ValueError("mode must be MODE_VBR or MODE_CBR")
        if self.mode == MODE_CBR and not (1 <= self.n_active <= self.n_q_max):
            raise ValueError("CBR depth out of range")
        if len(self.checkpoint_hash) != 16 or len(self.config_hash) != 16:
            raise ValueError("hashes must be 16 bytes")

    @property
    def count_bits(self) -> int:
        return max(1, (self.n_q_max - 1).bit_length())


class BitWriter:
    """MSB-first bit packer."""

    def __init__(self) -> None:
        self._bytes = bytearray()
        self._acc = 0
        self._nbits = 0

    def write(self, value: int, nbits: int) -> None:
        if value < 0 or value >> nbits:
            raise ValueError(f"value {value} does not fit in {nbits} bits")
        self._acc = (self._acc << nbits) | value
        self._nbits += nbits
        while self._nbits >= 8:
            self._nbits -= 8
            self._bytes.append((self._acc >> self._nbits) & 0xFF)
        self._acc &= (1 << self._nbits) - 1

    @property
    def bit_count(self) -> int:
        return 8 * len(self._bytes) + self._nbits

    def getvalue(self) -> bytes:
        out = bytearray(self._bytes)
        if self._nbits:
            out.append((self._acc << (8 - self._nbits)) & 0xFF)
        return bytes(out)


class BitReader:
    """MSB-first bit unpacker over a bytes payload."""

    def __init__(self, data: bytes) -> None:
        self._data = data
        self._pos = 0  # bit position

    def read(self, nbits: int) -> int:
        end = self._pos + nbits
        if end > 8 * len(self._data):
            raise StreamFormatError("truncated payload")
        value = 0
        pos = self._pos
        while nbits:
            byte = self._data[pos >> 3]
            avail = 8 - (pos & 7)
            take = min(avail, nbits)
            shift = avail - take
            value = (value << take) | ((byte >> shift) & ((1 << take) - 1))
            pos += take
            nbits -= take
        self._pos = pos
        return value

    @property
    def bits_left(self) -> int:
        return 8 * len(self._data) - self._pos


def payload_bits(frames: FrameCodes, codebook_bits: int, mode: int, count_bits: int) -> int:
    """Exact payload size in bits, before end-of-stream padding."""
    counts = frames.n_q
    total = int(counts.sum()) * codebook_bits
    if mode == MODE_VBR:
        total += count_bits * frames.frame_count
    return total


def pack(frames: FrameCodes, header: StreamHeader) -> bytes:
    """Serialize frame codes under the given header.  Deterministic."""
    if header.n_q_max != frames.n_q_max:
        raise ValueError("header n_q_max does not match frame codes")
    hdr = StreamHeader(
        header.sample_rate,
        header.hop,
        header.n_q_max,
        header.codebook_bits,
        header.mode,
        header.n_active,
        frames.frame_count,
        header.checkpoint_hash,
        header.config_hash,
    )
    limit = 1 << hdr.codebook_bits
    w = BitWriter()
    for ix in frames.indices:
        n = len(ix)
        if hdr.mode == MODE_VBR:
            w.write(n - 1, hdr.count_bits)
        elif n != hdr.n_active:
            raise ValueError("CBR stream requires every frame at the configured depth")
        for v in ix:
            v = int(v)
            if not (0 <= v < limit):
                raise ValueError(f"index {v} overflows {hdr.codebook_bits} bits")
            w.write(v, hdr.codebook_bits)
    head = STREAM_MAGIC + struct.pack(
        _HEADER_FMT,
        hdr.sample_rate,
        hdr.hop,
        hdr.n_q_max,
        hdr.codebook_bits,
        hdr.mode,
        hdr.n_active,
        hdr.frame_count,
    ) + hdr.checkpoint_hash + hdr.config_hash
    return head + w.getvalue()


def unpack(blob: bytes):
    """Inverse of pack: returns (StreamHeader, FrameCodes)."""
    if blob[:8] != STREAM_MAGIC:
        raise StreamFormatError("bad stream magic")
    if len(blob) < HEADER_SIZE:
        raise StreamFormatError("truncated header")
    sr, hop, nq, cb, mode, n_active, n_frames = struct.unpack_from(_HEADER_FMT, blob, 8)
    off = 8 + struct.calcsize(_HEADER_FMT)
    hdr = StreamHeader(sr, hop, nq, cb, mode, n_active, n_frames, blob[off : off + 16], blob[off + 16 : off + 32])
    r = BitReader(blob[HEADER_SIZE:])
    indices: list[np.ndarray] = []
    for _ in range(n_frames):
        if mode == MODE_VBR:
            raw = r.read(hdr.count_bits)
            if raw >= nq:
                raise StreamFormatError(f"reserved stage count field {raw}")
            n = raw + 1
        else:
            n = n_active
        indices.append(np.array([r.read(cb) for _ in range(n)], dtype=np.int64))
    if r.bits_left >= 8:
        raise StreamFormatError("trailing bytes after payload")
    if r.bits_left and r.read(r.bits_left) != 0:
        raise StreamFormatError("nonzero padding bits")
    return hdr, FrameCodes(nq, indices)


def bitrate(frames: FrameCodes, frame_rate: float, mode: int, codebook_bits: int, n_active: int = 0) -> float:
    """Bits per second for the payload.

    VBR charges the per-frame count field plus the indices actually coded;
    CBR charges codebook_bits * n_active per frame and no side channel.  The
    header is excluded in both modes.
    """
    if frame_rate <= 0:
        raise ValueError("frame_rate must be positive")
    if mode == MODE_CBR:
        return frame_rate * codebook_bits * n_active
    count_bits = max(1, (frames.n_q_max - 1).bit_length())
    return frame_rate * (count_bits + codebook_bits * float(np.mean(frames.n_q)))
