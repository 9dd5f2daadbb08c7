"""Minimal mono RIFF/WAVE reader and writer.

Supports PCM-16 and IEEE float-32 payloads.  Unknown chunks are skipped on
read; a private "VCFG" chunk carrying the 16-byte resolved-config hash is
appended on write so every output file names the configuration that made it.
"""

from __future__ import annotations

import struct

import numpy as np


class WavFormatError(ValueError):
    """Malformed or unsupported RIFF/WAVE data."""


def read_wav(path: str):
    """Returns (samples as float64 in [-1, 1], sample_rate)."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 12 or blob[:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise WavFormatError("not a RIFF/WAVE file")
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(blob):
        cid = blob[pos : pos + 4]
        (size,) = struct.unpack_from("<I", blob, pos + 4)
        body = blob[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise WavFormatError(f"truncated chunk {cid!r}")
        if cid == b"fmt ":
            fmt = body
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned
    if fmt is None or data is None:
        raise WavFormatError("missing fmt or data chunk")
    if len(fmt) < 16:
        raise WavFormatError("fmt chunk too short")
    audio_format, channels, sample_rate, _, _, bits = struct.unpack_from("<HHIIHH", fmt, 0)
    if channels != 1:
        raise WavFormatError(f"only mono supported, got {channels} channels")
    if audio_format == 1 and bits == 16:
        samples = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    elif audio_format == 3 and bits == 32:
        samples = np.frombuffer(data, dtype="<f4").astype(np.float64)
    else:
        raise WavFormatError(f"unsupported format {audio_format}/{bits}-bit")
    return samples, int(sample_rate)


def write_wav(path: str, samples: np.ndarray, sample_rate: int, pcm16: bool = False, config_hash: bytes = b"") -> None:
    """Write mono audio; float-32 by default, PCM-16 on request."""
    samples = np.asarray(samples, dtype=np.float64).ravel()
    if pcm16:
        payload = np.clip(np.round(samples * 32768.0), -32768, 32767).astype("<i2").tobytes()
        fmt = struct.pack("<HHIIHH", 1, 1, sample_rate, sample_rate * 2, 2, 16)
    else:
        payload = samples.astype("<f4").tobytes()
        fmt = struct.pack("<HHIIHH", 3, 1, sample_rate, sample_rate * 4, 4, 32)
    chunks = [(b"fmt ", fmt), (b"data", payload)]
    if config_hash:
        chunks.append((b"VCFG", bytes(config_hash)))
    body = bytearray()
    for cid, cbody in chunks:
        body += cid + struct.pack("<I", len(cbody)) + cbody
        if len(cbody) & 1:
            body += b"\x00"
    with open(path, "wb") as f:
        f.write(b"RIFF" + struct.pack("<I", 4 + len(body)) + b"WAVE" + bytes(body))
