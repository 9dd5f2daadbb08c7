import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vrvq import bitstream as bs
from vrvq.quantizer import FrameCodes

FIXTURES = Path(__file__).parent / "fixtures"


def oracle_payload(frames: FrameCodes, codebook_bits: int, mode: int, count_bits: int) -> bytes:
    """Independent packer: build the bit string by hand, then bytes."""
    bits = ""
    for ix in frames.indices:
        if mode == bs.MODE_VBR:
            bits += format(len(ix) - 1, f"0{count_bits}b")
        for v in ix:
            bits += format(int(v), f"0{codebook_bits}b")
    bits += "0" * (-len(bits) % 8)
    return bytes(int(bits[i : i + 8], 2) for i in range(0, len(bits), 8))


def header(mode=bs.MODE_VBR, n_active=0, n_q=8, cb=10):
    return bs.StreamHeader(44100, 512, n_q, cb, mode, n_active)


class TestPack:
    def test_single_frame_thirteen_bits(self):
        frames = FrameCodes(8, [np.array([0])])
        blob = bs.pack(frames, header())
        payload = blob[bs.HEADER_SIZE :]
        assert bs.payload_bits(frames, 10, bs.MODE_VBR, 3) == 13
        assert len(payload) == 2  # 13 bits -> 2 bytes, 3 zero padding bits
        assert payload == oracle_payload(frames, 10, bs.MODE_VBR, 3)

    def test_hand_computed_layout(self):
        # n_q=2 (count field 001), indices 5 and 9 in 10 bits each, one pad bit:
        # 001 0000000101 0000001001 0 regroups to 00100000 00101000 00010010
        frames = FrameCodes(8, [np.array([5, 9])])
        payload = bs.pack(frames, header())[bs.HEADER_SIZE :]
        assert payload == bytes([0b00100000, 0b00101000, 0b00010010])
        assert payload == oracle_payload(frames, 10, bs.MODE_VBR, 3)

    def test_cbr_omits_count_field(self):
        rng = np.random.default_rng(0)
        frames = FrameCodes(8, [rng.integers(0, 1024, 8)])
        blob = bs.pack(frames, header(bs.MODE_CBR, n_active=8))
        assert len(blob) - bs.HEADER_SIZE == 10  # exactly 80 bits
        assert bs.payload_bits(frames, 10, bs.MODE_CBR, 3) == 80

    def test_empty_stream_is_header_only(self):
        frames = FrameCodes(8, [])
        blob = bs.pack(frames, header())
        assert len(blob) == bs.HEADER_SIZE
        hdr, back = bs.unpack(blob)
        assert back.frame_count == 0 and hdr.frame_count == 0

    def test_index_overflow_rejected(self):
        frames = FrameCodes(8, [np.array([1024])])
        with pytest.raises(ValueError):
            bs.pack(frames, header())

    def test_cbr_depth_mismatch_rejected(self):
        frames = FrameCodes(8, [np.array([1, 2, 3])])
        with pytest.raises(ValueError):
            bs.pack(frames, header(bs.MODE_CBR, n_active=4))

    def test_matches_oracle_on_random_streams(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            n_q = int(rng.integers(1, 9))
            cb = int(rng.integers(1, 12))
            frames = FrameCodes(
                n_q,
                [rng.integers(0, 1 << cb, rng.integers(1, n_q + 1)) for _ in range(rng.integers(1, 12))],
            )
            hdr = bs.StreamHeader(8000, 64, n_q, cb, bs.MODE_VBR)
            got = bs.pack(frames, hdr)[bs.HEADER_SIZE :]
            assert got == oracle_payload(frames, cb, bs.MODE_VBR, hdr.count_bits)


class TestUnpack:
    @settings(max_examples=300, deadline=None)
    @given(st.data())
    def test_roundtrip(self, data):
        n_q = data.draw(st.integers(1, 8))
        cb = data.draw(st.integers(1, 12))
        mode = data.draw(st.sampled_from([bs.MODE_VBR, bs.MODE_CBR]))
        n_active = data.draw(st.integers(1, n_q))
        n_frames = data.draw(st.integers(0, 20))
        frames = []
        for _ in range(n_frames):
            n = n_active if mode == bs.MODE_CBR else data.draw(st.integers(1, n_q))
            frames.append(
                np.array(data.draw(st.lists(st.integers(0, (1 << cb) - 1), min_size=n, max_size=n)))
            )
        fc = FrameCodes(n_q, frames)
        hdr = bs.StreamHeader(8000, 64, n_q, cb, mode, n_active)
        blob = bs.pack(fc, hdr)
        hdr2, fc2 = bs.unpack(blob)
        assert fc2 == fc
        assert hdr2.mode == mode and hdr2.frame_count == n_frames

    def test_bad_magic(self):
        with pytest.raises(bs.StreamFormatError):
            bs.unpack(b"XXXX0000" + b"\x00" * 100)

    def test_truncated_payload(self):
        frames = FrameCodes(8, [np.array([5, 9]), np.array([1])])
        blob = bs.pack(frames, header())
        with pytest.raises(bs.StreamFormatError):
            bs.unpack(blob[:-1])

    def test_truncated_header(self):
        frames = FrameCodes(8, [np.array([5])])
        blob = bs.pack(frames, header())
        with pytest.raises(bs.StreamFormatError):
            bs.unpack(blob[: bs.HEADER_SIZE - 4])

    def test_reserved_count_field_rejected(self):
        # n_q_max = 5 needs 3 count bits; raw values 5..7 are reserved
        blob = bs.pack(FrameCodes(5, [np.array([1])]), bs.StreamHeader(8000, 64, 5, 4, bs.MODE_VBR))
        corrupted = bytearray(blob)
        corrupted[bs.HEADER_SIZE] |= 0b11100000  # force count field to 7
        with pytest.raises(bs.StreamFormatError):
            bs.unpack(bytes(corrupted))

    def test_nonzero_padding_rejected(self):
        blob = bytearray(bs.pack(FrameCodes(8, [np.array([0])]), header()))
        blob[-1] |= 0x01  # dirty the final padding bit
        with pytest.raises(bs.StreamFormatError):
            bs.unpack(bytes(blob))

    def test_golden_stream_decodes_to_frozen_listing(self):
        blob = (FIXTURES / "golden.vrvq").read_bytes()
        listing = json.loads((FIXTURES / "golden_frames.json").read_text())
        hdr, fc = bs.unpack(blob)
        assert hdr.sample_rate == listing["sample_rate"]
        assert hdr.n_q_max == listing["n_q_max"]
        assert hdr.codebook_bits == listing["codebook_bits"]
        assert [ix.tolist() for ix in fc.indices] == listing["frames"]


class TestBitrate:
    def test_side_channel_overhead_near_0258_kbps(self):
        frames = FrameCodes(8, [np.array([0])])
        vbr = bs.bitrate(frames, 86.13, bs.MODE_VBR, 10)
        overhead = vbr - 86.13 * 10 * 1
        assert overhead == pytest.approx(86.13 * 3, abs=1e-9)
        assert abs(overhead - 258.4) <= 0.1

    def test_cbr_eight_stages(self):
        frames = FrameCodes(8, [np.array([0] * 8)])
        assert bs.bitrate(frames, 86.13, bs.MODE_CBR, 10, 8) == pytest.approx(6890.4)

    def test_all_silence_vbr(self):
        frames = FrameCodes(8, [np.array([0])] * 50)
        assert bs.bitrate(frames, 86.13, bs.MODE_VBR, 10) == pytest.approx(86.13 * 13)

    def test_bitrate_times_duration_equals_payload_bits(self):
        rng = np.random.default_rng(2)
        frames = FrameCodes(8, [rng.integers(0, 1024, rng.integers(1, 9)) for _ in range(64)])
        rate = bs.bitrate(frames, 86.13, bs.MODE_VBR, 10)
        duration = 64 / 86.13
        assert round(rate * duration) == bs.payload_bits(frames, 10, bs.MODE_VBR, 3)

    def test_invalid_frame_rate(self):
        with pytest.raises(ValueError):
            bs.bitrate(FrameCodes(8, []), 0.0, bs.MODE_VBR, 10)


class TestBitPrimitives:
    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 2**20 - 1), st.integers(1, 20)), max_size=50))
    def test_writer_reader_roundtrip(self, fields):
        w = bs.BitWriter()
        for value, nbits in fields:
            w.write(value & ((1 << nbits) - 1), nbits)
        r = bs.BitReader(w.getvalue())
        for value, nbits in fields:
            assert r.read(nbits) == (value & ((1 << nbits) - 1))

    def test_writer_rejects_oversized_value(self):
        w = bs.BitWriter()
        with pytest.raises(ValueError):
            w.write(4, 2)
