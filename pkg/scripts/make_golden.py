"""Regenerate the frozen test fixtures under tests/fixtures/.

The stream fixture is assembled straight from the documented byte layout
(docs/format.md) with hand-rolled bit strings, deliberately bypassing the
library packer, so the checked-in bytes act as an independent conformance
oracle.  The decode fixtures pin the current pipeline output for regression.
"""

from __future__ import annotations

import json
import struct
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "tests" / "fixtures"

sys.path.insert(0, str(ROOT / "src"))

from vrvq import bitstream as bs  # noqa: E402
from vrvq import train as tr  # noqa: E402
from vrvq.audio_io import write_wav  # noqa: E402
from vrvq.config import RunConfig  # noqa: E402
from vrvq.model import init_params, save_params  # noqa: E402
from vrvq.quantizer import CodebookStack, LatentSequence, fit_codebooks, save_stack  # noqa: E402

GOLDEN_FRAMES = [[5], [9, 1], [1023, 0, 512], [7, 7, 7, 7, 7, 7, 7, 7]]
GOLDEN_SR = 44100
GOLDEN_HOP = 512
GOLDEN_NQ = 8
GOLDEN_BITS = 10


def bitstring_stream() -> bytes:
    head = b"VRVQ0001" + struct.pack(
        "<7I", GOLDEN_SR, GOLDEN_HOP, GOLDEN_NQ, GOLDEN_BITS, 0, 0, len(GOLDEN_FRAMES)
    ) + b"\x00" * 32
    bits = ""
    for frame in GOLDEN_FRAMES:
        bits += format(len(frame) - 1, "03b")
        for v in frame:
            bits += format(v, f"0{GOLDEN_BITS}b")
    bits += "0" * (-len(bits) % 8)
    payload = bytes(int(bits[i : i + 8], 2) for i in range(0, len(bits), 8))
    return head + payload


def make_stream_fixture() -> None:
    (FIXTURES / "golden.vrvq").write_bytes(bitstring_stream())
    (FIXTURES / "golden_frames.json").write_text(
        json.dumps(
            {
                "sample_rate": GOLDEN_SR,
                "n_q_max": GOLDEN_NQ,
                "codebook_bits": GOLDEN_BITS,
                "frames": GOLDEN_FRAMES,
            },
            indent=1,
        )
        + "\n"
    )


def make_decode_fixture() -> None:
    """A tiny untrained checkpoint, an encoded stream, and its decoded PCM."""
    cfg = RunConfig(steps=1, batch=1)
    mcfg = cfg.model_config()
    rng = np.random.default_rng(2024)
    params = init_params(mcfg, rng)
    stack = CodebookStack.with_identity_projections(mcfg.n_q_max, mcfg.codebook_size, mcfg.latent_dim)
    corpus = tr.synth_corpus(seed=77, silence_fraction=0.3)
    frames_latent = []
    from vrvq.model import frame_signal

    for _ in range(8):
        x = next(corpus)
        fr = frame_signal(x, mcfg.window)
        h = np.tanh(fr @ params.enc_w1.T + params.enc_b1)
        frames_latent.append(LatentSequence((h @ params.enc_w2.T + params.enc_b2).T, mcfg.frame_rate))
    stack = fit_codebooks(frames_latent, stack, 20, seed=5)

    ckpt = FIXTURES / "golden_ckpt"
    ckpt.mkdir(parents=True, exist_ok=True)
    digest = cfg.digest()
    save_params(params, str(ckpt / "params.net"), digest)
    save_stack(stack, str(ckpt / "codebooks.cbk"), digest)

    wav_in = next(tr.synth_corpus(seed=4242, silence_fraction=0.4))
    write_wav(str(FIXTURES / "golden_input.wav"), wav_in, mcfg.sample_rate)

    from vrvq.cli import main

    rc = main(
        [
            "encode",
            str(FIXTURES / "golden_input.wav"),
            "--checkpoint",
            str(ckpt),
            "--l",
            "8.0",
            "--out",
            str(FIXTURES / "golden_encoded.vrvq"),
        ]
    )
    assert rc == 0, "encode failed"
    rc = main(
        [
            "decode",
            str(FIXTURES / "golden_encoded.vrvq"),
            "--checkpoint",
            str(ckpt),
            "--out",
            str(FIXTURES / "golden_decoded.wav"),
        ]
    )
    assert rc == 0, "decode failed"


if __name__ == "__main__":
    FIXTURES.mkdir(parents=True, exist_ok=True)
    make_stream_fixture()
    make_decode_fixture()
    print(f"fixtures written under {FIXTURES}")
