import json
from pathlib import Path

import numpy as np
import pytest

from vrvq import bitstream as bs
from vrvq.audio_io import read_wav, write_wav
from vrvq.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, SWEEP_L_DEFAULT, main
from vrvq.config import RunConfig, load_config, parse_config_text

FIXTURES = Path(__file__).parent / "fixtures"

FAST_TRAIN = """
steps = 40
batch = 4
window = 16
hidden = 8
latent_dim = 4
n_q_max = 4
codebook_size = 16
code_dim = 4
sample_rate = 2000
segment_len = 256
spectral_windows = 16,64
warmup_segments = 8
codebook_fit_iters = 8
refit_every = 20
"""


@pytest.fixture(scope="module")
def fast_checkpoint(tmp_path_factory):
    root = tmp_path_factory.mktemp("ckpt")
    cfg_file = root / "fast.cfg"
    cfg_file.write_text(FAST_TRAIN)
    out = root / "run"
    rc = main(["train", "--config", str(cfg_file), "--seed", "3", "--out", str(out)])
    assert rc == EXIT_OK
    return out, cfg_file


def tone_wav(path, sample_rate=2000, n=512, silent_half=False):
    t = np.arange(n)
    x = 0.5 * np.sin(2 * np.pi * 125.0 * t / sample_rate)
    if silent_half:
        x[: n // 2] = 0.0
    write_wav(str(path), x, sample_rate)
    return x


class TestConfig:
    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError):
            parse_config_text("definitely_not_a_key = 3")

    def test_parse_types(self):
        cfg = parse_config_text("steps = 12\nbeta = 0.5\nl2_normalized = true\nspectral_windows = 32,128")
        assert cfg.steps == 12 and cfg.beta == 0.5
        assert cfg.l2_normalized is True
        assert cfg.spectral_windows == (32, 128)

    def test_comments_and_blanks(self):
        cfg = parse_config_text("# a comment\n\nsteps = 7  # trailing\n")
        assert cfg.steps == 7

    def test_digest_stable(self):
        assert RunConfig().digest() == RunConfig().digest()
        assert RunConfig(seed=1).digest() != RunConfig().digest()

    def test_load_config_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_config(str(tmp_path / "nope.cfg"))


class TestTrainCommand:
    def test_outputs_and_determinism(self, tmp_path):
        cfg_file = tmp_path / "fast.cfg"
        cfg_file.write_text(FAST_TRAIN)
        outs = []
        for run in range(2):
            out = tmp_path / f"run{run}"
            rc = main(["train", "--config", str(cfg_file), "--seed", "7", "--steps", "10", "--out", str(out)])
            assert rc == EXIT_OK
            assert (out / "params.net").exists() and (out / "codebooks.cbk").exists()
            assert (out / "train_log.csv").exists() and (out / "config.txt").exists()
            outs.append(((out / "params.net").read_bytes(), (out / "codebooks.cbk").read_bytes()))
        assert outs[0] == outs[1]

    def test_missing_config_file_fails_cleanly(self, tmp_path, capsys):
        rc = main(["train", "--config", str(tmp_path / "absent.cfg"), "--out", str(tmp_path / "o")])
        assert rc == EXIT_DATA
        assert "absent.cfg" in capsys.readouterr().err

    def test_usage_error_exit_code(self):
        assert main(["train"]) == EXIT_USAGE  # --out is required
        assert main(["not-a-command"]) == EXIT_USAGE

    def test_divergence_exit_code(self, tmp_path, capsys):
        from vrvq.cli import EXIT_DIVERGENCE

        cfg_file = tmp_path / "explode.cfg"
        cfg_file.write_text(FAST_TRAIN + "learn_rate = 1e12\nsteps = 10\nfreeze_importance_frac = 0.0\n")
        rc = main(["train", "--config", str(cfg_file), "--seed", "1", "--out", str(tmp_path / "boom")])
        assert rc == EXIT_DIVERGENCE
        assert "divergence" in capsys.readouterr().err

    def test_beta_contrast(self, tmp_path):
        # the beta=8 run ends with mean importance no larger than beta=0
        finals = {}
        cfg_file = tmp_path / "fast.cfg"
        cfg_file.write_text(FAST_TRAIN)
        for beta in (0.0, 8.0):
            out = tmp_path / f"beta{beta}"
            rc = main(["train", "--config", str(cfg_file), "--seed", "5", "--beta", str(beta),
                       "--steps", "120", "--out", str(out)])
            assert rc == EXIT_OK
            rows = (out / "train_log.csv").read_text().splitlines()
            rates = [float(line.split(",")[3]) for line in rows[2:]]
            finals[beta] = np.mean(rates[-20:])
        assert finals[8.0] <= finals[0.0]


class TestEncodeDecode:
    def test_roundtrip_lengths_and_metrics(self, fast_checkpoint, tmp_path):
        ckpt, _ = fast_checkpoint
        wav_in = tmp_path / "in.wav"
        x = tone_wav(wav_in)
        stream = tmp_path / "out.vrvq"
        rc = main(["encode", str(wav_in), "--checkpoint", str(ckpt), "--l", "8", "--out", str(stream)])
        assert rc == EXIT_OK
        wav_out = tmp_path / "out.wav"
        rc = main(["decode", str(stream), "--checkpoint", str(ckpt), "--out", str(wav_out)])
        assert rc == EXIT_OK
        y, sr = read_wav(str(wav_out))
        assert sr == 2000
        assert y.shape[0] == x.shape[0]  # 512 is frame-aligned at window 16
        assert np.isfinite(y).all()
        from vrvq.metrics import SI_SDR_PERFECT, si_sdr

        score = si_sdr(x, y)
        assert np.isfinite(score) and score != SI_SDR_PERFECT

    def test_decode_deterministic(self, fast_checkpoint, tmp_path):
        ckpt, _ = fast_checkpoint
        wav_in = tmp_path / "in.wav"
        tone_wav(wav_in)
        stream = tmp_path / "s.vrvq"
        main(["encode", str(wav_in), "--checkpoint", str(ckpt), "--out", str(stream)])
        outs = []
        for i in range(2):
            wav_out = tmp_path / f"o{i}.wav"
            assert main(["decode", str(stream), "--checkpoint", str(ckpt), "--out", str(wav_out)]) == EXIT_OK
            outs.append(wav_out.read_bytes())
        assert outs[0] == outs[1]

    def test_cbr_payload_ratio_one_to_eight(self, tmp_path):
        # 10-bit codes at full scale: CBR(1) vs CBR(8) payloads are exactly 1:8
        cfg_file = tmp_path / "big.cfg"
        cfg_file.write_text(
            "steps = 2\nbatch = 2\nsample_rate = 44100\nwindow = 512\nhidden = 8\n"
            "latent_dim = 8\nn_q_max = 8\ncodebook_size = 1024\ncode_dim = 8\n"
            "segment_len = 4096\nspectral_windows = 512\nwarmup_segments = 4\n"
            "codebook_fit_iters = 2\nrefit_every = 0\n"
        )
        out = tmp_path / "big"
        assert main(["train", "--config", str(cfg_file), "--seed", "1", "--out", str(out)]) == EXIT_OK
        wav_in = tmp_path / "in.wav"
        tone_wav(wav_in, sample_rate=44100, n=512 * 16)
        sizes = {}
        for n in (1, 8):
            stream = tmp_path / f"cbr{n}.vrvq"
            rc = main(["encode", str(wav_in), "--checkpoint", str(out), "--mode", "cbr",
                       "--nq", str(n), "--out", str(stream)])
            assert rc == EXIT_OK
            blob = stream.read_bytes()
            hdr, fc = bs.unpack(blob)
            sizes[n] = bs.payload_bits(fc, hdr.codebook_bits, hdr.mode, hdr.count_bits)
        assert sizes[8] == 8 * sizes[1]

    def test_scale_extremes_on_silence_heavy_content(self, fast_checkpoint, tmp_path):
        ckpt, _ = fast_checkpoint
        wav_in = tmp_path / "halfsilent.wav"
        tone_wav(wav_in, silent_half=True)
        sizes = {}
        for l in (1.0, 48.0):
            stream = tmp_path / f"l{l}.vrvq"
            rc = main(["encode", str(wav_in), "--checkpoint", str(ckpt), "--l", str(l), "--out", str(stream)])
            assert rc == EXIT_OK
            sizes[l] = stream.stat().st_size
        assert sizes[1.0] <= sizes[48.0]

    def test_wrong_sample_rate_rejected(self, fast_checkpoint, tmp_path):
        ckpt, _ = fast_checkpoint
        wav_in = tmp_path / "bad_sr.wav"
        tone_wav(wav_in, sample_rate=4000)
        rc = main(["encode", str(wav_in), "--checkpoint", str(ckpt), "--out", str(tmp_path / "x.vrvq")])
        assert rc == EXIT_DATA

    def test_corrupt_magic_rejected(self, fast_checkpoint, tmp_path):
        ckpt, _ = fast_checkpoint
        bad = tmp_path / "bad.vrvq"
        bad.write_bytes(b"GARBAGE!" + b"\x00" * 64)
        rc = main(["decode", str(bad), "--checkpoint", str(ckpt), "--out", str(tmp_path / "y.wav")])
        assert rc == EXIT_DATA

    def test_checkpoint_mismatch_warns_but_decodes(self, fast_checkpoint, tmp_path, caplog):
        import logging

        ckpt, cfg_file = fast_checkpoint
        wav_in = tmp_path / "in.wav"
        tone_wav(wav_in)
        stream = tmp_path / "s.vrvq"
        assert main(["encode", str(wav_in), "--checkpoint", str(ckpt), "--out", str(stream)]) == EXIT_OK
        other = tmp_path / "other_ckpt"
        assert main(["train", "--config", str(cfg_file), "--seed", "99", "--steps", "5",
                     "--out", str(other)]) == EXIT_OK
        with caplog.at_level(logging.WARNING, logger="vrvq"):
            rc = main(["decode", str(stream), "--checkpoint", str(other), "--out", str(tmp_path / "z.wav")])
        assert rc == EXIT_OK
        assert any("different checkpoint" in r.message for r in caplog.records)

    def test_golden_decode_regression(self, tmp_path):
        ckpt = FIXTURES / "golden_ckpt"
        out = tmp_path / "dec.wav"
        rc = main(["decode", str(FIXTURES / "golden_encoded.vrvq"), "--checkpoint", str(ckpt), "--out", str(out)])
        assert rc == EXIT_OK
        got, sr = read_wav(str(out))
        ref, ref_sr = read_wav(str(FIXTURES / "golden_decoded.wav"))
        assert sr == ref_sr
        # float32 pipeline; BLAS reduction order may differ across machines
        assert np.max(np.abs(got - ref)) < 1e-6


class TestSweepCommand:
    def test_sweep_csv(self, fast_checkpoint, tmp_path):
        ckpt, cfg_file = fast_checkpoint
        out_csv = tmp_path / "rd.csv"
        rc = main(["sweep", "--config", str(cfg_file), "--checkpoint", str(ckpt),
                   "--eval-segments", "3", "--eval-seconds", "1.0", "--out", str(out_csv)])
        assert rc == EXIT_OK
        lines = out_csv.read_text().splitlines()
        assert lines[0].startswith("# config_hash:")
        assert lines[1] == "mode,l_or_n,kbps,si_sdr,waveform_l1,spectral_l1"
        rows = [dict(zip(lines[1].split(","), ln.split(","))) for ln in lines[2:]]
        vbr = [r for r in rows if r["mode"] == "vbr"]
        cbr = [r for r in rows if r["mode"] == "cbr"]
        assert [float(r["l_or_n"]) for r in vbr] == list(SWEEP_L_DEFAULT)
        assert [int(r["l_or_n"]) for r in cbr] == [1, 2, 3, 4]
        # monotone overall; strictly separated until the mask saturates at
        # n_q_max, after which the top of the list ties
        kbps = [float(r["kbps"]) for r in vbr]
        assert all(a <= b for a, b in zip(kbps, kbps[1:]))
        assert all(a < b for a, b in zip(kbps[:4], kbps[1:4]))
        assert len(set(kbps)) >= 3

    def test_selftest_command(self):
        assert main(["selftest"]) == EXIT_OK


class TestAudioIo:
    def test_pcm16_roundtrip(self, tmp_path):
        x = np.linspace(-0.9, 0.9, 100)
        path = tmp_path / "a.wav"
        write_wav(str(path), x, 8000, pcm16=True)
        y, sr = read_wav(str(path))
        assert sr == 8000
        assert np.max(np.abs(x - y)) < 1.0 / 32000

    def test_float32_roundtrip_exact(self, tmp_path):
        x = np.linspace(-0.9, 0.9, 100).astype(np.float32).astype(np.float64)
        path = tmp_path / "b.wav"
        write_wav(str(path), x, 8000, config_hash=b"\x01" * 16)
        y, sr = read_wav(str(path))
        assert np.array_equal(x, y)

    def test_unknown_chunks_skipped(self, tmp_path):
        path = tmp_path / "c.wav"
        write_wav(str(path), np.zeros(10), 8000, config_hash=b"\x02" * 16)
        y, _ = read_wav(str(path))  # VCFG chunk present and ignored
        assert y.shape == (10,)

    def test_stereo_rejected(self, tmp_path):
        import struct

        fmt = struct.pack("<HHIIHH", 1, 2, 8000, 32000, 4, 16)
        data = b"\x00" * 8
        body = b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(data)) + data
        blob = b"RIFF" + struct.pack("<I", 4 + len(body)) + b"WAVE" + body
        path = tmp_path / "st.wav"
        path.write_bytes(blob)
        with pytest.raises(ValueError):
            read_wav(str(path))
