"""Command-line surface: train, encode, decode, sweep, selftest.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 divergence.
Set VRVQ_LOG=DEBUG|INFO|WARNING for verbosity.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bitstream as bs
from . import selftest
from .audio_io import WavFormatError, read_wav, write_wav
from .config import RunConfig, load_config
from .importance import ScalingSpec
from .metrics import DEFAULT_SPECTRAL_WINDOWS, encode_segment, rd_point
from .model import decode_codes, load_params, save_params
from .quantizer import load_stack, save_stack
from .train import DivergenceError, synth_corpus, train_loop, write_log_csv

log = logging.getLogger("vrvq")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGENCE = 3

PARAMS_FILE = "params.net"
CODEBOOK_FILE = "codebooks.cbk"
CONFIG_FILE = "config.txt"
LOG_FILE = "train_log.csv"

SWEEP_L_DEFAULT = (4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0, 18.0, 20.0, 24.0, 32.0)
SWEEP_COLUMNS = ("mode", "l_or_n", "kbps", "si_sdr", "waveform_l1", "spectral_l1")


class _UsageError(Exception):
    pass


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits with 2 by default
        raise _UsageError(message)


def _build_parser() -> _ArgumentParser:
    parser = _ArgumentParser(prog="vrvq", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int, help="override the run seed")
        p.add_argument("--alpha", type=float, help="smooth-surrogate sharpness")
        p.add_argument("--beta", type=float, help="rate-loss weight")

    p_train = sub.add_parser("train", help="train a checkpoint on synthetic audio")
    common(p_train)
    p_train.add_argument("--steps", type=int)
    p_train.add_argument("--surrogate", choices=("identity", "smooth"))
    p_train.add_argument("--out", required=True, help="output directory")

    p_enc = sub.add_parser("encode", help="encode a wav file to a .vrvq stream")
    common(p_enc)
    p_enc.add_argument("audio_in")
    p_enc.add_argument("--checkpoint", required=True, help="directory from `vrvq train`")
    p_enc.add_argument("--l", type=float, default=8.0, help="inference scale factor (VBR)")
    p_enc.add_argument("--mode", choices=("vbr", "cbr"), default="vbr")
    p_enc.add_argument("--nq", type=int, default=8, help="stage count for CBR mode")
    p_enc.add_argument("--out", required=True)

    p_dec = sub.add_parser("decode", help="decode a .vrvq stream to wav")
    common(p_dec)
    p_dec.add_argument("stream_in")
    p_dec.add_argument("--checkpoint", required=True)
    p_dec.add_argument("--pcm16", action="store_true", help="write PCM-16 instead of float-32")
    p_dec.add_argument("--out", required=True)

    p_sweep = sub.add_parser("sweep", help="rate-distortion sweep to CSV")
    common(p_sweep)
    p_sweep.add_argument("--checkpoint", required=True)
    p_sweep.add_argument("--l-list", type=float, nargs="+", default=list(SWEEP_L_DEFAULT))
    p_sweep.add_argument("--n-list", type=int, nargs="+", default=None, help="CBR depths (default 1..n_q_max)")
    p_sweep.add_argument("--eval-seed", type=int, default=9000)
    p_sweep.add_argument("--eval-segments", type=int, default=12)
    p_sweep.add_argument("--eval-seconds", type=float, default=2.0)
    p_sweep.add_argument("--out", required=True)

    p_self = sub.add_parser("selftest", help="run the property suites")
    common(p_self)
    return parser


def _resolve_config(args) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        cfg = load_config(str(path), cfg)
    overrides = {}
    for key in ("seed", "alpha", "beta", "steps", "surrogate"):
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = val
    if overrides:
        cfg = replace(cfg, **overrides)
    return cfg


def _echo_config(cfg: RunConfig) -> None:
    print("# resolved configuration")
    print(cfg.canonical_text(), end="")
    print(f"# config_hash: {cfg.digest().hex()}")


def _checkpoint_hash(ckpt_dir: Path) -> bytes:
    h = hashlib.sha256()
    for name in (PARAMS_FILE, CODEBOOK_FILE):
        h.update((ckpt_dir / name).read_bytes())
    return h.digest()[:16]


def _load_checkpoint(ckpt_dir: str):
    ckpt = Path(ckpt_dir)
    p_path = ckpt / PARAMS_FILE
    c_path = ckpt / CODEBOOK_FILE
    if not p_path.exists() or not c_path.exists():
        raise FileNotFoundError(f"checkpoint directory {ckpt} must hold {PARAMS_FILE} and {CODEBOOK_FILE}")
    stack, _ = load_stack(str(c_path))
    params, cfg_hash = load_params(
        str(p_path),
        cfg_extra={
            "n_q_max": stack.n_q_max,
            "codebook_size": stack.codebook_size,
            "code_dim": stack.code_dim,
            "l2_normalized_lookup": stack.l2_normalized,
        },
    )
    return params, stack, cfg_hash, _checkpoint_hash(ckpt)


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    _echo_config(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus = synth_corpus(
        seed=cfg.seed + 1,
        sample_rate=cfg.sample_rate,
        segment_len=cfg.segment_len,
        silence_fraction=cfg.silence_fraction,
        noise_weight=cfg.noise_weight,
        window=cfg.window,
    )
    params, stack, rows = train_loop(corpus, cfg.model_config(), cfg.train_config())
    digest = cfg.digest()
    save_params(params, str(out / PARAMS_FILE), digest)
    save_stack(stack, str(out / CODEBOOK_FILE), digest)
    write_log_csv(rows, str(out / LOG_FILE), digest.hex())
    (out / CONFIG_FILE).write_text(cfg.canonical_text() + f"# config_hash: {digest.hex()}\n")
    final = rows[-1]
    print(f"trained {cfg.steps} steps: loss={final['loss']:.4f} rate={final['rate_loss']:.4f} mean_nq={final['mean_nq']:.2f}")
    return EXIT_OK


def cmd_encode(args) -> int:
    cfg = _resolve_config(args)
    params, stack, cfg_hash, ckpt_hash = _load_checkpoint(args.checkpoint)
    samples, sr = read_wav(args.audio_in)
    if sr != params.config.sample_rate:
        raise WavFormatError(
            f"sample rate {sr} does not match the checkpoint's {params.config.sample_rate}; resampling is unsupported"
        )
    mode = args.mode
    codes, _ = encode_segment(
        samples, params, stack, mode, l=args.l, n_active=args.nq if mode == "cbr" else None
    )
    header = bs.StreamHeader(
        sample_rate=params.config.sample_rate,
        hop=params.config.window,
        n_q_max=stack.n_q_max,
        codebook_bits=stack.index_bits,
        mode=bs.MODE_CBR if mode == "cbr" else bs.MODE_VBR,
        n_active=args.nq if mode == "cbr" else 0,
        checkpoint_hash=ckpt_hash,
        config_hash=cfg_hash,
    )
    blob = bs.pack(codes, header)
    Path(args.out).write_bytes(blob)
    rate = bs.bitrate(
        codes,
        params.config.frame_rate,
        header.mode,
        stack.index_bits,
        header.n_active,
    )
    print(f"wrote {args.out}: {codes.frame_count} frames, {len(blob)} bytes, {rate / 1000.0:.3f} kbps payload")
    return EXIT_OK


def cmd_decode(args) -> int:
    params, stack, cfg_hash, ckpt_hash = _load_checkpoint(args.checkpoint)
    blob = Path(args.stream_in).read_bytes()
    header, codes = bs.unpack(blob)
    if header.checkpoint_hash != ckpt_hash and any(header.checkpoint_hash):
        log.warning("stream was encoded with a different checkpoint; decoding anyway")
    xhat = decode_codes(codes.indices, stack, params)
    write_wav(args.out, xhat, header.sample_rate, pcm16=args.pcm16, config_hash=cfg_hash)
    print(f"wrote {args.out}: {xhat.shape[0]} samples at {header.sample_rate} Hz")
    return EXIT_OK


def _eval_segments(cfg: RunConfig, seed: int, count: int, seconds: float):
    gen = synth_corpus(
        seed=seed,
        sample_rate=cfg.sample_rate,
        segment_len=int(cfg.sample_rate * seconds),
        silence_fraction=cfg.silence_fraction,
        noise_weight=cfg.noise_weight,
        window=cfg.window,
    )
    return [next(gen) for _ in range(count)]


def sweep_rows(params, stack, segments, l_list, n_list, spectral_windows=DEFAULT_SPECTRAL_WINDOWS):
    rows = []
    for l in l_list:
        rep = rd_point(params, stack, segments, "vbr", l=float(l), spectral_windows=spectral_windows)
        rows.append({"mode": "vbr", "l_or_n": float(l), "kbps": rep.bitrate / 1000.0,
                     "si_sdr": rep.si_sdr, "waveform_l1": rep.waveform_l1, "spectral_l1": rep.spectral_l1})
    for n in n_list:
        rep = rd_point(params, stack, segments, "cbr", n_active=int(n), spectral_windows=spectral_windows)
        rows.append({"mode": "cbr", "l_or_n": int(n), "kbps": rep.bitrate / 1000.0,
                     "si_sdr": rep.si_sdr, "waveform_l1": rep.waveform_l1, "spectral_l1": rep.spectral_l1})
    return rows


def write_sweep_csv(rows, path: str, config_hash_hex: str = "") -> None:
    with open(path, "w") as f:
        if config_hash_hex:
            f.write(f"# config_hash: {config_hash_hex}\n")
        f.write(",".join(SWEEP_COLUMNS) + "\n")
        for row in rows:
            f.write(",".join(str(row[c]) if c in ("mode", "l_or_n") else f"{row[c]:.6g}" for c in SWEEP_COLUMNS) + "\n")


def cmd_sweep(args) -> int:
    cfg = _resolve_config(args)
    params, stack, cfg_hash, _ = _load_checkpoint(args.checkpoint)
    segments = _eval_segments(cfg, args.eval_seed, args.eval_segments, args.eval_seconds)
    n_list = args.n_list if args.n_list else list(range(1, stack.n_q_max + 1))
    windows = tuple(w for w in DEFAULT_SPECTRAL_WINDOWS if w <= len(segments[0]))
    rows = sweep_rows(params, stack, segments, args.l_list, n_list, windows)
    write_sweep_csv(rows, args.out, cfg_hash.hex())
    print(f"wrote {args.out}: {len(rows)} operating points")
    return EXIT_OK


def cmd_selftest(_args) -> int:
    return EXIT_OK if selftest.run_all() else EXIT_DATA


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("VRVQ_LOG", "WARNING").upper())
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    handlers = {
        "train": cmd_train,
        "encode": cmd_encode,
        "decode": cmd_decode,
        "sweep": cmd_sweep,
        "selftest": cmd_selftest,
    }
    try:
        return handlers[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (ValueError, OSError, WavFormatError, bs.StreamFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
