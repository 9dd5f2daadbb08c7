"""Objective quality metrics: scale-invariant SDR, multiscale magnitude-
spectrum L1 (with an analytic gradient for training), and rate-distortion
operating-point evaluation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import bitstream
from .importance import ScalingSpec, importance_to_mask
from .model import ToyCodecParams, decode_codes, frame_signal
from .quantizer import CodebookStack, CodeMask, FrameCodes, LatentSequence, masked_rvq, rvq_encode

# Sentinel for a zero-residual match; finite so aggregation stays well defined.
SI_SDR_PERFECT = 300.0

_PERFECT_REL2 = 1e-24  # residual/reference energy ratio treated as exact

DEFAULT_SPECTRAL_WINDOWS = (512, 2048)


@dataclass(frozen=True)
class MetricReport:
    si_sdr: float
    waveform_l1: float
    spectral_l1: float
    bitrate: float  # bits/second


def si_sdr(ref: np.ndarray, est: np.ndarray) -> float:
    """Scale-invariant signal-to-distortion ratio in dB.

    The reference is rescaled by <est, ref>/||ref||^2 before the energy
    ratio, so any global gain on the estimate cancels.  A (numerically)
    zero residual returns SI_SDR_PERFECT.
    """
    ref = np.asarray(ref, dtype=np.float64).ravel()
    est = np.asarray(est, dtype=np.float64).ravel()
    if ref.shape != est.shape:
        raise ValueError("signals must have equal length")
    ref_energy = float(ref @ ref)
    if ref_energy == 0.0:
        raise ValueError("reference is identically zero")
    alpha = float(est @ ref) / ref_energy
    target = alpha * ref
    target_energy = float(target @ target)
    residual = target - est
    residual_energy = float(residual @ residual)
    if target_energy == 0.0 or residual_energy <= _PERFECT_REL2 * target_energy:
        return SI_SDR_PERFECT
    return 10.0 * np.log10(target_energy / residual_energy)


def _hann(n: int) -> np.ndarray:
    # periodic window, the usual STFT convention
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _stft_rmag(x: np.ndarray, window: int, hop: int):
    starts = range(0, x.shape[0] - window + 1, hop)
    w = _hann(window)
    segs = np.stack([x[s : s + window] * w for s in starts])
    spec = np.fft.rfft(segs, axis=1)
    return spec, np.abs(spec)


def spectral_l1(ref: np.ndarray, est: np.ndarray, windows=DEFAULT_SPECTRAL_WINDOWS, hop_ratio: float = 0.25) -> float:
    """Multiscale magnitude-spectrum L1.

    For each window size: Hann-windowed frames at hop = window * hop_ratio,
    full DFT magnitudes, mean absolute difference; the scales are summed.
    """
    value, _ = spectral_l1_grad(ref, est, windows, hop_ratio, need_grad=False)
    return value


def spectral_l1_grad(ref, est, windows=DEFAULT_SPECTRAL_WINDOWS, hop_ratio: float = 0.25, need_grad: bool = True):
    """spectral_l1 and its gradient with respect to the estimate."""
    ref = np.asarray(ref, dtype=np.float64).ravel()
    est = np.asarray(est, dtype=np.float64).ravel()
    if ref.shape != est.shape:
        raise ValueError("signals must have equal length")
    total = 0.0
    grad = np.zeros_like(est) if need_grad else None
    for window in windows:
        if window < 2 or (window & (window - 1)) != 0:
            raise ValueError("window sizes must be powers of two")
        if ref.shape[0] < window:
            raise ValueError(f"signal shorter than window {window}")
        hop = max(1, int(window * hop_ratio))
        _, mag_ref = _stft_rmag(ref, window, hop)
        spec_est, mag_est = _stft_rmag(est, window, hop)
        diff = mag_est - mag_ref
        # one-sided bins stand in for the full symmetric spectrum: interior
        # bins count twice, the mean is over all `window` bins
        bin_w = np.full(diff.shape[1], 2.0)
        bin_w[0] = 1.0
        bin_w[-1] = 1.0
        count = diff.shape[0] * window
        total += float(np.sum(bin_w * np.abs(diff))) / count
        if not need_grad:
            continue
        # d|X_k|/dx_n = Re[X_k e^{2 pi i k n / N}] / |X_k|; zero where |X_k| = 0
        safe = np.where(mag_est > 0.0, mag_est, 1.0)
        y = (np.sign(diff) / count) * np.where(mag_est > 0.0, 1.0, 0.0) * spec_est / safe
        # irfft applies the same interior-bin doubling, so y carries no bin_w
        d_segs = window * np.fft.irfft(y, n=window, axis=1)
        d_segs *= _hann(window)
        for row, s in enumerate(range(0, est.shape[0] - window + 1, hop)):
            grad[s : s + window] += d_segs[row]
    return total, grad


def waveform_l1(ref: np.ndarray, est: np.ndarray) -> float:
    ref = np.asarray(ref, dtype=np.float64).ravel()
    est = np.asarray(est, dtype=np.float64).ravel()
    if ref.shape != est.shape:
        raise ValueError("signals must have equal length")
    return float(np.mean(np.abs(ref - est)))


def encode_segment(
    x: np.ndarray,
    params: ToyCodecParams,
    stack: CodebookStack,
    mode: str,
    l: float | None = None,
    n_active: int | None = None,
):
    """Analysis half of the codec: frames -> latents -> (FrameCodes, x_padded).

    mode "vbr" masks stages via the importance map scaled by l; mode "cbr"
    runs every frame at depth n_active and uses no importance map.
    """
    cfg = params.config
    frames = frame_signal(x, cfg.window)
    h = np.tanh(frames @ params.enc_w1.T + params.enc_b1)
    z_e = h @ params.enc_w2.T + params.enc_b2
    latent = LatentSequence(z_e.T, cfg.frame_rate)
    if mode == "cbr":
        if n_active is None:
            raise ValueError("cbr mode needs n_active")
        codes, _ = rvq_encode(latent, n_active, stack)
    elif mode == "vbr":
        if l is None:
            raise ValueError("vbr mode needs a scale factor")
        from .model import importance_forward, _sigmoid, _LOGIT_CLIP

        logits, _, _ = importance_forward(params, h)
        p = _sigmoid(np.clip(logits, -_LOGIT_CLIP, _LOGIT_CLIP))
        mask = CodeMask(importance_to_mask(p, ScalingSpec("linear", l), stack.n_q_max))
        codes, _ = masked_rvq(latent, mask, stack)
    else:
        raise ValueError("mode must be 'vbr' or 'cbr'")
    return codes, frames.reshape(-1)


def rd_point(
    params: ToyCodecParams,
    stack: CodebookStack,
    segments: list[np.ndarray],
    mode: str,
    l: float | None = None,
    n_active: int | None = None,
    spectral_windows=DEFAULT_SPECTRAL_WINDOWS,
) -> MetricReport:
    """Mean metrics and bitrate for one operating point over a corpus.

    VBR bitrate includes the per-frame count field; CBR bitrate does not.
    """
    cfg = params.config
    rates, sdrs, wl1s, sl1s = [], [], [], []
    for x in segments:
        codes, x_pad = encode_segment(x, params, stack, mode, l=l, n_active=n_active)
        xhat = decode_codes(codes.indices, stack, params)
        if mode == "cbr":
            rate = bitstream.bitrate(codes, cfg.frame_rate, bitstream.MODE_CBR, stack.index_bits, n_active)
        else:
            rate = bitstream.bitrate(codes, cfg.frame_rate, bitstream.MODE_VBR, stack.index_bits)
        rates.append(rate)
        if float(x_pad @ x_pad) > 0:  # SI-SDR undefined on an all-zero reference
            sdrs.append(si_sdr(x_pad, xhat))
        wl1s.append(waveform_l1(x_pad, xhat))
        sl1s.append(spectral_l1(x_pad, xhat, spectral_windows))
    return MetricReport(
        si_sdr=float(np.mean(sdrs)) if sdrs else SI_SDR_PERFECT,
        waveform_l1=float(np.mean(wl1s)),
        spectral_l1=float(np.mean(sl1s)),
        bitrate=float(np.mean(rates)),
    )
