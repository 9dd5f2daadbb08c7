"""Fast self-contained property checks, runnable from the CLI.

Each check returns (name, ok, detail).  These are reduced-size versions of
the repository test suite, meant as a field sanity check of an install.
"""

from __future__ import annotations

import numpy as np

from . import bitstream as bs
from .importance import (
    ScalingSpec,
    SurrogateSpec,
    importance_to_mask,
    importance_to_soft_mask,
    saturated_identity,
    smooth_step,
)
from .quantizer import CodebookStack, CodeMask, FrameCodes, LatentSequence, masked_rvq, rvq_encode


def check_surrogate_gradients(n_points: int = 800):
    s = np.linspace(-2.0, 10.0, n_points)
    h = 1e-6
    worst = 0.0
    for alpha in (0.5, 1.0, 2.0, 4.0, 8.0):
        _, d = smooth_step(s, 0, alpha)
        vp, _ = smooth_step(s + h, 0, alpha)
        vm, _ = smooth_step(s - h, 0, alpha)
        fd = (vp - vm) / (2.0 * h)
        worst = max(worst, float(np.max(np.abs(d - fd) / np.maximum(1.0, np.maximum(np.abs(d), np.abs(fd))))))
    return "surrogate-gradients", worst <= 1e-6, f"max scaled error {worst:.2e}"


def check_surrogate_convergence():
    s = np.linspace(-1.0, 9.0, 2001)
    ident, _ = saturated_identity(s, 0)
    sups = []
    for alpha in (0.5, 1.0, 2.0, 4.0, 8.0, 16.0):
        val, _ = smooth_step(s, 0, alpha)
        sup = float(np.max(np.abs(val - ident)))
        if sup > np.log(2.0) / (2.0 * alpha) + 1e-6:
            return "surrogate-convergence", False, f"alpha={alpha} sup={sup:.5f} above bound"
        sups.append(sup)
    ok = all(a > b for a, b in zip(sups, sups[1:]))
    return "surrogate-convergence", ok, f"sups {['%.4f' % s_ for s_ in sups]}"


def check_mask_laws(n_maps: int = 5000, seed: int = 0):
    rng = np.random.default_rng(seed)
    n_q = 8
    specs = [
        ScalingSpec("linear", 17.0),
        ScalingSpec("exponential", 2.5),
        ScalingSpec("transformed", 3.0),
    ]
    for spec in specs:
        p = rng.uniform(1e-6, 1.0 - 1e-6, n_maps)
        m = importance_to_mask(p, spec, n_q).astype(np.int8)
        if np.any(np.diff(m, axis=0) > 0) or not np.all(m[0] == 1):
            return "mask-laws", False, f"violation under {spec.variant}"
    return "mask-laws", True, f"{n_maps} maps x 3 operators"


def check_gradient_support(seed: int = 0):
    rng = np.random.default_rng(seed)
    n_q = 8
    for _ in range(200):
        p = rng.uniform(1e-3, 1.0 - 1e-3, 16)
        l = float(rng.uniform(1.0, 48.0))
        spec = ScalingSpec("linear", l)
        _, d_id = importance_to_soft_mask(p, spec, SurrogateSpec("identity"), n_q)
        if np.any((d_id != 0.0).sum(axis=0) > 1):
            return "gradient-support", False, "identity surrogate fed >1 row"
        _, d_sm = importance_to_soft_mask(p, spec, SurrogateSpec("smooth", 2.0), n_q)
        if not np.all(d_sm > 0.0):
            return "gradient-support", False, "smooth surrogate row not positive"
    return "gradient-support", True, "200 random (p, l) draws"


def check_bitstream_roundtrip(n_streams: int = 300, seed: int = 0):
    rng = np.random.default_rng(seed)
    for _ in range(n_streams):
        n_q = int(rng.integers(1, 9))
        bits = int(rng.integers(1, 11))
        mode = bs.MODE_VBR if rng.uniform() < 0.7 else bs.MODE_CBR
        n_active = int(rng.integers(1, n_q + 1))
        frames = []
        for _ in range(int(rng.integers(0, 24))):
            n = n_active if mode == bs.MODE_CBR else int(rng.integers(1, n_q + 1))
            frames.append(rng.integers(0, 1 << bits, n))
        fc = FrameCodes(n_q, frames)
        hdr = bs.StreamHeader(8000, 64, n_q, bits, mode, n_active)
        back_h, back = bs.unpack(bs.pack(fc, hdr))
        if back != fc or back_h.mode != mode:
            return "bitstream-roundtrip", False, "mismatch"
    return "bitstream-roundtrip", True, f"{n_streams} fuzzed streams"


def check_masked_rvq_equivalence(n_cases: int = 100, seed: int = 0):
    rng = np.random.default_rng(seed)
    for _ in range(n_cases):
        n_q, k, dim, t = 4, 8, 4, 6
        stack = CodebookStack.with_identity_projections(n_q, k, dim, codes=rng.standard_normal((n_q, k, dim)))
        z = LatentSequence(rng.standard_normal((dim, t)), 100.0)
        full_codes, full_q = rvq_encode(z, n_q, stack)
        m_codes, m_q = masked_rvq(z, CodeMask(np.ones((n_q, t), dtype=np.uint8)), stack)
        if full_codes != m_codes or not np.array_equal(full_q.data, m_q.data):
            return "masked-rvq-equivalence", False, "all-ones mask mismatch"
    return "masked-rvq-equivalence", True, f"{n_cases} random latent sequences"


ALL_CHECKS = (
    check_surrogate_gradients,
    check_surrogate_convergence,
    check_mask_laws,
    check_gradient_support,
    check_bitstream_roundtrip,
    check_masked_rvq_equivalence,
)


def run_all(verbose_print=print) -> bool:
    ok_all = True
    for check in ALL_CHECKS:
        name, ok, detail = check()
        verbose_print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        ok_all &= ok
    return ok_all
