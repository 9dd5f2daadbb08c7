"""Desk-scale codec: framewise affine encoder/decoder, a small convolutional
importance subnet over time, and a trace-based forward/backward pair.

The forward pass caches every intermediate needed for an exact reverse-mode
sweep.  Two gradient conventions are wired in deliberately:

* the stage mask is straight-through: the forward mask is binary while the
  reported Jacobian is the relaxed mask's, and
* the quantizer is straight-through per stage, so the reconstruction passes
  its gradient to the encoder latent unchanged (stage 1 is always active)
  while the residual chain and the code vectors are treated as constants.

``mask_mode="soft"`` keeps the relaxed mask in the reconstruction, and a
``FrozenQuant`` captured from a base trace pins every stop-gradient quantity,
which makes the whole forward a smooth function of the parameters; central
finite differences of that function are what the backward sweep is verified
against.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .importance import (
    ScalingSpec,
    SurrogateSpec,
    importance_to_mask,
    importance_to_soft_mask,
)
from .quantizer import CodebookStack, StageData, quantize_stages

PARAMS_MAGIC = b"VRVQNET1"

IMPORTANCE_KERNELS = (5, 3, 3, 3, 1)
IMPORTANCE_CHANNELS = (16, 8, 4, 2, 1)

_LOGIT_CLIP = 30.0  # sigmoid(+/-30) is still strictly inside (0, 1) in float64


@dataclass(frozen=True)
class ModelConfig:
    sample_rate: int = 8000
    window: int = 64  # samples per frame; hop equals the window
    hidden: int = 32
    latent_dim: int = 8
    n_q_max: int = 8
    codebook_size: int = 32
    code_dim: int = 8
    l2_normalized_lookup: bool = False

    def __post_init__(self) -> None:
        if self.window < 1 or self.hidden < 1 or self.latent_dim < 1:
            raise ValueError("model dimensions must be positive")
        k = self.codebook_size
        if k < 2 or (k & (k - 1)) != 0:
            raise ValueError("codebook_size must be a power of two >= 2")

    @property
    def frame_rate(self) -> float:
        return self.sample_rate / self.window


@dataclass
class ToyCodecParams:
    """All trainable network arrays.  ``version`` advances on every optimizer
    step so stale traces can be rejected."""

    config: ModelConfig
    enc_w1: np.ndarray  # (hidden, window)
    enc_b1: np.ndarray  # (hidden,)
    enc_w2: np.ndarray  # (latent, hidden)
    enc_b2: np.ndarray  # (latent,)
    imp_w: list[np.ndarray]  # per conv layer (c_out, c_in, k)
    imp_b: list[np.ndarray]  # per conv layer (c_out,)
    dec_w1: np.ndarray  # (hidden, latent)
    dec_b1: np.ndarray  # (hidden,)
    dec_w2: np.ndarray  # (window, hidden)
    dec_b2: np.ndarray  # (window,)
    version: int = 0

    def arrays(self) -> dict[str, np.ndarray]:
        """Flat name -> array view of every trainable tensor."""
        out = {
            "enc_w1": self.enc_w1,
            "enc_b1": self.enc_b1,
            "enc_w2": self.enc_w2,
            "enc_b2": self.enc_b2,
            "dec_w1": self.dec_w1,
            "dec_b1": self.dec_b1,
            "dec_w2": self.dec_w2,
            "dec_b2": self.dec_b2,
        }
        for i, (w, b) in enumerate(zip(self.imp_w, self.imp_b)):
            out[f"imp_w{i}"] = w
            out[f"imp_b{i}"] = b
        return out


def importance_channel_plan(hidden: int) -> list[tuple[int, int, int]]:
    """(c_in, c_out, kernel) triplets for the importance conv stack."""
    chans = (hidden,) + IMPORTANCE_CHANNELS
    return [(chans[i], chans[i + 1], IMPORTANCE_KERNELS[i]) for i in range(len(IMPORTANCE_KERNELS))]


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> ToyCodecParams:
    """Gaussian fan-in init; the last importance bias starts positive so the
    untrained map sits near 0.7 and early training exercises most stages."""
    def mat(rows, cols):
        return rng.standard_normal((rows, cols)) / np.sqrt(cols)

    imp_w, imp_b = [], []
    for c_in, c_out, k in importance_channel_plan(cfg.hidden):
        imp_w.append(rng.standard_normal((c_out, c_in, k)) / np.sqrt(c_in * k))
        imp_b.append(np.zeros(c_out))
    imp_b[-1][:] = 1.0
    return ToyCodecParams(
        config=cfg,
        enc_w1=mat(cfg.hidden, cfg.window),
        enc_b1=np.zeros(cfg.hidden),
        enc_w2=mat(cfg.latent_dim, cfg.hidden),
        enc_b2=np.zeros(cfg.latent_dim),
        imp_w=imp_w,
        imp_b=imp_b,
        dec_w1=mat(cfg.hidden, cfg.latent_dim),
        dec_b1=np.zeros(cfg.hidden),
        dec_w2=mat(cfg.window, cfg.hidden),
        dec_b2=np.zeros(cfg.window),
    )


def frame_signal(x: np.ndarray, window: int) -> np.ndarray:
    """Split a 1-D signal into (T, window) frames, zero-padding the tail."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.shape[0] < window:
        raise ValueError("input shorter than one frame")
    t = -(-x.shape[0] // window)
    padded = np.zeros(t * window)
    padded[: x.shape[0]] = x
    return padded.reshape(t, window)


def _conv1d_same(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """x (c_in, T) -> (c_out, T) with zero same-padding; odd kernels only."""
    c_out, c_in, k = w.shape
    t = x.shape[1]
    pad = k // 2
    xp = np.zeros((c_in, t + 2 * pad))
    xp[:, pad : pad + t] = x
    out = np.repeat(b[:, None], t, axis=1)
    for j in range(k):
        out += w[:, :, j] @ xp[:, j : j + t]
    return out


def _conv1d_same_backward(d_out: np.ndarray, x: np.ndarray, w: np.ndarray):
    c_out, c_in, k = w.shape
    t = x.shape[1]
    pad = k // 2
    xp = np.zeros((c_in, t + 2 * pad))
    xp[:, pad : pad + t] = x
    dw = np.empty_like(w)
    d_xp = np.zeros_like(xp)
    for j in range(k):
        dw[:, :, j] = d_out @ xp[:, j : j + t].T
        d_xp[:, j : j + t] += w[:, :, j].T @ d_out
    return d_xp[:, pad : pad + t], dw, d_out.sum(axis=1)


def _snake(u: np.ndarray) -> np.ndarray:
    # periodic activation: u + sin^2(u); derivative 1 + sin(2u) >= 0
    return u + np.sin(u) ** 2


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class FrozenQuant:
    """Stop-gradient quantities pinned from a base trace.

    With these fixed, the forward pass is a smooth function of the
    parameters: the stage values become r_1 + offset for stage 1 and
    constants elsewhere, assignments cannot flip, and the commitment /
    codebook targets stay put.
    """

    indices: np.ndarray  # (S, T)
    q_latent: np.ndarray  # (S, T, D) base stage values
    residual_in: np.ndarray  # (S, T, D)
    proj_residual: np.ndarray  # (S, T, dc) base projected residuals
    code_vec: np.ndarray  # (S, T, dc) base selected codes

    @classmethod
    def from_stage_data(cls, st: StageData) -> "FrozenQuant":
        return cls(
            st.indices.copy(),
            st.q_latent.copy(),
            st.residual_in.copy(),
            st.proj_residual.copy(),
            st.code_vec.copy(),
        )


@dataclass
class ForwardTrace:
    """Everything the backward sweep needs, plus the human-readable outputs."""

    params: ToyCodecParams
    params_version: int
    stack: CodebookStack
    mask_mode: str
    x_padded: np.ndarray  # (T * window,)
    frames: np.ndarray  # (T, window)
    enc_pre: np.ndarray
    h: np.ndarray  # (T, hidden)
    z_e: np.ndarray  # (T, latent)
    conv_inputs: list[np.ndarray]
    conv_pre: list[np.ndarray]
    logits: np.ndarray  # (T,)
    p: np.ndarray  # (T,)
    scale: ScalingSpec | None
    surrogate: SurrogateSpec | None
    mask: np.ndarray  # binary (n_q, T)
    mask_soft: np.ndarray | None
    mask_jac: np.ndarray | None  # d soft / d p, (n_q, T)
    mask_used: np.ndarray  # what multiplied the stage values (float)
    stage_indices: np.ndarray  # (S, T)
    stage_values: np.ndarray  # (S, T, D) values summed into z_q
    commit_in: np.ndarray  # (S, T, dc) projected residuals, live side
    commit_tgt: np.ndarray  # (S, T, dc) selected codes, stop-gradient side
    cb_out: np.ndarray  # (S, T, dc) selected codes, live side
    cb_tgt: np.ndarray  # (S, T, dc) projected residuals, stop-gradient side
    z_q: np.ndarray  # (T, latent)
    dec_pre: np.ndarray
    dec_h: np.ndarray
    xhat_frames: np.ndarray
    xhat: np.ndarray  # (T * window,)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


def importance_forward(params: ToyCodecParams, h: np.ndarray):
    """Run the conv stack on encoder features h (T, hidden).

    Returns (logits (T,), conv_inputs, conv_pre) for the backward sweep.
    """
    x = h.T  # (channels, T)
    inputs, pres = [], []
    n_layers = len(params.imp_w)
    for i, (w, b) in enumerate(zip(params.imp_w, params.imp_b)):
        inputs.append(x)
        u = _conv1d_same(x, w, b)
        pres.append(u)
        x = _snake(u) if i < n_layers - 1 else u
    return x[0], inputs, pres


def forward(
    x: np.ndarray,
    params: ToyCodecParams,
    stack: CodebookStack,
    scale: ScalingSpec | None,
    surrogate: SurrogateSpec | None,
    mask_mode: str = "ste",
    mask_override: np.ndarray | None = None,
    frozen: FrozenQuant | None = None,
) -> ForwardTrace:
    """Full encode-quantize-decode pass.

    mask_mode "ste" multiplies the binary mask into the reconstruction,
    "soft" multiplies the relaxed mask (gradient-check mode).  A
    mask_override skips the importance path entirely (CBR inference).  All
    stages are quantized regardless of the mask so the backward sweep can
    weigh every stage's contribution.
    """
    cfg = params.config
    if mask_mode not in ("ste", "soft"):
        raise ValueError("mask_mode must be 'ste' or 'soft'")
    frames = frame_signal(x, cfg.window)
    t = frames.shape[0]

    enc_pre = frames @ params.enc_w1.T + params.enc_b1
    h = np.tanh(enc_pre)
    z_e = h @ params.enc_w2.T + params.enc_b2

    logits, conv_inputs, conv_pre = importance_forward(params, h)
    p = _sigmoid(np.clip(logits, -_LOGIT_CLIP, _LOGIT_CLIP))

    mask_soft = mask_jac = None
    if mask_override is not None:
        mask = np.asarray(mask_override, dtype=np.uint8)
        if mask.shape != (stack.n_q_max, t):
            raise ValueError("mask override shape must be (n_q_max, T)")
    else:
        if scale is None or surrogate is None:
            raise ValueError("scale and surrogate specs required without a mask override")
        mask = importance_to_mask(p, scale, stack.n_q_max)
        mask_soft, mask_jac = importance_to_soft_mask(p, scale, surrogate, stack.n_q_max)

    if frozen is None:
        st = quantize_stages(z_e, stack.n_q_max, stack)
        stage_indices = st.indices
        stage_values = st.q_latent
        commit_in = cb_tgt = st.proj_residual
        commit_tgt = cb_out = st.code_vec
    else:
        stage_indices = frozen.indices
        stage_values = frozen.q_latent.copy()
        stage_values[0] = stage_values[0] + (z_e - frozen.residual_in[0])
        commit_in = frozen.proj_residual.copy()
        commit_in[0] = z_e @ stack.in_proj[0].T
        commit_tgt = frozen.code_vec
        # live codes under frozen assignments: the codebook-loss path to codes
        cb_out = np.stack([stack.codes[i][frozen.indices[i]] for i in range(stack.n_q_max)])
        cb_tgt = frozen.proj_residual

    if mask_mode == "soft":
        if mask_soft is None:
            raise ValueError("soft mask mode requires the importance path")
        mask_used = mask_soft
    else:
        mask_used = mask.astype(np.float64)

    z_q = np.einsum("st,std->td", mask_used, stage_values)

    dec_pre = z_q @ params.dec_w1.T + params.dec_b1
    dec_h = np.tanh(dec_pre)
    xhat_frames = dec_h @ params.dec_w2.T + params.dec_b2

    return ForwardTrace(
        params=params,
        params_version=params.version,
        stack=stack,
        mask_mode=mask_mode,
        x_padded=frames.reshape(-1),
        frames=frames,
        enc_pre=enc_pre,
        h=h,
        z_e=z_e,
        conv_inputs=conv_inputs,
        conv_pre=conv_pre,
        logits=logits,
        p=p,
        scale=scale,
        surrogate=surrogate,
        mask=mask,
        mask_soft=mask_soft,
        mask_jac=mask_jac,
        mask_used=mask_used,
        stage_indices=stage_indices,
        stage_values=stage_values,
        commit_in=commit_in,
        commit_tgt=commit_tgt,
        cb_out=cb_out,
        cb_tgt=cb_tgt,
        z_q=z_q,
        dec_pre=dec_pre,
        dec_h=dec_h,
        xhat_frames=xhat_frames,
        xhat=xhat_frames.reshape(-1),
    )


class StaleTraceError(RuntimeError):
    """The parameters moved after this trace was recorded."""


@dataclass
class ParamGrads:
    by_name: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.by_name[name]


def backward(
    trace: ForwardTrace,
    d_xhat: np.ndarray,
    d_p: np.ndarray | None = None,
    d_ze: np.ndarray | None = None,
    importance_grad: bool = True,
) -> ParamGrads:
    """Reverse-mode sweep over a trace.

    Seeds: d_xhat is the loss gradient at the reconstruction, d_p at the
    importance map (e.g. the rate term), d_ze directly at the encoder latent
    (e.g. the commitment term).  Gradient flows through the mask via the
    relaxed Jacobian and through quantization as identity into stage 1.
    importance_grad=False detaches the whole importance path (subnet grads
    come back zero and nothing flows from p into the shared encoder).
    """
    params = trace.params
    if trace.params_version != params.version:
        raise StaleTraceError("parameters changed since the trace was recorded")
    cfg = params.config
    t = trace.n_frames

    g: dict[str, np.ndarray] = {}

    d_xf = np.asarray(d_xhat, dtype=np.float64).reshape(t, cfg.window)
    g["dec_w2"] = d_xf.T @ trace.dec_h
    g["dec_b2"] = d_xf.sum(axis=0)
    d_dech = d_xf @ params.dec_w2
    d_decpre = d_dech * (1.0 - trace.dec_h**2)
    g["dec_w1"] = d_decpre.T @ trace.z_q
    g["dec_b1"] = d_decpre.sum(axis=0)
    d_zq = d_decpre @ params.dec_w1

    # mask path: d loss / d soft-mask entry is that stage's contribution
    d_p_total = np.zeros(t)
    if importance_grad:
        if d_p is not None:
            d_p_total += np.asarray(d_p, dtype=np.float64)
        if trace.mask_jac is not None:
            d_mask = np.einsum("std,td->st", trace.stage_values, d_zq)
            d_p_total += np.einsum("st,st->t", trace.mask_jac, d_mask)

    # straight-through quantizer: stage-1 weight carries d_zq to the latent
    d_ze_total = trace.mask_used[0][:, None] * d_zq
    if d_ze is not None:
        d_ze_total = d_ze_total + np.asarray(d_ze, dtype=np.float64)

    # importance subnet
    sig_grad = trace.p * (1.0 - trace.p)
    d_conv_out = (d_p_total * sig_grad)[None, :]  # (1, T)
    n_layers = len(params.imp_w)
    d_x = d_conv_out
    for i in range(n_layers - 1, -1, -1):
        if i < n_layers - 1:
            d_x = d_x * (1.0 + np.sin(2.0 * trace.conv_pre[i]))
        d_x, dw, db = _conv1d_same_backward(d_x, trace.conv_inputs[i], params.imp_w[i])
        g[f"imp_w{i}"] = dw
        g[f"imp_b{i}"] = db
    d_h_from_imp = d_x.T  # (T, hidden)

    g["enc_w2"] = d_ze_total.T @ trace.h
    g["enc_b2"] = d_ze_total.sum(axis=0)
    d_h = d_ze_total @ params.enc_w2 + d_h_from_imp
    d_encpre = d_h * (1.0 - trace.h**2)
    g["enc_w1"] = d_encpre.T @ trace.frames
    g["enc_b1"] = d_encpre.sum(axis=0)

    return ParamGrads(g)


def decode_codes(indices: list[np.ndarray], stack: CodebookStack, params: ToyCodecParams) -> np.ndarray:
    """Reconstruct a waveform from per-frame stage indices."""
    t = len(indices)
    z_q = np.zeros((t, stack.latent_dim))
    for fi, ix in enumerate(indices):
        for stage, code_idx in enumerate(ix):
            z_q[fi] += stack.out_proj[stage] @ stack.codes[stage, int(code_idx)]
    dec_h = np.tanh(z_q @ params.dec_w1.T + params.dec_b1)
    frames = dec_h @ params.dec_w2.T + params.dec_b2
    return frames.reshape(-1)


def save_params(params: ToyCodecParams, path: str, config_hash: bytes = b"\x00" * 16) -> None:
    """Write the documented binary layout (see docs/format.md)."""
    if len(config_hash) != 16:
        raise ValueError("config hash must be 16 bytes")
    cfg = params.config
    plan = importance_channel_plan(cfg.hidden)
    with open(path, "wb") as f:
        f.write(PARAMS_MAGIC)
        f.write(struct.pack("<5I", cfg.sample_rate, cfg.window, cfg.hidden, cfg.latent_dim, len(plan)))
        for c_in, c_out, k in plan:
            f.write(struct.pack("<3I", c_in, c_out, k))
        for name in ("enc_w1", "enc_b1", "enc_w2", "enc_b2"):
            f.write(getattr(params, name).astype("<f4").tobytes())
        for w, b in zip(params.imp_w, params.imp_b):
            f.write(w.astype("<f4").tobytes())
            f.write(b.astype("<f4").tobytes())
        for name in ("dec_w1", "dec_b1", "dec_w2", "dec_b2"):
            f.write(getattr(params, name).astype("<f4").tobytes())
        f.write(config_hash)


def load_params(path: str, cfg_extra: dict | None = None):
    """Read a parameter checkpoint; returns (params, config_hash).

    Fields the checkpoint does not carry (quantizer dims, lookup flag) can be
    supplied through cfg_extra.
    """
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] != PARAMS_MAGIC:
        raise ValueError("bad parameter magic")
    sr, window, hidden, latent, n_layers = struct.unpack_from("<5I", blob, 8)
    off = 8 + 20
    plan = []
    for _ in range(n_layers):
        plan.append(struct.unpack_from("<3I", blob, off))
        off += 12

    def take(shape):
        nonlocal off
        n = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=off).astype(np.float64).reshape(shape)
        off += 4 * n
        return arr

    extra = cfg_extra or {}
    cfg = ModelConfig(sample_rate=sr, window=window, hidden=hidden, latent_dim=latent, **extra)
    enc_w1 = take((hidden, window))
    enc_b1 = take((hidden,))
    enc_w2 = take((latent, hidden))
    enc_b2 = take((latent,))
    imp_w, imp_b = [], []
    for c_in, c_out, k in plan:
        imp_w.append(take((c_out, c_in, k)))
        imp_b.append(take((c_out,)))
    dec_w1 = take((hidden, latent))
    dec_b1 = take((hidden,))
    dec_w2 = take((window, hidden))
    dec_b2 = take((window,))
    config_hash = blob[off : off + 16]
    if len(config_hash) != 16:
        raise ValueError("truncated parameter checkpoint")
    params = ToyCodecParams(cfg, enc_w1, enc_b1, enc_w2, enc_b2, imp_w, imp_b, dec_w1, dec_b1, dec_w2, dec_b2)
    return params, config_hash
