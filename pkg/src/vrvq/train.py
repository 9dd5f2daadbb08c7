"""Joint rate-distortion training on synthetic audio.

Each step samples a batch of segments and a fresh scaling factor per item,
runs the straight-through forward pass, and descends the weighted sum of
waveform L2, multiscale spectral L1, commitment/codebook terms, and the
rate term (mean importance) scaled by beta.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import model as model_mod
from .importance import ScalingSpec, SurrogateSpec, rate_loss, sample_gamma, sample_scale
from .metrics import spectral_l1_grad
from .model import ForwardTrace, ModelConfig, ToyCodecParams, backward, forward, init_params
from .quantizer import CodebookStack, LatentSequence, fit_codebooks

LOG_COLUMNS = ("step", "loss", "distortion", "rate_loss", "mean_nq", "l_mean")


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class TrainConfig:
    beta: float = 2.0
    l_min: float = 1.0
    l_max: float = 48.0
    steps: int = 2000
    batch: int = 8
    learn_rate: float = 0.0015
    momentum: float = 0.9
    seed: int = 0
    surrogate: SurrogateSpec = field(default_factory=SurrogateSpec)
    scale_variant: str = "linear"  # sampled l; "exponential"/"transformed" sample gamma
    w_wav: float = 120.0
    w_spec: float = 30.0
    w_commit: float = 0.25
    w_codebook: float = 1.0
    spectral_windows: tuple = (64, 256)
    codebook_fit_iters: int = 25
    warmup_segments: int = 32
    # backbone-first schedule: while frozen, depth diversity comes purely
    # from the sampled scale factor; a random decoder otherwise pushes the
    # importance map to the floor before reconstruction is meaningful
    freeze_importance_frac: float = 0.3
    # periodic k-means refit keeps codebooks tracking the moving latent
    # distribution; gradient fine-tuning alone is too slow at this scale
    refit_every: int = 250
    # the importance subnet balances two opposing pressures whose crossing
    # is narrow in logit space; momentum overshoots it into sigmoid
    # saturation, so that group descends without inertia
    imp_momentum: float = 0.0
    imp_lr_mult: float = 2.0
    # fraction of batch items coded at full depth regardless of the map;
    # keeps the decoder competent on deep stacks so the distortion pushback
    # on the map cannot evaporate once shallow masks dominate
    full_depth_frac: float = 0.25

    def __post_init__(self) -> None:
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if not (0 < self.l_min < self.l_max):
            raise ValueError("need 0 < l_min < l_max")
        if self.steps < 1 or self.batch < 1:
            raise ValueError("steps and batch must be >= 1")
        if self.scale_variant not in ("linear", "exponential", "transformed"):
            raise ValueError(f"unknown scale variant {self.scale_variant!r}")
        if not (0.0 <= self.freeze_importance_frac < 1.0):
            raise ValueError("freeze_importance_frac must be in [0, 1)")
        if not (0.0 <= self.full_depth_frac < 1.0):
            raise ValueError("full_depth_frac must be in [0, 1)")


@dataclass
class LossParts:
    total: float
    distortion: float
    wav: float
    spec: float
    commit: float
    codebook: float
    rate: float


@dataclass
class LossSeeds:
    d_xhat: np.ndarray
    d_p: np.ndarray
    d_ze: np.ndarray
    d_codes: np.ndarray  # (n_q, K, code_dim)


def total_loss(trace: ForwardTrace, cfg: TrainConfig):
    """Scalar objective over one trace plus the gradient seeds feeding
    model.backward (at xhat, p, z_e) and the direct codebook gradient."""
    x = trace.x_padded
    xhat = trace.xhat
    n = x.shape[0]
    t = trace.n_frames

    diff = xhat - x
    wav = float(np.mean(diff * diff))
    d_xhat = (2.0 * cfg.w_wav / n) * diff

    if cfg.w_spec > 0.0:
        spec, d_spec = spectral_l1_grad(x, xhat, cfg.spectral_windows)
        d_xhat = d_xhat + cfg.w_spec * d_spec
    else:
        spec, d_spec = 0.0, None

    ce = trace.commit_in - trace.commit_tgt
    commit = float(np.mean(ce * ce))
    d_ze = (2.0 * cfg.w_commit / ce.size) * (ce[0] @ trace.stack.in_proj[0])

    cbe = trace.cb_out - trace.cb_tgt
    codebook = float(np.mean(cbe * cbe))
    d_codes = np.zeros_like(trace.stack.codes)
    if cfg.w_codebook > 0.0:
        scale = 2.0 * cfg.w_codebook / cbe.size
        for i in range(trace.stack.n_q_max):
            np.add.at(d_codes[i], trace.stage_indices[i], scale * cbe[i])

    rate, d_rate = rate_loss(trace.p)
    d_p = cfg.beta * d_rate

    distortion = cfg.w_wav * wav + cfg.w_spec * spec + cfg.w_commit * commit + cfg.w_codebook * codebook
    total = distortion + cfg.beta * rate
    parts = LossParts(total, distortion, wav, spec, commit, codebook, rate)
    seeds = LossSeeds(d_xhat=d_xhat, d_p=d_p, d_ze=d_ze, d_codes=d_codes)
    return parts, seeds


def synth_corpus(
    seed: int,
    sample_rate: int = 8000,
    segment_len: int = 1536,
    silence_fraction: float = 0.4,
    noise_weight: float = 0.25,
    span_frames: tuple = (2, 6),
    window: int = 64,
    n_phases: int = 4,
):
    """Endless generator of synthetic segments in [-1, 1].

    Each segment is a run of frame-aligned spans drawn as silence (exact
    zeros, probability silence_fraction), filtered noise, or a stack of
    sinusoids.  Tonal partials come from the frame-periodic harmonic palette
    (multiples of sample_rate / window) with quantized phases, so a steady
    tone repeats exactly frame to frame; reconstruction quality then hinges
    on quantization depth rather than on an unlearnable continuum of frame
    shapes.  Frame alignment keeps span type readable off the waveform.
    """
    if not (0.0 <= silence_fraction < 1.0):
        raise ValueError("silence_fraction must be in [0, 1)")
    rng = np.random.default_rng(seed)
    lo, hi = span_frames
    base_hz = sample_rate / window
    harmonics = np.arange(1, window // 4)  # up to fs/4, clear of Nyquist

    def gen():
        while True:
            x = np.zeros(segment_len)
            pos = 0
            while pos < segment_len:
                frames = int(rng.integers(lo, hi + 1))
                length = min(frames * window, segment_len - pos)
                u = rng.uniform()
                if u < silence_fraction:
                    pass  # exact zeros
                elif u < silence_fraction + (1.0 - silence_fraction) * noise_weight:
                    noise = rng.standard_normal(length)
                    # one-pole lowpass, then rescale
                    for i in range(1, length):
                        noise[i] = 0.7 * noise[i - 1] + 0.3 * noise[i]
                    peak = np.max(np.abs(noise))
                    if peak > 0:
                        x[pos : pos + length] = 0.3 * noise / peak
                else:
                    tone = np.zeros(length)
                    n_partials = int(rng.integers(1, 4))
                    ts = np.arange(length)
                    ks = rng.choice(harmonics, size=n_partials, replace=False)
                    for k in ks:
                        phase = (2.0 * np.pi / n_phases) * rng.integers(n_phases)
                        amp = rng.uniform(0.25, 1.0)
                        tone += amp * np.sin(2.0 * np.pi * base_hz * k * ts / sample_rate + phase)
                    peak = np.max(np.abs(tone))
                    x[pos : pos + length] = rng.uniform(0.3, 0.9) * tone / peak
                pos += length
            yield x

    return gen()


@dataclass
class _Momentum:
    buffers: dict = field(default_factory=dict)

    def update(self, key: str, grad: np.ndarray, lr: float, mu: float) -> np.ndarray:
        buf = self.buffers.get(key)
        if buf is None:
            buf = np.zeros_like(grad)
        buf = mu * buf - lr * grad
        self.buffers[key] = buf
        return buf


def _sample_scaling(rng: np.random.Generator, cfg: TrainConfig) -> ScalingSpec:
    if cfg.scale_variant == "linear":
        return sample_scale(rng, cfg.l_min, cfg.l_max)
    return ScalingSpec(cfg.scale_variant, sample_gamma(rng))


def train_loop(corpus, model_cfg: ModelConfig, cfg: TrainConfig):
    """Run the optimization; returns (params, stack, log_rows).

    Deterministic under cfg.seed: parameter init, codebook fitting, scale
    sampling, and batch order all derive from it.  Aborts with
    DivergenceError on a non-finite loss.
    """
    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    rng_init = np.random.default_rng(seeds[0])
    rng_scale = np.random.default_rng(seeds[1])
    kmeans_seed = int(np.random.default_rng(seeds[2]).integers(2**31 - 1))

    params = init_params(model_cfg, rng_init)
    stack = CodebookStack.with_identity_projections(
        model_cfg.n_q_max,
        model_cfg.codebook_size,
        model_cfg.latent_dim,
        l2_normalized=model_cfg.l2_normalized_lookup,
    )

    def refit(current: CodebookStack) -> CodebookStack:
        probe = []
        for _ in range(cfg.warmup_segments):
            x = next(corpus)
            frames = model_mod.frame_signal(x, model_cfg.window)
            h = np.tanh(frames @ params.enc_w1.T + params.enc_b1)
            z_e = h @ params.enc_w2.T + params.enc_b2
            probe.append(LatentSequence(z_e.T, model_cfg.frame_rate))
        return fit_codebooks(probe, current, cfg.codebook_fit_iters, seed=kmeans_seed)

    stack = refit(stack)

    opt = _Momentum()
    rows = []
    names = list(params.arrays().keys())
    freeze_until = int(cfg.steps * cfg.freeze_importance_frac)
    for step in range(1, cfg.steps + 1):
        imp_frozen = step <= freeze_until
        if cfg.refit_every and step > 1 and (step - 1) % cfg.refit_every == 0:
            stack = refit(stack)
            opt.buffers.pop("codes", None)
        acc = {name: None for name in names}
        acc_codes = np.zeros_like(stack.codes)
        loss_sum = dist_sum = rate_sum = nq_sum = l_sum = 0.0
        for _ in range(cfg.batch):
            x = next(corpus)
            scaling = _sample_scaling(rng_scale, cfg)
            full_depth = rng_scale.uniform() < cfg.full_depth_frac
            if full_depth:
                t_frames = -(-x.shape[0] // model_cfg.window)
                override = np.ones((model_cfg.n_q_max, t_frames), dtype=np.uint8)
                trace = forward(x, params, stack, scaling, cfg.surrogate, mask_override=override)
            else:
                trace = forward(x, params, stack, scaling, cfg.surrogate)
            parts, loss_seeds = total_loss(trace, cfg)
            if not np.isfinite(parts.total):
                raise DivergenceError(f"non-finite loss at step {step}")
            grads = backward(
                trace,
                loss_seeds.d_xhat,
                loss_seeds.d_p,
                loss_seeds.d_ze,
                importance_grad=not (imp_frozen or full_depth),
            )
            for name in names:
                gval = grads[name]
                acc[name] = gval if acc[name] is None else acc[name] + gval
            acc_codes += loss_seeds.d_codes
            loss_sum += parts.total
            dist_sum += parts.distortion
            rate_sum += parts.rate
            nq_sum += float(np.mean(trace.mask.sum(axis=0)))
            l_sum += scaling.parameter
        inv = 1.0 / cfg.batch
        arrays = params.arrays()
        for name in names:
            if name.startswith("imp_"):
                if imp_frozen:
                    continue
                lr, mu = cfg.learn_rate * cfg.imp_lr_mult, cfg.imp_momentum
            else:
                lr, mu = cfg.learn_rate, cfg.momentum
            arrays[name] += opt.update(name, acc[name] * inv, lr, mu)
        if cfg.w_codebook > 0.0:
            stack.codes += opt.update("codes", acc_codes * inv, cfg.learn_rate, cfg.momentum)
        params.version += 1
        rows.append(
            {
                "step": step,
                "loss": loss_sum * inv,
                "distortion": dist_sum * inv,
                "rate_loss": rate_sum * inv,
                "mean_nq": nq_sum * inv,
                "l_mean": l_sum * inv,
            }
        )
    return params, stack, rows


def write_log_csv(rows, path: str, config_hash_hex: str = "") -> None:
    with open(path, "w") as f:
        if config_hash_hex:
            f.write(f"# config_hash: {config_hash_hex}\n")
        f.write(",".join(LOG_COLUMNS) + "\n")
        for row in rows:
            f.write(",".join(f"{row[c]:.8g}" if c != "step" else str(row[c]) for c in LOG_COLUMNS) + "\n")
