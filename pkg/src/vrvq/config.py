"""Declarative run configuration: a flat key=value text file plus CLI
overrides.  Unknown keys are rejected and every run echoes the fully
resolved configuration, whose hash is embedded in output files."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace

from .importance import SurrogateSpec
from .model import ModelConfig
from .train import TrainConfig


@dataclass(frozen=True)
class RunConfig:
    # model
    sample_rate: int = 8000
    window: int = 64
    hidden: int = 32
    latent_dim: int = 8
    n_q_max: int = 8
    codebook_size: int = 32
    code_dim: int = 8
    l2_normalized: bool = False
    # surrogate / scaling
    surrogate: str = "smooth"
    alpha: float = 2.0
    scale_variant: str = "linear"
    l_min: float = 1.0
    l_max: float = 48.0
    # optimization
    beta: float = 2.0
    steps: int = 2000
    batch: int = 8
    learn_rate: float = 0.0015
    momentum: float = 0.9
    seed: int = 0
    w_wav: float = 120.0
    w_spec: float = 30.0
    w_commit: float = 0.25
    w_codebook: float = 1.0
    spectral_windows: tuple = (64, 256)
    freeze_importance_frac: float = 0.3
    refit_every: int = 250
    imp_momentum: float = 0.0
    imp_lr_mult: float = 2.0
    full_depth_frac: float = 0.25
    codebook_fit_iters: int = 25
    warmup_segments: int = 32
    # synthetic corpus
    segment_len: int = 1536
    silence_fraction: float = 0.4
    noise_weight: float = 0.25

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            sample_rate=self.sample_rate,
            window=self.window,
            hidden=self.hidden,
            latent_dim=self.latent_dim,
            n_q_max=self.n_q_max,
            codebook_size=self.codebook_size,
            code_dim=self.code_dim,
            l2_normalized_lookup=self.l2_normalized,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            beta=self.beta,
            l_min=self.l_min,
            l_max=self.l_max,
            steps=self.steps,
            batch=self.batch,
            learn_rate=self.learn_rate,
            momentum=self.momentum,
            seed=self.seed,
            surrogate=SurrogateSpec(self.surrogate, self.alpha),
            scale_variant=self.scale_variant,
            w_wav=self.w_wav,
            w_spec=self.w_spec,
            w_commit=self.w_commit,
            w_codebook=self.w_codebook,
            spectral_windows=self.spectral_windows,
            codebook_fit_iters=self.codebook_fit_iters,
            warmup_segments=self.warmup_segments,
            freeze_importance_frac=self.freeze_importance_frac,
            refit_every=self.refit_every,
            imp_momentum=self.imp_momentum,
            imp_lr_mult=self.imp_lr_mult,
            full_depth_frac=self.full_depth_frac,
        )

    def canonical_text(self) -> str:
        lines = []
        for f in sorted(fields(self), key=lambda f: f.name):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def digest(self) -> bytes:
        """16-byte hash of the resolved configuration."""
        return hashlib.sha256(self.canonical_text().encode()).digest()[:16]


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(key: str, raw: str):
    ftype = _FIELD_TYPES[key]
    raw = raw.strip()
    if ftype == "bool":
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    if ftype == "int":
        return int(raw)
    if ftype == "float":
        return float(raw)
    if ftype == "tuple":
        return tuple(int(x) for x in raw.split(",") if x.strip())
    return raw


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse `key = value` lines; '#' starts a comment; unknown keys fail."""
    cfg = base or RunConfig()
    updates = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        updates[key] = _parse_value(key, raw)
    return replace(cfg, **updates)


def load_config(path: str, base: RunConfig | None = None) -> RunConfig:
    with open(path) as f:
        return parse_config_text(f.read(), base)
