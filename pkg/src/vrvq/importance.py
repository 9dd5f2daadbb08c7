"""Importance-map machinery: scaling operators, stagewise step masks, and the
smooth surrogates that let gradients cross the binarization.

An importance value p in (0, 1) is scaled to a stage score s, and stage k of
the mask activates when k <= s.  The saturated-identity surrogate passes
gradient only inside one unit cell of s; the log-cosh surrogate spreads a
strictly positive gradient over every stage, which is the property the
straight-through estimator here relies on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_LOG2 = float(np.log(2.0))

GAMMA_RANGE = (0.1, 6.0)  # log-uniform sampling range for gamma operators


@dataclass(frozen=True)
class ImportanceMap:
    """Per-frame importance values, strictly inside (0, 1)."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.shape[0] < 1:
            raise ValueError("importance map must be a non-empty 1-D sequence")
        if np.min(v) <= 0.0 or np.max(v) >= 1.0:
            raise ValueError("importance values must lie strictly in (0, 1)")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class CodeMask:
    """Binary stage-usage mask, shape (n_q_max, T).

    Columns are monotone non-increasing top to bottom and every frame keeps
    at least its first stage active.
    """

    bits: np.ndarray

    def __post_init__(self) -> None:
        b = np.asarray(self.bits)
        if b.ndim != 2:
            raise ValueError("mask must be 2-D (stages x frames)")
        if not np.isin(b, (0, 1)).all():
            raise ValueError("mask entries must be 0 or 1")
        b = b.astype(np.uint8)
        if np.any(np.diff(b.astype(np.int8), axis=0) > 0):
            raise ValueError("mask columns must be monotone non-increasing")
        if not np.all(b[0] == 1):
            raise ValueError("every frame must keep stage 1 active")
        object.__setattr__(self, "bits", b)

    @property
    def counts(self) -> np.ndarray:
        """Active stages per frame."""
        return self.bits.sum(axis=0).astype(np.int64)


@dataclass(frozen=True)
class SurrogateSpec:
    """Backward relaxation used for the stage step functions."""

    variant: str = "smooth"  # "identity" | "smooth"
    alpha: float = 2.0  # sharpness, smooth variant only

    def __post_init__(self) -> None:
        if self.variant not in ("identity", "smooth"):
            raise ValueError(f"unknown surrogate variant {self.variant!r}")
        if self.variant == "smooth" and not self.alpha > 0:
            raise ValueError("alpha must be > 0")


@dataclass(frozen=True)
class ScalingSpec:
    """Operator mapping an importance value to a stage score.

    linear        s = parameter * p
    exponential   s = n_q_max * p ** parameter
    transformed   piecewise-linear with knee at 1/(parameter+1); continuous,
                  strictly increasing, spans (0, n_q_max)
    """

    variant: str = "linear"
    parameter: float = 8.0

    def __post_init__(self) -> None:
        if self.variant not in ("linear", "exponential", "transformed"):
            raise ValueError(f"unknown scaling variant {self.variant!r}")
        if not self.parameter > 0:
            raise ValueError("scaling parameter must be > 0")


def _log_cosh(x: np.ndarray) -> np.ndarray:
    # |x| + log1p(e^{-2|x|}) - log 2; never overflows
    ax = np.abs(x)
    return ax + np.log1p(np.exp(-2.0 * ax)) - _LOG2


def _log_sinh(x: float) -> float:
    # x > 0 only
    if x < 20.0:
        return float(np.log(np.sinh(x)))
    return x + float(np.log1p(-np.exp(-2.0 * x))) - _LOG2


def heaviside_mask(s, n_q_max: int) -> np.ndarray:
    """Binary stage vector(s) for score(s) ``s``: entry k is 1 iff k <= s.

    Scalar input gives shape (n_q_max,), a length-T vector gives
    (n_q_max, T).  Total function: any finite s is accepted.
    """
    s = np.asarray(s, dtype=np.float64)
    ks = np.arange(n_q_max, dtype=np.float64)
    if s.ndim == 0:
        return (ks <= s).astype(np.uint8)
    if s.ndim != 1:
        raise ValueError("score must be scalar or 1-D")
    return (ks[:, None] <= s[None, :]).astype(np.uint8)


def saturated_identity(s, stage: int):
    """Saturating-ramp surrogate for the stage-`stage` step.

    Returns (value, derivative).  value = clip(s - stage, 0, 1); the
    derivative is 1 strictly inside the ramp and 0 elsewhere, including at
    the two kinks.
    """
    s = np.asarray(s, dtype=np.float64)
    u = s - float(stage)
    value = np.clip(u, 0.0, 1.0)
    deriv = ((u > 0.0) & (u < 1.0)).astype(np.float64)
    if s.ndim == 0:
        return float(value), float(deriv)
    return value, deriv


def smooth_step(s, stage: int, alpha: float):
    """Log-cosh surrogate for the stage-`stage` step, with derivative.

    value = (log cosh(a(s-k)) - log cosh(a(s-k-1))) / (2a) + 1/2, which is
    0.5 at the cell midpoint and approaches the saturating ramp as alpha
    grows.  The derivative is evaluated in log space as
    sinh(a) / (2 cosh(a(s-k)) cosh(a(k+1-s))): algebraically identical to
    (tanh(a(s-k)) + tanh(a(k+1-s))) / 2 but it stays strictly positive where
    the tanh sum would cancel to zero in floating point.
    """
    if not alpha > 0:
        raise ValueError("alpha must be > 0")
    s = np.asarray(s, dtype=np.float64)
    a = alpha * (s - float(stage))
    b = alpha * (float(stage) + 1.0 - s)
    value = (_log_cosh(a) - _log_cosh(b)) / (2.0 * alpha) + 0.5
    log_deriv = _log_sinh(alpha) - _log_cosh(a) - _log_cosh(b) - _LOG2
    deriv = np.exp(log_deriv)
    if s.ndim == 0:
        return float(value), float(deriv)
    return value, deriv


def _check_unit_open(p: np.ndarray) -> None:
    if p.size and (np.min(p) <= 0.0 or np.max(p) >= 1.0):
        raise ValueError("importance values must lie strictly in (0, 1)")


def apply_scaling(p, spec: ScalingSpec, n_q_max: int):
    """Map importance value(s) in (0,1) to stage scores."""
    p = np.asarray(p, dtype=np.float64)
    _check_unit_open(p)
    g = spec.parameter
    if spec.variant == "linear":
        out = g * p
    elif spec.variant == "exponential":
        out = n_q_max * np.power(p, g)
    else:
        knee = 1.0 / (g + 1.0)
        out = np.where(p <= knee, n_q_max * g * p, (n_q_max / g) * (p + g - 1.0))
    return float(out) if out.ndim == 0 else out


def scaling_derivative(p, spec: ScalingSpec, n_q_max: int):
    """d(score)/d(p) for the chosen operator (knee resolved to the low branch)."""
    p = np.asarray(p, dtype=np.float64)
    _check_unit_open(p)
    g = spec.parameter
    if spec.variant == "linear":
        out = np.full_like(p, g)
    elif spec.variant == "exponential":
        out = n_q_max * g * np.power(p, g - 1.0)
    else:
        knee = 1.0 / (g + 1.0)
        out = np.where(p <= knee, n_q_max * g, n_q_max / g)
    return float(out) if out.ndim == 0 else out


def importance_to_mask(p, spec: ScalingSpec, n_q_max: int) -> np.ndarray:
    """Binary stage mask, shape (n_q_max, T).  Columns are monotone
    non-increasing with the first row all ones (scores are positive)."""
    p = np.atleast_1d(np.asarray(p, dtype=np.float64))
    return heaviside_mask(apply_scaling(p, spec, n_q_max), n_q_max)


def importance_to_soft_mask(p, spec: ScalingSpec, surrogate: SurrogateSpec, n_q_max: int):
    """Relaxed mask and its elementwise derivative w.r.t. p.

    Returns (soft, d_soft_dp), both (n_q_max, T).  Row k holds the stage-k
    surrogate of the scaled score; the derivative chains the surrogate slope
    with the scaling slope.
    """
    p = np.atleast_1d(np.asarray(p, dtype=np.float64))
    s = apply_scaling(p, spec, n_q_max)
    ds_dp = scaling_derivative(p, spec, n_q_max)
    soft = np.empty((n_q_max, p.shape[0]), dtype=np.float64)
    dsoft = np.empty_like(soft)
    for k in range(n_q_max):
        if surrogate.variant == "identity":
            v, d = saturated_identity(s, k)
        else:
            v, d = smooth_step(s, k, surrogate.alpha)
        soft[k] = v
        dsoft[k] = d * ds_dp
    return soft, dsoft


def importance_to_mask_ste(p, spec: ScalingSpec, surrogate: SurrogateSpec, n_q_max: int):
    """Straight-through mask: binary forward value, relaxed backward.

    Returns (mask, d_soft_dp).  The forward mask is exactly
    importance_to_mask; the reported Jacobian is exactly the soft-mask
    derivative, i.e. the value term soft + stopgrad(hard - soft).
    """
    mask = importance_to_mask(p, spec, n_q_max)
    _, dsoft = importance_to_soft_mask(p, spec, surrogate, n_q_max)
    return mask, dsoft


def rate_loss(p):
    """Mean importance over frames and its gradient (1/T per frame)."""
    p = np.atleast_1d(np.asarray(p, dtype=np.float64))
    if p.shape[0] == 0:
        raise ValueError("rate loss undefined for an empty map")
    t = p.shape[0]
    return float(np.mean(p)), np.full(t, 1.0 / t)


def sample_scale(rng: np.random.Generator, l_min: float, l_max: float) -> ScalingSpec:
    """Draw a linear scaling factor uniformly from [l_min, l_max]."""
    if not (0.0 < l_min < l_max):
        raise ValueError("need 0 < l_min < l_max")
    return ScalingSpec("linear", float(rng.uniform(l_min, l_max)))


def sample_gamma(rng: np.random.Generator, lo: float = GAMMA_RANGE[0], hi: float = GAMMA_RANGE[1]) -> float:
    """Draw gamma log-uniformly from [lo, hi] for the alternative operators."""
    if not (0.0 < lo < hi):
        raise ValueError("need 0 < lo < hi")
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
