"""Variable-bitrate residual vector quantization codec.

Importance-map-driven per-frame codebook allocation, straight-through mask
gradients with a log-cosh relaxation, a bit-exact variable-length stream
format, and a desk-scale joint rate-distortion training loop.
"""

from .importance import (
    CodeMask,
    ImportanceMap,
    ScalingSpec,
    SurrogateSpec,
    apply_scaling,
    heaviside_mask,
    importance_to_mask,
    importance_to_mask_ste,
    importance_to_soft_mask,
    rate_loss,
    sample_scale,
    saturated_identity,
    smooth_step,
)
from .quantizer import (
    CodebookStack,
    FrameCodes,
    LatentSequence,
    fit_codebooks,
    masked_rvq,
    rvq_encode,
    vq_lookup,
)

__all__ = [
    "CodeMask",
    "CodebookStack",
    "FrameCodes",
    "ImportanceMap",
    "LatentSequence",
    "ScalingSpec",
    "SurrogateSpec",
    "apply_scaling",
    "fit_codebooks",
    "heaviside_mask",
    "importance_to_mask",
    "importance_to_mask_ste",
    "importance_to_soft_mask",
    "masked_rvq",
    "rate_loss",
    "rvq_encode",
    "sample_scale",
    "saturated_identity",
    "smooth_step",
    "vq_lookup",
]

__version__ = "0.1.0"
