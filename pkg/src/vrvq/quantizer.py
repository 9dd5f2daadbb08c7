"""Residual vector quantization: stagewise nearest-neighbor coding of latent
frames, masked reconstruction, and stage-wise k-means codebook fitting.

Each stage quantizes the residual left by the previous stages; the
reconstruction is the (optionally masked) sum of the per-stage code vectors.
Lookup happens in a projected code space so the latent dimension and the
code dimension can differ; projections default to identity at toy scale.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .importance import CodeMask

CODEBOOK_MAGIC = b"VRVQCBK1"

_NORM_EPS = 1e-12


@dataclass
class CodebookStack:
    """Per-stage codebooks plus the shared lookup projections.

    codes: (n_q_max, codebook_size, code_dim)
    in_proj: (n_q_max, code_dim, latent_dim)   latent -> code space
    out_proj: (n_q_max, latent_dim, code_dim)  code space -> latent
    """

    n_q_max: int
    codebook_size: int
    code_dim: int
    latent_dim: int
    codes: np.ndarray
    in_proj: np.ndarray
    out_proj: np.ndarray
    l2_normalized: bool = False

    def __post_init__(self) -> None:
        if self.n_q_max < 1:
            raise ValueError("n_q_max must be >= 1")
        k = self.codebook_size
        if k < 1 or (k & (k - 1)) != 0:
            raise ValueError("codebook_size must be a positive power of two")
        self.codes = np.asarray(self.codes, dtype=np.float64)
        self.in_proj = np.asarray(self.in_proj, dtype=np.float64)
        self.out_proj = np.asarray(self.out_proj, dtype=np.float64)
        if self.codes.shape != (self.n_q_max, k, self.code_dim):
            raise ValueError("codes shape mismatch")
        if self.in_proj.shape != (self.n_q_max, self.code_dim, self.latent_dim):
            raise ValueError("in_proj shape mismatch")
        if self.out_proj.shape != (self.n_q_max, self.latent_dim, self.code_dim):
            raise ValueError("out_proj shape mismatch")
        for arr in (self.codes, self.in_proj, self.out_proj):
            if not np.isfinite(arr).all():
                raise ValueError("codebook stack contains non-finite values")

    @property
    def index_bits(self) -> int:
        return int(self.codebook_size).bit_length() - 1

    @classmethod
    def with_identity_projections(
        cls,
        n_q_max: int,
        codebook_size: int,
        dim: int,
        codes: np.ndarray | None = None,
        l2_normalized: bool = False,
    ) -> "CodebookStack":
        """Toy-scale stack: latent_dim == code_dim, identity projections."""
        eye = np.broadcast_to(np.eye(dim), (n_q_max, dim, dim)).copy()
        if codes is None:
            codes = np.zeros((n_q_max, codebook_size, dim))
        return cls(n_q_max, codebook_size, dim, dim, np.asarray(codes, dtype=np.float64), eye, eye.copy(), l2_normalized)

    def copy(self) -> "CodebookStack":
        return CodebookStack(
            self.n_q_max,
            self.codebook_size,
            self.code_dim,
            self.latent_dim,
            self.codes.copy(),
            self.in_proj.copy(),
            self.out_proj.copy(),
            self.l2_normalized,
        )


@dataclass(frozen=True)
class LatentSequence:
    """latent_dim x T matrix of encoder frames plus the frame rate in Hz."""

    data: np.ndarray
    frame_rate: float

    def __post_init__(self) -> None:
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 2 or d.shape[1] < 1:
            raise ValueError("latent sequence must be latent_dim x T with T >= 1")
        if not np.isfinite(d).all():
            raise ValueError("latent sequence contains non-finite values")
        object.__setattr__(self, "data", d)


class FrameCodes:
    """Per-frame variable-length codebook indices.

    indices[t] is an int64 array holding the active stages' indices for frame
    t, in stage order; its length is that frame's stage count.
    """

    def __init__(self, n_q_max: int, indices: list[np.ndarray]):
        self.n_q_max = int(n_q_max)
        self.indices = [np.asarray(ix, dtype=np.int64) for ix in indices]
        for ix in self.indices:
            if ix.ndim != 1 or not (1 <= ix.shape[0] <= self.n_q_max):
                raise ValueError("each frame must use between 1 and n_q_max stages")

    @property
    def n_q(self) -> np.ndarray:
        return np.array([len(ix) for ix in self.indices], dtype=np.int64)

    @property
    def frame_count(self) -> int:
        return len(self.indices)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FrameCodes):
            return NotImplemented
        return (
            self.n_q_max == other.n_q_max
            and len(self.indices) == len(other.indices)
            and all(np.array_equal(a, b) for a, b in zip(self.indices, other.indices))
        )

    def __repr__(self) -> str:
        return f"FrameCodes(n_q_max={self.n_q_max}, frames={self.frame_count})"


@dataclass
class StageData:
    """Cached per-stage quantities from running the residual recurrence.

    Shapes: indices (S, T); proj_residual and code_vec (S, T, code_dim);
    q_latent and residual_in (S, T, latent_dim); residual_out (T, latent_dim)
    is what remains after the last computed stage.
    """

    indices: np.ndarray
    proj_residual: np.ndarray
    code_vec: np.ndarray
    q_latent: np.ndarray
    residual_in: np.ndarray
    residual_out: np.ndarray


def _unit_rows(x: np.ndarray) -> np.ndarray:
    n = np.sqrt(np.sum(x * x, axis=-1, keepdims=True))
    return x / np.maximum(n, _NORM_EPS)


def _nearest(queries: np.ndarray, codes: np.ndarray, l2_normalized: bool) -> np.ndarray:
    """Index of the closest code per query row; ties go to the lowest index."""
    q = _unit_rows(queries) if l2_normalized else queries
    c = _unit_rows(codes) if l2_normalized else codes
    # expanded squared distance; argmin returns the first (lowest) minimizer
    d2 = np.sum(q * q, axis=1)[:, None] - 2.0 * (q @ c.T) + np.sum(c * c, axis=1)[None, :]
    return np.argmin(d2, axis=1)


def vq_lookup(query: np.ndarray, stage: int, stack: CodebookStack):
    """Single-vector lookup at one stage.

    Returns (index, quantized latent vector): the query is projected into
    code space, matched against the stage codebook (normalized first when the
    stack says so), and the winning code is projected back out.
    """
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (stack.latent_dim,):
        raise ValueError("query must have latent_dim entries")
    if not np.isfinite(query).all():
        raise ValueError("query contains non-finite values")
    if not (0 <= stage < stack.n_q_max):
        raise ValueError(f"stage {stage} out of range [0, {stack.n_q_max})")
    e = stack.in_proj[stage] @ query
    idx = int(_nearest(e[None, :], stack.codes[stage], stack.l2_normalized)[0])
    return idx, stack.out_proj[stage] @ stack.codes[stage, idx]


def quantize_stages(z: np.ndarray, n_stages: int, stack: CodebookStack) -> StageData:
    """Run the residual recurrence for the first n_stages stages.

    z is (T, latent_dim).  Stage i quantizes the residual left after stages
    < i; the recurrence is independent per frame.
    """
    if not (1 <= n_stages <= stack.n_q_max):
        raise ValueError("n_stages out of range")
    t = z.shape[0]
    indices = np.empty((n_stages, t), dtype=np.int64)
    proj_res = np.empty((n_stages, t, stack.code_dim))
    code_vec = np.empty((n_stages, t, stack.code_dim))
    q_latent = np.empty((n_stages, t, stack.latent_dim))
    res_in = np.empty((n_stages, t, stack.latent_dim))
    r = z.astype(np.float64, copy=True)
    for i in range(n_stages):
        res_in[i] = r
        e = r @ stack.in_proj[i].T
        idx = _nearest(e, stack.codes[i], stack.l2_normalized)
        sel = stack.codes[i][idx]
        q = sel @ stack.out_proj[i].T
        indices[i] = idx
        proj_res[i] = e
        code_vec[i] = sel
        q_latent[i] = q
        r = r - q
    return StageData(indices, proj_res, code_vec, q_latent, res_in, r)


def rvq_encode(z_e: LatentSequence, n_active: int, stack: CodebookStack):
    """Constant-depth encode: every frame uses the first n_active stages.

    Returns (FrameCodes, LatentSequence reconstruction).
    """
    if not (1 <= n_active <= stack.n_q_max):
        raise ValueError("n_active out of range")
    z = z_e.data.T  # (T, D)
    st = quantize_stages(z, n_active, stack)
    z_q = st.q_latent.sum(axis=0)
    codes = FrameCodes(stack.n_q_max, [st.indices[:, t] for t in range(z.shape[0])])
    return codes, LatentSequence(z_q.T, z_e.frame_rate)


def masked_rvq(z_e: LatentSequence, mask: CodeMask, stack: CodebookStack):
    """Masked encode: frame t keeps its first counts[t] stages.

    The recurrence per frame is identical to rvq_encode with that frame's
    count; stages past a frame's count contribute nothing to it.  Returns
    (FrameCodes, LatentSequence reconstruction).
    """
    z = z_e.data.T
    bits = mask.bits
    if bits.shape != (stack.n_q_max, z.shape[0]):
        raise ValueError("mask shape must be (n_q_max, T)")
    counts = mask.counts
    depth = int(counts.max())
    st = quantize_stages(z, depth, stack)
    m = bits[:depth].astype(np.float64)
    z_q = np.einsum("st,std->td", m, st.q_latent)
    codes = FrameCodes(stack.n_q_max, [st.indices[: counts[t], t] for t in range(z.shape[0])])
    return codes, LatentSequence(z_q.T, z_e.frame_rate)


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    first = int(rng.integers(n))
    centroids[0] = points[first]
    d2 = np.sum((points - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centroids[j] = points[int(rng.integers(n))]
            continue
        probs = d2 / total
        choice = int(rng.choice(n, p=probs))
        centroids[j] = points[choice]
        d2 = np.minimum(d2, np.sum((points - centroids[j]) ** 2, axis=1))
    return centroids


def kmeans(points: np.ndarray, k: int, iters: int, rng: np.random.Generator) -> np.ndarray:
    """Lloyd's algorithm with k-means++ seeding.

    Deterministic given the generator state.  Fewer distinct points than
    clusters leaves duplicate centroids (warned); empty clusters keep their
    previous centroid.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] == 0:
        raise ValueError("points must be a non-empty 2-D array")
    n = points.shape[0]
    distinct = np.unique(points, axis=0).shape[0]
    if distinct < k:
        warnings.warn(
            f"only {distinct} distinct points for {k} centroids; duplicates kept",
            RuntimeWarning,
            stacklevel=2,
        )
    centroids = _kmeans_pp_init(points, k, rng)
    for _ in range(max(1, iters)):
        d2 = (
            np.sum(points * points, axis=1)[:, None]
            - 2.0 * (points @ centroids.T)
            + np.sum(centroids * centroids, axis=1)[None, :]
        )
        assign = np.argmin(d2, axis=1)
        new = centroids.copy()
        for j in range(k):
            sel = assign == j
            if np.any(sel):
                new[j] = points[sel].mean(axis=0)
        if np.array_equal(new, centroids):
            break
        centroids = new
    return centroids


def fit_codebooks(corpus, stack: CodebookStack, iters: int, seed: int = 0) -> CodebookStack:
    """Stage-wise k-means over a corpus of latent sequences.

    Stage 1 is fit on the raw frames, later stages on what the previous
    stages leave behind.  The input stack is not mutated; a fitted copy is
    returned.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    frames = [np.asarray(seq.data if isinstance(seq, LatentSequence) else seq, dtype=np.float64).T for seq in corpus]
    if not frames:
        raise ValueError("corpus is empty")
    r = np.vstack(frames)
    fitted = stack.copy()
    rng = np.random.default_rng(seed)
    for i in range(stack.n_q_max):
        e = r @ fitted.in_proj[i].T
        pts = _unit_rows(e) if fitted.l2_normalized else e
        cents = kmeans(pts, stack.codebook_size, iters, rng)
        if fitted.l2_normalized:
            cents = _unit_rows(cents)
        fitted.codes[i] = cents
        idx = _nearest(e, cents, fitted.l2_normalized)
        r = r - cents[idx] @ fitted.out_proj[i].T
    return fitted


def save_stack(stack: CodebookStack, path: str, config_hash: bytes = b"\x00" * 16) -> None:
    """Write the documented binary layout (see docs/format.md)."""
    if len(config_hash) != 16:
        raise ValueError("config hash must be 16 bytes")
    with open(path, "wb") as f:
        f.write(CODEBOOK_MAGIC)
        f.write(struct.pack("<4I", stack.n_q_max, stack.codebook_size, stack.code_dim, stack.latent_dim))
        f.write(stack.in_proj.astype("<f4").tobytes())
        f.write(stack.out_proj.astype("<f4").tobytes())
        f.write(stack.codes.astype("<f4").tobytes())
        f.write(struct.pack("<I", 1 if stack.l2_normalized else 0))
        f.write(config_hash)


def load_stack(path: str):
    """Read a codebook checkpoint; returns (stack, config_hash)."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] != CODEBOOK_MAGIC:
        raise ValueError("bad codebook magic")
    nq, k, dc, dl = struct.unpack_from("<4I", blob, 8)
    off = 8 + 16
    def take(shape):
        nonlocal off
        n = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=off).astype(np.float64).reshape(shape)
        off += 4 * n
        return arr
    in_proj = take((nq, dc, dl))
    out_proj = take((nq, dl, dc))
    codes = take((nq, k, dc))
    (flags,) = struct.unpack_from("<I", blob, off)
    off += 4
    config_hash = blob[off : off + 16]
    if len(config_hash) != 16:
        raise ValueError("truncated codebook checkpoint")
    return CodebookStack(nq, k, dc, dl, codes, in_proj, out_proj, bool(flags & 1)), config_hash
