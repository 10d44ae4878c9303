"""Long-term / short-term residual vector quantization.

Latent frames are split into a long-term stream, one vector per block of
``n_step`` frames, and a per-frame short-term residual. Each stream is coded
by its own residual VQ stack; the decoder only sums codewords and merges the
two streams, so beam search at the encoder costs nothing at decode time.

Feature maps are ``(dim, frames)`` arrays; codebooks are ``(size, dim)``.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, FittingError
from .kernels import ConvSpec, as_feature_map, avg_pool, conv1d, repeat_frames

__all__ = [
    "AVGPOOL",
    "CONV",
    "CODEBOOK_WEIGHT",
    "COMMITMENT_WEIGHT",
    "RvqStack",
    "LsrvqConfig",
    "CodedStream",
    "FittedQuantizer",
    "vq_nearest",
    "rvq_encode",
    "rvq_decode",
    "rvq_encode_frames",
    "lt_extract",
    "st_extract",
    "synthesize",
    "lsrvq_encode",
    "lsrvq_decode",
    "bitrate",
    "kmeans",
    "fit_rvq",
    "fit_codebooks",
    "quantization_diagnostics",
    "averaging_extractor_weights",
    "extractor_tensor_shapes",
    "pad_frames",
]

AVGPOOL = "avgpool"
CONV = "conv"

CODEBOOK_WEIGHT = 1.0
COMMITMENT_WEIGHT = 0.25

# distance-matrix elements per chunk in exact nearest-neighbour search
_CHUNK_ELEMENTS = 1 << 22


@dataclass(frozen=True)
class RvqStack:
    """Ordered codebooks; layer ``k`` quantizes the residual of layers ``< k``."""

    codebooks: tuple = ()

    def __post_init__(self):
        books = tuple(np.array(cb, dtype=np.float32, ndmin=2) for cb in self.codebooks)
        dims = {cb.shape[1] for cb in books}
        if len(dims) > 1:
            raise ConfigurationError(f"codebooks disagree on dimension: {sorted(dims)}")
        for k, cb in enumerate(books):
            if cb.ndim != 2 or cb.shape[0] < 1:
                raise ConfigurationError(f"codebook {k} must be a non-empty (size, dim) matrix")
            if not np.all(np.isfinite(cb)):
                raise ConfigurationError(f"codebook {k} has non-finite entries")
            cb.setflags(write=False)
        object.__setattr__(self, "codebooks", books)

    @property
    def layers(self):
        return len(self.codebooks)

    @property
    def dim(self):
        return self.codebooks[0].shape[1] if self.codebooks else None

    @property
    def sizes(self):
        return tuple(cb.shape[0] for cb in self.codebooks)

    def __getitem__(self, k):
        return self.codebooks[k]

    def truncated(self, layers):
        return RvqStack(self.codebooks[:layers])


def _is_pow2(n):
    return n >= 1 and n & (n - 1) == 0


@dataclass(frozen=True)
class LsrvqConfig:
    """Quantizer geometry.

    Attributes:
        n_step: frames summarized by one long-term code block.
        frame_rate: latent frames per second.
        lt_layers, lt_size: long-term RVQ depth and codebook size.
        st_layers, st_size: short-term RVQ depth and codebook size.
        extractor: ``"avgpool"`` or ``"conv"``.
        beam_width: encoder beam; 1 is greedy.
    """

    n_step: int = 2
    frame_rate: float = 50.0
    lt_layers: int = 2
    lt_size: int = 1024
    st_layers: int = 11
    st_size: int = 1024
    extractor: str = AVGPOOL
    beam_width: int = 1

    def __post_init__(self):
        for name in ("n_step", "beam_width"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigurationError(f"{name} must be a positive integer, got {v!r}")
        for name in ("lt_layers", "st_layers"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise ConfigurationError(f"{name} must be a non-negative integer, got {v!r}")
        for name in ("lt_size", "st_size"):
            v = getattr(self, name)
            if int(v) != v or not _is_pow2(int(v)):
                raise ConfigurationError(f"{name} must be a power of two, got {v!r}")
        if not self.frame_rate > 0:
            raise ConfigurationError(f"frame_rate must be positive, got {self.frame_rate!r}")
        if self.extractor not in (AVGPOOL, CONV):
            raise ConfigurationError(f"extractor must be {AVGPOOL!r} or {CONV!r}, got {self.extractor!r}")

    @property
    def lt_bits(self):
        return int(math.log2(self.lt_size))

    @property
    def st_bits(self):
        return int(math.log2(self.st_size))


@dataclass(frozen=True)
class CodedStream:
    """Code indices for one utterance.

    ``lt_codes`` is ``(blocks, lt_layers)``; ``st_codes`` is
    ``(blocks * n_step, st_layers)`` and covers the edge-padded tail.
    ``frames`` is the true (unpadded) frame count.
    """

    lt_codes: np.ndarray
    st_codes: np.ndarray
    frames: int
    config: LsrvqConfig

    def __post_init__(self):
        cfg = self.config
        blocks = -(-self.frames // cfg.n_step)
        lt = np.asarray(self.lt_codes, dtype=np.int64).reshape(blocks, cfg.lt_layers)
        st = np.asarray(self.st_codes, dtype=np.int64).reshape(blocks * cfg.n_step, cfg.st_layers)
        if lt.size and (lt.min() < 0 or lt.max() >= cfg.lt_size):
            raise ConfigurationError(f"long-term code out of range [0, {cfg.lt_size})")
        if st.size and (st.min() < 0 or st.max() >= cfg.st_size):
            raise ConfigurationError(f"short-term code out of range [0, {cfg.st_size})")
        object.__setattr__(self, "lt_codes", lt)
        object.__setattr__(self, "st_codes", st)

    @property
    def blocks(self):
        return self.lt_codes.shape[0]

    def __eq__(self, other):
        if not isinstance(other, CodedStream):
            return NotImplemented
        return (
            self.frames == other.frames
            and self.config == other.config
            and np.array_equal(self.lt_codes, other.lt_codes)
            and np.array_equal(self.st_codes, other.st_codes)
        )


@dataclass
class FittedQuantizer:
    lt: RvqStack
    st: RvqStack
    weights: dict = field(default=None)

    @property
    def stacks(self):
        return self.lt, self.st


# -- single-vector VQ / RVQ -------------------------------------------------


def _check_dim(stack_dim, v):
    if stack_dim is not None and v.shape[-1] != stack_dim:
        raise ConfigurationError(f"vector dimension {v.shape[-1]} does not match codebook dimension {stack_dim}")


def _nearest_exact(residuals, codebook):
    """argmin ||r - c||^2 per row by direct differences; ties -> lowest index."""
    cb = np.asarray(codebook, dtype=np.float64)
    out = np.empty(residuals.shape[0], dtype=np.int64)
    step = max(1, _CHUNK_ELEMENTS // max(1, cb.size))
    for start in range(0, residuals.shape[0], step):
        diff = residuals[start : start + step, None, :] - cb[None, :, :]
        out[start : start + step] = np.argmin(np.einsum("fmd,fmd->fm", diff, diff), axis=1)
    return out


def vq_nearest(codebook, v):
    """Nearest codeword under squared Euclidean distance.

    Returns:
        ``(index, codeword, residual)`` with ``residual = v - codeword``.
    """
    cb = np.asarray(codebook)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    _check_dim(cb.shape[1], v)
    idx = int(_nearest_exact(v[None, :], cb)[0])
    codeword = cb[idx]
    return idx, codeword, v - codeword


def rvq_encode_frames(stack, vectors, beam_width=1):
    """RVQ-encode each row of ``vectors`` (``(n, dim)``); returns ``(n, layers)`` codes."""
    if stack.layers == 0:
        raise ConfigurationError("cannot encode with an empty RVQ stack")
    vectors = np.asarray(vectors, dtype=np.float64)
    vectors = vectors.reshape(-1, vectors.shape[-1]) if vectors.size else vectors.reshape(0, stack.dim)
    _check_dim(stack.dim, vectors)
    if beam_width < 1:
        raise ConfigurationError(f"beam_width must be >= 1, got {beam_width}")
    greedy = _greedy_codes(stack, vectors)
    if beam_width == 1:
        return greedy
    return np.stack([_beam_codes(stack, v, beam_width, g) for v, g in zip(vectors, greedy)]).reshape(
        -1, stack.layers
    )


def _greedy_codes(stack, vectors):
    residual = vectors.copy()
    codes = np.empty((vectors.shape[0], stack.layers), dtype=np.int64)
    for k, cb in enumerate(stack.codebooks):
        codes[:, k] = _nearest_exact(residual, cb)
        residual -= cb[codes[:, k]].astype(np.float64)
    return codes


def _path_error(stack, v, codes):
    r = v - rvq_decode(stack, codes)
    return float(r @ r)


def _beam_codes(stack, v, beam_width, greedy):
    paths = np.zeros((1, 0), dtype=np.int64)
    residuals = v[None, :]
    for cb in stack.codebooks:
        cb64 = np.asarray(cb, dtype=np.float64)
        cand = residuals[:, None, :] - cb64[None, :, :]
        err = np.einsum("hmd,hmd->hm", cand, cand).reshape(-1)
        cand = cand.reshape(-1, v.shape[0])
        h_idx, m_idx = np.divmod(np.arange(err.size), cb.shape[0])
        cand_paths = np.concatenate([paths[h_idx], m_idx[:, None]], axis=1)
        keys = tuple(cand_paths[:, j] for j in range(cand_paths.shape[1] - 1, -1, -1)) + (err,)
        order = np.lexsort(keys)
        keep, seen = [], set()
        for i in order:
            key = cand[i].tobytes()
            if key in seen:
                continue
            seen.add(key)
            keep.append(i)
            if len(keep) == beam_width:
                break
        paths, residuals = cand_paths[keep], cand[keep]
    best = paths[0]
    # never return something worse than the greedy path
    if _path_error(stack, v, greedy) < _path_error(stack, v, best):
        return greedy
    return best


def rvq_encode(stack, v, beam_width=1):
    """Encode one vector.

    ``beam_width == 1`` is greedy layer-by-layer nearest neighbour. Wider
    beams keep the ``beam_width`` best partial paths per layer (ranked by
    residual energy, identical residuals merged) and return the path with
    the smallest final error.

    Returns:
        ``(codes, error)`` where ``error = ||v - rvq_decode(stack, codes)||^2``.
    """
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    codes = rvq_encode_frames(stack, v[None, :], beam_width)[0]
    return codes, _path_error(stack, v, codes)


def rvq_decode(stack, codes):
    """Sum of the selected codewords (float64)."""
    codes = np.asarray(codes, dtype=np.int64)
    if codes.shape[-1] != stack.layers:
        raise ConfigurationError(f"expected {stack.layers} codes per vector, got {codes.shape[-1]}")
    out = np.zeros(codes.shape[:-1] + (stack.dim,), dtype=np.float64)
    for k, cb in enumerate(stack.codebooks):
        out += np.asarray(cb, dtype=np.float64)[codes[..., k]]
    return out


# -- extractors and synthesizer ---------------------------------------------


def pad_frames(x, n_step):
    """Edge-replicate the tail so the frame count is a multiple of ``n_step``."""
    x = as_feature_map(x)
    extra = -x.shape[1] % n_step
    if extra == 0:
        return x
    if x.shape[1] == 0:
        raise ConfigurationError("cannot edge-pad an empty feature map")
    return np.pad(x, ((0, 0), (0, extra)), mode="edge")


def extractor_tensor_shapes(dim, n_step):
    return {
        "lsrvq.lt_extractor.weight": (dim, dim, n_step),
        "lsrvq.lt_extractor.bias": (dim,),
        "lsrvq.st_extractor.weight": (dim, 2 * dim, 1),
        "lsrvq.st_extractor.bias": (dim,),
        "lsrvq.synthesizer.weight": (dim, 2 * dim, 1),
        "lsrvq.synthesizer.bias": (dim,),
    }


def averaging_extractor_weights(dim, n_step):
    """Conv-variant weights that reproduce the average-pooling variant exactly."""
    eye = np.eye(dim, dtype=np.float32)
    return {
        "lsrvq.lt_extractor.weight": np.repeat(eye[:, :, None] / n_step, n_step, axis=2),
        "lsrvq.lt_extractor.bias": np.zeros(dim, np.float32),
        "lsrvq.st_extractor.weight": np.concatenate([eye, -eye], axis=1)[:, :, None],
        "lsrvq.st_extractor.bias": np.zeros(dim, np.float32),
        "lsrvq.synthesizer.weight": np.concatenate([eye, eye], axis=1)[:, :, None],
        "lsrvq.synthesizer.bias": np.zeros(dim, np.float32),
    }


def _conv_weights(weights, name):
    if weights is None or f"lsrvq.{name}.weight" not in weights:
        raise ConfigurationError(f"conv extractor needs 'lsrvq.{name}.weight'")
    return weights[f"lsrvq.{name}.weight"], weights[f"lsrvq.{name}.bias"]


def lt_extract(x, cfg, weights=None):
    """Long-term features, one frame per ``n_step`` input frames (tail edge-padded)."""
    x = pad_frames(x, cfg.n_step)
    if cfg.extractor == AVGPOOL:
        return avg_pool(x, cfg.n_step)
    w, b = _conv_weights(weights, "lt_extractor")
    d = x.shape[0]
    return conv1d(x, ConvSpec(d, d, cfg.n_step, stride=cfg.n_step), w, b)


def st_extract(x, lt_q, cfg, weights=None):
    """Short-term residual of ``x`` given the quantized long-term features."""
    x = pad_frames(x, cfg.n_step)
    up = repeat_frames(lt_q, cfg.n_step).astype(x.dtype, copy=False)
    if up.shape != x.shape:
        raise ConfigurationError(f"long-term features {np.shape(lt_q)} do not cover input {x.shape}")
    if cfg.extractor == AVGPOOL:
        return x - up
    w, b = _conv_weights(weights, "st_extractor")
    d = x.shape[0]
    return conv1d(np.concatenate([x, up]), ConvSpec(2 * d, d, 1), w, b)


def synthesize(lt_q, st_q, cfg, weights=None):
    """Merge quantized long- and short-term features into latent frames."""
    st_q = as_feature_map(st_q)
    up = repeat_frames(lt_q, cfg.n_step).astype(st_q.dtype, copy=False)
    if up.shape != st_q.shape:
        raise ConfigurationError(f"long-term {up.shape} and short-term {st_q.shape} shapes disagree")
    if cfg.extractor == AVGPOOL:
        return up + st_q
    w, b = _conv_weights(weights, "synthesizer")
    d = st_q.shape[0]
    return conv1d(np.concatenate([up, st_q]), ConvSpec(2 * d, d, 1), w, b)


# -- full quantizer ---------------------------------------------------------


def _unpack_stacks(stacks, dim):
    lt, st = stacks.stacks if isinstance(stacks, FittedQuantizer) else stacks
    for name, stack in (("long-term", lt), ("short-term", st)):
        if stack.layers and stack.dim != dim:
            raise ConfigurationError(f"{name} codebooks have dimension {stack.dim}, features have {dim}")
    return lt, st


def _check_stacks(cfg, lt, st):
    if lt.layers != cfg.lt_layers or any(m != cfg.lt_size for m in lt.sizes):
        raise ConfigurationError(f"long-term stack {lt.sizes} does not match {cfg.lt_layers} x {cfg.lt_size}")
    if st.layers != cfg.st_layers or any(m != cfg.st_size for m in st.sizes):
        raise ConfigurationError(f"short-term stack {st.sizes} does not match {cfg.st_layers} x {cfg.st_size}")


def _decode_stream(stack, codes, dim, frames):
    if stack.layers == 0:
        return np.zeros((dim, frames), np.float32)
    return rvq_decode(stack, codes).T.astype(np.float32)


def lsrvq_encode(x, cfg, stacks, weights=None, beam_width=None):
    """Quantize latent frames ``x`` (``(dim, frames)``) to a :class:`CodedStream`.

    ``beam_width`` overrides ``cfg.beam_width`` when given.
    """
    x = as_feature_map(x)
    dim, frames = x.shape
    lt, st = _unpack_stacks(stacks, dim)
    _check_stacks(cfg, lt, st)
    beam = cfg.beam_width if beam_width is None else beam_width
    if frames == 0:
        return CodedStream(np.zeros((0, cfg.lt_layers)), np.zeros((0, cfg.st_layers)), 0, cfg)
    x = pad_frames(x, cfg.n_step)
    blocks = x.shape[1] // cfg.n_step

    lt_feat = lt_extract(x, cfg, weights)
    if lt.layers:
        lt_codes = rvq_encode_frames(lt, lt_feat.T, beam)
    else:
        lt_codes = np.zeros((blocks, 0), np.int64)
    lt_q = _decode_stream(lt, lt_codes, dim, blocks)

    st_feat = st_extract(x, lt_q, cfg, weights)
    if st.layers:
        st_codes = rvq_encode_frames(st, st_feat.T, beam)
    else:
        st_codes = np.zeros((x.shape[1], 0), np.int64)
    return CodedStream(lt_codes, st_codes, frames, cfg)


def lsrvq_decode(codes, cfg, stacks, weights=None):
    """Reconstruct ``(dim, codes.frames)`` latent frames from code indices."""
    lt, st = stacks.stacks if isinstance(stacks, FittedQuantizer) else stacks
    _check_stacks(cfg, lt, st)
    dim = lt.dim if lt.layers else st.dim
    if dim is None:
        raise ConfigurationError("both RVQ stacks are empty")
    if codes.frames == 0:
        return np.zeros((dim, 0), np.float32)
    lt_q = _decode_stream(lt, codes.lt_codes, dim, codes.blocks)
    st_q = _decode_stream(st, codes.st_codes, dim, codes.st_codes.shape[0])
    return synthesize(lt_q, st_q, cfg, weights)[:, : codes.frames]


def bitrate(cfg):
    """Bits per second: (S/N)*M_q1*log2(M_1) + S*M_q2*log2(M_2)."""
    return (
        cfg.frame_rate / cfg.n_step * cfg.lt_layers * math.log2(cfg.lt_size)
        + cfg.frame_rate * cfg.st_layers * math.log2(cfg.st_size)
    )


# -- codebook fitting --------------------------------------------------------


def _sq_dists(data, centers):
    d = (
        np.einsum("nd,nd->n", data, data)[:, None]
        - 2.0 * data @ centers.T
        + np.einsum("md,md->m", centers, centers)[None, :]
    )
    return np.maximum(d, 0.0)


def _kmeans_pp(data, size, rng):
    n = data.shape[0]
    centers = np.empty((size, data.shape[1]))
    centers[0] = data[rng.integers(n)]
    closest = _sq_dists(data, centers[:1])[:, 0]
    for k in range(1, size):
        total = closest.sum()
        idx = rng.choice(n, p=closest / total) if total > 0 else rng.integers(n)
        centers[k] = data[idx]
        closest = np.minimum(closest, _sq_dists(data, centers[k : k + 1])[:, 0])
    return centers


def _separate_duplicates(centers, data, rng):
    scale = max(1e-6, 1e-3 * float(np.std(data)))
    for _ in range(8):
        gap = _sq_dists(centers, centers)
        np.fill_diagonal(gap, np.inf)
        dup = np.triu(gap <= 1e-9).any(axis=0)
        if not dup.any():
            break
        centers[dup] += rng.standard_normal((int(dup.sum()), centers.shape[1])) * scale
    return centers


def kmeans(data, size, rng, max_iter=50, tol=1e-4):
    """k-means++ seeding followed by Lloyd iterations.

    Stops after ``max_iter`` iterations or when the relative decrease in
    mean squared distortion drops below ``tol``. Empty clusters are
    re-seeded with the worst-fit point.

    Returns:
        ``(centers, distortion)``.
    """
    data = np.asarray(data, dtype=np.float64)
    n = data.shape[0]
    if n < size:
        raise FittingError(f"{n} training vectors cannot fit a codebook of size {size}")
    centers = _kmeans_pp(data, size, rng)
    prev = np.inf
    for _ in range(max_iter):
        dists = _sq_dists(data, centers)
        assign = np.argmin(dists, axis=1)
        best = dists[np.arange(n), assign]
        distortion = float(best.mean())
        counts = np.bincount(assign, minlength=size)
        sums = np.zeros_like(centers)
        np.add.at(sums, assign, data)
        filled = counts > 0
        centers[filled] = sums[filled] / counts[filled, None]
        if not filled.all():
            worst = np.argsort(best)[::-1][: int((~filled).sum())]
            centers[~filled] = data[worst]
        if distortion == 0.0 or (prev - distortion) <= tol * prev:
            break
        prev = distortion
    centers = _separate_duplicates(centers, data, rng)
    best = _sq_dists(data, centers).min(axis=1)
    return centers, float(best.mean())


def fit_rvq(vectors, layers, size, rng, max_iter=50, tol=1e-4):
    """Fit ``layers`` codebooks one at a time on successive residuals."""
    residual = np.asarray(vectors, dtype=np.float64).copy()
    books = []
    for _ in range(layers):
        centers, _ = kmeans(residual, size, rng, max_iter, tol)
        cb = centers.astype(np.float32)
        books.append(cb)
        residual -= cb[_nearest_exact(residual, cb)].astype(np.float64)
    return RvqStack(tuple(books))


def fit_codebooks(features, cfg, seed=0, weights=None, max_iter=50, tol=1e-4):
    """Fit long- and short-term stacks on a corpus of latent feature maps.

    The long-term stack is fitted on extractor outputs; the short-term stack
    on residuals left after greedy long-term quantization. For the conv
    variant, ``weights`` defaults to :func:`averaging_extractor_weights`.

    Raises:
        FittingError: a stack has fewer training vectors than codewords.
    """
    features = [as_feature_map(f) for f in features]
    features = [f for f in features if f.shape[1]]
    if not features:
        raise FittingError("no feature frames to fit on")
    dim = features[0].shape[0]
    if any(f.shape[0] != dim for f in features):
        raise ConfigurationError("feature maps disagree on dimension")
    if cfg.extractor == CONV and weights is None:
        weights = averaging_extractor_weights(dim, cfg.n_step)
    rng = np.random.default_rng(seed)

    lt_feats = [lt_extract(f, cfg, weights) for f in features]
    lt_stack = fit_rvq(np.concatenate([f.T for f in lt_feats]), cfg.lt_layers, cfg.lt_size, rng, max_iter, tol)
    st_vectors = []
    for f, lf in zip(features, lt_feats):
        if lt_stack.layers:
            lt_q = _decode_stream(lt_stack, _greedy_codes(lt_stack, lf.T.astype(np.float64)), dim, lf.shape[1])
        else:
            lt_q = np.zeros_like(lf)
        st_vectors.append(st_extract(f, lt_q, cfg, weights).T)
    st_stack = fit_rvq(np.concatenate(st_vectors), cfg.st_layers, cfg.st_size, rng, max_iter, tol)
    return FittedQuantizer(lt_stack, st_stack, weights if cfg.extractor == CONV else None)


def quantization_diagnostics(x, codes, cfg, stacks, weights=None):
    """Codebook / commitment terms measured on a coded utterance.

    Both terms equal the per-layer mean squared gap between each layer's
    input residual and its selected codeword, summed over all long- and
    short-term layers; they differ only in which side a trainer would hold
    fixed. ``weighted_sum`` applies the 1.0 / 0.25 weighting.
    """
    x = as_feature_map(x)
    dim = x.shape[0]
    lt, st = _unpack_stacks(stacks, dim)
    _check_stacks(cfg, lt, st)
    xp = pad_frames(x, cfg.n_step)
    per_layer = []

    def walk(stack, feats, layer_codes):
        residual = feats.T.astype(np.float64)
        for k, cb in enumerate(stack.codebooks):
            cw = np.asarray(cb, dtype=np.float64)[layer_codes[:, k]]
            per_layer.append(float(np.mean((cw - residual) ** 2)))
            residual = residual - cw

    walk(lt, lt_extract(xp, cfg, weights), codes.lt_codes)
    lt_q = _decode_stream(lt, codes.lt_codes, dim, codes.blocks)
    walk(st, st_extract(xp, lt_q, cfg, weights), codes.st_codes)
    codebook_loss = float(sum(per_layer))
    commitment_loss = codebook_loss
    return {
        "codebook_loss": codebook_loss,
        "commitment_loss": commitment_loss,
        "weighted_sum": CODEBOOK_WEIGHT * codebook_loss + COMMITMENT_WEIGHT * commitment_loss,
        "per_layer": per_layer,
    }
