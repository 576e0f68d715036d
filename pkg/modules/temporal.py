#!/usr/bin/env python3
"""
Temporal module for the video pointing toolkit

Desk-scale version of the windowed temporal conditioning path:

    patches --window_partition--> windows [W, 4, D]
    context = mean of the l previous frames' windows (ContextBuffer)
    enriched = f + MHCA(f, context)          (residual enrichment)
    tokens   = attention pooling over the 4 slots of every window
    logits   = affine projection of the tokens, averaged over windows
    loss     = cross-entropy against a target class

The forward pass keeps what the backward pass needs, so analytic gradients of
every parameter can be compared with central finite differences
(``grad_check``). All verification paths run in float64.
"""

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Deque, Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from core.config import DEFAULT_CONTEXT_LENGTH, GRAD_REL_ERROR_THRESHOLD, SOFTMAX_RESIDUAL_THRESHOLD
from core.errors import InvalidInputError, VerificationError

logger = logging.getLogger("temporal")

SLOTS = 4
REL_ERROR_FLOOR = 1e-8

PATCH_AXES = ("crops", "patches", "channels")
WINDOW_AXES = ("windows", "slots", "channels")
TOKEN_AXES = ("windows", "channels")

# ----------------------------------------------------------------------------
# Feature tensors
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureTensor:
    axes: Tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        axes = tuple(self.axes)
        if values.ndim != len(axes):
            raise InvalidInputError(f"{len(axes)} axis names for a {values.ndim}-d tensor")
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("feature tensor has non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    def size(self, axis: str) -> int:
        return self.values.shape[self.axes.index(axis)]


TensorLike = Union[FeatureTensor, np.ndarray]


def _array(x: TensorLike) -> np.ndarray:
    return x.values if isinstance(x, FeatureTensor) else np.asarray(x, dtype=np.float64)


def _windows(x: TensorLike, what: str = "windows") -> np.ndarray:
    arr = _array(x)
    if arr.ndim != 3 or arr.shape[1] != SLOTS:
        raise InvalidInputError(f"{what} must be shaped [W, {SLOTS}, D], got {list(arr.shape)}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{what} contain non-finite values")
    return arr


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


# ----------------------------------------------------------------------------
# Windows and context
# ----------------------------------------------------------------------------

def _patch_side(patches: int) -> int:
    side = math.isqrt(patches)
    if side * side != patches or side % 2 or side == 0:
        raise InvalidInputError(f"patch count {patches} is not an even-sided perfect square")
    return side


def window_partition(f: TensorLike) -> FeatureTensor:
    """[N, P, D] -> [N·P/4, 4, D]; slot order (2r,2c), (2r,2c+1), (2r+1,2c), (2r+1,2c+1)."""
    arr = _array(f)
    if arr.ndim != 3:
        raise InvalidInputError(f"expected [N, P, D] patches, got {list(arr.shape)}")
    n, p, d = arr.shape
    side = _patch_side(p)
    half = side // 2
    out = (arr.reshape(n, half, 2, half, 2, d)
              .transpose(0, 1, 3, 2, 4, 5)
              .reshape(n * half * half, SLOTS, d))
    return FeatureTensor(WINDOW_AXES, out)


def window_merge(windows: TensorLike, crops: int, patches: int) -> FeatureTensor:
    """Inverse of window_partition."""
    arr = _windows(windows)
    side = _patch_side(patches)
    half = side // 2
    if arr.shape[0] != crops * half * half:
        raise InvalidInputError(f"{arr.shape[0]} windows do not tile {crops} crops of {patches} patches")
    d = arr.shape[2]
    out = (arr.reshape(crops, half, half, 2, 2, d)
              .transpose(0, 1, 3, 2, 4, 5)
              .reshape(crops, patches, d))
    return FeatureTensor(PATCH_AXES, out)


class ContextBuffer:
    """The l most recent frames' window tensors, most recent last."""

    def __init__(self, capacity: int = DEFAULT_CONTEXT_LENGTH):
        if capacity < 1:
            raise InvalidInputError(f"context length must be >= 1, got {capacity}")
        self.capacity = capacity
        self._frames: Deque[np.ndarray] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._frames)

    @property
    def frames(self) -> Tuple[np.ndarray, ...]:
        return tuple(self._frames)

    def push(self, windows: TensorLike) -> None:
        arr = _windows(windows).copy()
        if self._frames and arr.shape != self._frames[0].shape:
            raise InvalidInputError(f"context frame shape {list(arr.shape)} differs from "
                                    f"{list(self._frames[0].shape)}")
        arr.setflags(write=False)
        self._frames.append(arr)

    def context(self, current: TensorLike) -> FeatureTensor:
        """Mean of the stored frames; the current frame stands in while the buffer is empty."""
        if not self._frames:
            return FeatureTensor(WINDOW_AXES, _windows(current))
        return context_mean(self)


def context_mean(buf: ContextBuffer) -> FeatureTensor:
    if len(buf) == 0:
        raise InvalidInputError("context buffer is empty")
    return FeatureTensor(WINDOW_AXES, np.mean(np.stack(buf.frames), axis=0))


# ----------------------------------------------------------------------------
# Parameters
# ----------------------------------------------------------------------------

def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int, shape: Tuple[int, ...]) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def _check_matrix(name: str, value: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    if arr.shape != shape:
        raise InvalidInputError(f"{name} must be shaped {list(shape)}, got {list(arr.shape)}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return arr


@dataclass(frozen=True)
class MhcaParams:
    """Query/key/value/output projections; key bias is omitted (softmax ignores it)."""
    heads: int
    w_q: np.ndarray
    b_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    b_v: np.ndarray
    w_o: np.ndarray
    b_o: np.ndarray

    def __post_init__(self):
        d = np.shape(self.w_q)[0] if np.ndim(self.w_q) == 2 else -1
        if d < 1:
            raise InvalidInputError("w_q must be a square [D, D] matrix")
        if self.heads < 1 or d % self.heads:
            raise InvalidInputError(f"channel dim {d} is not divisible by {self.heads} heads")
        for name in ("w_q", "w_k", "w_v", "w_o"):
            object.__setattr__(self, name, _check_matrix(name, getattr(self, name), (d, d)))
        for name in ("b_q", "b_v", "b_o"):
            object.__setattr__(self, name, _check_matrix(name, getattr(self, name), (d,)))

    @property
    def dim(self) -> int:
        return self.w_q.shape[0]

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    @classmethod
    def init(cls, dim: int, heads: int, rng: np.random.Generator, zero_output: bool = True) -> "MhcaParams":
        """Xavier-uniform projections; output projection and biases start at zero by default."""
        if heads < 1 or dim < 1 or dim % heads:
            raise InvalidInputError(f"channel dim {dim} is not divisible by {heads} heads")
        zeros = np.zeros(dim)
        w_o = np.zeros((dim, dim)) if zero_output else _xavier(rng, dim, dim, (dim, dim))
        return cls(
            heads=heads,
            w_q=_xavier(rng, dim, dim, (dim, dim)), b_q=zeros,
            w_k=_xavier(rng, dim, dim, (dim, dim)),
            w_v=_xavier(rng, dim, dim, (dim, dim)), b_v=zeros,
            w_o=w_o, b_o=zeros,
        )


@dataclass(frozen=True)
class PoolParams:
    query: np.ndarray

    def __post_init__(self):
        arr = np.array(self.query, dtype=np.float64)
        if arr.ndim != 1 or not np.all(np.isfinite(arr)):
            raise InvalidInputError("pool query must be a finite vector")
        object.__setattr__(self, "query", arr)


@dataclass(frozen=True)
class ProjParams:
    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.array(self.weight, dtype=np.float64)
        if w.ndim != 2:
            raise InvalidInputError(f"projection weight must be 2-d, got {w.ndim}-d")
        object.__setattr__(self, "weight", _check_matrix("projection weight", w, w.shape))
        object.__setattr__(self, "bias", _check_matrix("projection bias", self.bias, (w.shape[1],)))


class TemporalVariant(str, Enum):
    SINGLE = "single"
    ADD = "add"
    CONCAT = "concat"
    CROSS = "cross-attention"


@dataclass(frozen=True)
class TemporalHead:
    """Every trainable tensor of the pipeline, addressable by name for snapshots and grad checks."""
    mhca: MhcaParams
    pool: PoolParams
    proj: ProjParams

    def __post_init__(self):
        d = self.mhca.dim
        if self.pool.query.shape != (d,):
            raise InvalidInputError(f"pool query must have {d} entries, got {self.pool.query.shape[0]}")
        if self.proj.weight.shape[0] != d:
            raise InvalidInputError(f"projection expects {self.proj.weight.shape[0]} channels, model has {d}")

    @property
    def classes(self) -> int:
        return self.proj.weight.shape[1]

    def tensors(self) -> Dict[str, np.ndarray]:
        m = self.mhca
        return {
            "mhca.w_q": m.w_q, "mhca.b_q": m.b_q, "mhca.w_k": m.w_k,
            "mhca.w_v": m.w_v, "mhca.b_v": m.b_v, "mhca.w_o": m.w_o, "mhca.b_o": m.b_o,
            "pool.query": self.pool.query,
            "proj.weight": self.proj.weight, "proj.bias": self.proj.bias,
        }

    @classmethod
    def from_tensors(cls, heads: int, tensors: Mapping[str, np.ndarray]) -> "TemporalHead":
        expected = set(cls.tensor_names())
        if set(tensors) != expected:
            missing = sorted(expected - set(tensors))
            extra = sorted(set(tensors) - expected)
            raise InvalidInputError(f"parameter set mismatch (missing {missing}, unexpected {extra})")
        t = tensors
        return cls(
            mhca=MhcaParams(heads=heads, w_q=t["mhca.w_q"], b_q=t["mhca.b_q"], w_k=t["mhca.w_k"],
                            w_v=t["mhca.w_v"], b_v=t["mhca.b_v"], w_o=t["mhca.w_o"], b_o=t["mhca.b_o"]),
            pool=PoolParams(query=t["pool.query"]),
            proj=ProjParams(weight=t["proj.weight"], bias=t["proj.bias"]),
        )

    @staticmethod
    def tensor_names() -> Tuple[str, ...]:
        return ("mhca.w_q", "mhca.b_q", "mhca.w_k", "mhca.w_v", "mhca.b_v", "mhca.w_o", "mhca.b_o",
                "pool.query", "proj.weight", "proj.bias")

    @classmethod
    def init(cls, dim: int, heads: int, classes: int, rng: np.random.Generator,
             cold_start: bool = True) -> "TemporalHead":
        """Cold start: zero output projection, zero biases and a zero pool query.

        With ``cold_start=False`` every tensor is random, which is what gradient
        verification needs (a zero output projection blocks the attention gradients).
        """
        if classes < 2:
            raise InvalidInputError(f"need at least 2 classes, got {classes}")
        mhca = MhcaParams.init(dim, heads, rng, zero_output=cold_start)
        if not cold_start:
            b_q, b_v, b_o = (rng.uniform(-0.1, 0.1, size=dim) for _ in range(3))
            mhca = MhcaParams(heads=heads, w_q=mhca.w_q, b_q=b_q, w_k=mhca.w_k,
                              w_v=mhca.w_v, b_v=b_v, w_o=mhca.w_o, b_o=b_o)
        query = np.zeros(dim) if cold_start else _xavier(rng, dim, 1, (dim,))
        bias = np.zeros(classes) if cold_start else rng.uniform(-0.1, 0.1, size=classes)
        return cls(mhca=mhca, pool=PoolParams(query),
                   proj=ProjParams(_xavier(rng, dim, classes, (dim, classes)), bias))


# ----------------------------------------------------------------------------
# Forward building blocks
# ----------------------------------------------------------------------------

def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    w, s, d = x.shape
    return x.reshape(w, s, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    w, h, s, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(w, s, h * dh)


def _linear(x: np.ndarray, w: np.ndarray, b: Optional[np.ndarray] = None) -> np.ndarray:
    out = np.einsum("wsd,de->wse", x, w)
    return out if b is None else out + b


def _mhca_forward(fq: np.ndarray, fkv: np.ndarray, p: MhcaParams) -> Tuple[np.ndarray, dict]:
    if fq.shape != fkv.shape:
        raise InvalidInputError(f"query windows {list(fq.shape)} and context windows {list(fkv.shape)} differ")
    if fq.shape[2] != p.dim:
        raise InvalidInputError(f"windows have {fq.shape[2]} channels, parameters expect {p.dim}")
    scale = 1.0 / math.sqrt(p.head_dim)
    q = _split_heads(_linear(fq, p.w_q, p.b_q), p.heads)
    k = _split_heads(_linear(fkv, p.w_k), p.heads)
    v = _split_heads(_linear(fkv, p.w_v, p.b_v), p.heads)
    attn = softmax(np.einsum("whid,whjd->whij", q, k) * scale, axis=-1)
    o = _merge_heads(np.einsum("whij,whjd->whid", attn, v))
    out = _linear(o, p.w_o, p.b_o)
    cache = {"fq": fq, "fkv": fkv, "q": q, "k": k, "v": v, "attn": attn, "o": o, "scale": scale}
    return out, cache


def _mhca_backward(d_out: np.ndarray, cache: dict, p: MhcaParams) -> Dict[str, np.ndarray]:
    o, attn, q, k, v, scale = cache["o"], cache["attn"], cache["q"], cache["k"], cache["v"], cache["scale"]
    grads = {
        "mhca.w_o": np.einsum("wsd,wse->de", o, d_out),
        "mhca.b_o": d_out.sum(axis=(0, 1)),
    }
    d_o = _split_heads(np.einsum("wse,de->wsd", d_out, p.w_o), p.heads)
    d_attn = np.einsum("whid,whjd->whij", d_o, v)
    d_v = np.einsum("whij,whid->whjd", attn, d_o)
    d_s = attn * (d_attn - np.sum(attn * d_attn, axis=-1, keepdims=True))
    d_q = _merge_heads(np.einsum("whij,whjd->whid", d_s, k) * scale)
    d_k = _merge_heads(np.einsum("whij,whid->whjd", d_s, q) * scale)
    d_v = _merge_heads(d_v)
    grads["mhca.w_q"] = np.einsum("wsd,wse->de", cache["fq"], d_q)
    grads["mhca.b_q"] = d_q.sum(axis=(0, 1))
    grads["mhca.w_k"] = np.einsum("wsd,wse->de", cache["fkv"], d_k)
    grads["mhca.w_v"] = np.einsum("wsd,wse->de", cache["fkv"], d_v)
    grads["mhca.b_v"] = d_v.sum(axis=(0, 1))
    return grads


def attention_weights(fq: TensorLike, fkv: TensorLike, params: MhcaParams) -> np.ndarray:
    """Per-window, per-head attention over the 4 key slots, shaped [W, h, 4, 4]."""
    _, cache = _mhca_forward(_windows(fq, "query windows"), _windows(fkv, "context windows"), params)
    return cache["attn"]


def mhca(fq: TensorLike, fkv: TensorLike, params: MhcaParams) -> FeatureTensor:
    """Multi-head cross-attention inside each window; no attention crosses windows."""
    out, _ = _mhca_forward(_windows(fq, "query windows"), _windows(fkv, "context windows"), params)
    return FeatureTensor(WINDOW_AXES, out)


def temporal_enrich(f: TensorLike, fctx: TensorLike, params: MhcaParams) -> FeatureTensor:
    fq = _windows(f, "query windows")
    out, _ = _mhca_forward(fq, _windows(fctx, "context windows"), params)
    return FeatureTensor(WINDOW_AXES, fq + out)


def enrich_variant(variant: TemporalVariant, f: TensorLike, fctx: TensorLike,
                   params: Optional[MhcaParams] = None) -> FeatureTensor:
    """Temporal-module ablation: no context, additive context, token concatenation or MHCA."""
    variant = TemporalVariant(variant)
    fq = _windows(f, "query windows")
    ctx = _windows(fctx, "context windows")
    if fq.shape != ctx.shape:
        raise InvalidInputError(f"query windows {list(fq.shape)} and context windows {list(ctx.shape)} differ")
    if variant is TemporalVariant.SINGLE:
        return FeatureTensor(WINDOW_AXES, fq)
    if variant is TemporalVariant.ADD:
        return FeatureTensor(WINDOW_AXES, fq + ctx)
    if variant is TemporalVariant.CONCAT:
        return FeatureTensor(WINDOW_AXES, np.concatenate([fq, ctx], axis=0))
    if params is None:
        raise InvalidInputError("cross-attention variant needs MHCA parameters")
    return temporal_enrich(fq, ctx, params)


def _pool_forward(e: np.ndarray, pool: PoolParams) -> Tuple[np.ndarray, dict]:
    if e.shape[2] != pool.query.shape[0]:
        raise InvalidInputError(f"windows have {e.shape[2]} channels, pool query has {pool.query.shape[0]}")
    scale = 1.0 / math.sqrt(e.shape[2])
    weights = softmax(np.einsum("wsd,d->ws", e, pool.query) * scale, axis=-1)
    tokens = np.einsum("ws,wsd->wd", weights, e)
    return tokens, {"e": e, "weights": weights, "scale": scale}


def _pool_backward(d_tokens: np.ndarray, cache: dict, pool: PoolParams) -> Tuple[np.ndarray, np.ndarray]:
    """(gradient wrt the pooled windows, gradient wrt the pool query)."""
    e, a, scale = cache["e"], cache["weights"], cache["scale"]
    d_a = np.einsum("wsd,wd->ws", e, d_tokens)
    d_u = a * (d_a - np.sum(a * d_a, axis=-1, keepdims=True))
    d_query = scale * np.einsum("ws,wsd->d", d_u, e)
    d_e = a[:, :, None] * d_tokens[:, None, :] + scale * d_u[:, :, None] * pool.query[None, None, :]
    return d_e, d_query


def pool_weights(windows: TensorLike, pool: PoolParams) -> np.ndarray:
    _, cache = _pool_forward(_windows(windows), pool)
    return cache["weights"]


def attn_pool(windows: TensorLike, pool: PoolParams) -> FeatureTensor:
    """One token per window: softmax(query · slot / sqrt(D)) weighted slot sum."""
    tokens, _ = _pool_forward(_windows(windows), pool)
    return FeatureTensor(TOKEN_AXES, tokens)


def project(tokens: TensorLike, proj: ProjParams) -> FeatureTensor:
    arr = _array(tokens)
    if arr.ndim != 2 or arr.shape[1] != proj.weight.shape[0]:
        raise InvalidInputError(f"tokens {list(arr.shape)} do not match projection "
                                f"{list(proj.weight.shape)}")
    return FeatureTensor(("windows", "embedding"), np.einsum("wd,de->we", arr, proj.weight) + proj.bias)


def cross_entropy(logits: Sequence[float], target: int) -> float:
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.size == 0:
        raise InvalidInputError("logits must be a non-empty vector")
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("logits contain non-finite values")
    if not 0 <= target < z.size:
        raise InvalidInputError(f"target class {target} outside [0, {z.size})")
    m = np.max(z)
    return float(m + np.log(np.sum(np.exp(z - m))) - z[target])


# ----------------------------------------------------------------------------
# Full chain: enrich -> pool -> project -> mean over windows -> cross-entropy
# ----------------------------------------------------------------------------

def pipeline_forward(head: TemporalHead, f: TensorLike, fctx: TensorLike, target: int,
                     variant: TemporalVariant = TemporalVariant.CROSS) -> Tuple[float, dict]:
    variant = TemporalVariant(variant)
    fq = _windows(f, "query windows")
    ctx = _windows(fctx, "context windows")
    if variant is TemporalVariant.CROSS:
        delta, mhca_cache = _mhca_forward(fq, ctx, head.mhca)
        enriched = fq + delta
    else:
        mhca_cache = None
        enriched = enrich_variant(variant, fq, ctx).values
    tokens, pool_cache = _pool_forward(enriched, head.pool)
    projected = np.einsum("wd,de->we", tokens, head.proj.weight) + head.proj.bias
    logits = projected.mean(axis=0)
    loss = cross_entropy(logits, target)
    cache = {"variant": variant, "mhca": mhca_cache, "pool": pool_cache,
             "tokens": tokens, "logits": logits, "target": target}
    return loss, cache


def pipeline_loss(head: TemporalHead, f: TensorLike, fctx: TensorLike, target: int,
                  variant: TemporalVariant = TemporalVariant.CROSS) -> float:
    return pipeline_forward(head, f, fctx, target, variant)[0]


def pipeline_gradients(head: TemporalHead, f: TensorLike, fctx: TensorLike, target: int,
                       variant: TemporalVariant = TemporalVariant.CROSS) -> Dict[str, np.ndarray]:
    """Analytic gradient of pipeline_loss for every tensor of ``head``."""
    _, cache = pipeline_forward(head, f, fctx, target, variant)
    tokens, logits = cache["tokens"], cache["logits"]
    d_logits = softmax(logits)
    d_logits[cache["target"]] -= 1.0
    d_proj = np.broadcast_to(d_logits / tokens.shape[0], (tokens.shape[0], logits.shape[0]))
    grads = {name: np.zeros_like(value) for name, value in head.tensors().items()}
    grads["proj.weight"] = np.einsum("wd,we->de", tokens, d_proj)
    grads["proj.bias"] = d_proj.sum(axis=0)
    d_tokens = np.einsum("we,de->wd", d_proj, head.proj.weight)
    d_enriched, grads["pool.query"] = _pool_backward(d_tokens, cache["pool"], head.pool)
    if cache["variant"] is TemporalVariant.CROSS:
        grads.update(_mhca_backward(d_enriched, cache["mhca"], head.mhca))
    return grads


# ----------------------------------------------------------------------------
# Gradient verification
# ----------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    errors: Dict[str, float]
    threshold: float = GRAD_REL_ERROR_THRESHOLD

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def worst(self) -> Optional[str]:
        return max(self.errors, key=self.errors.get) if self.errors else None

    @property
    def passed(self) -> bool:
        return self.max_error <= self.threshold


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    a = np.abs(analytic)
    n = np.abs(numeric)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(a, n), REL_ERROR_FLOOR)


def numeric_gradients(loss_fn: Callable[[Dict[str, np.ndarray]], float],
                      params: Mapping[str, np.ndarray], h: float) -> Dict[str, np.ndarray]:
    """Central differences (f(θ+h) − f(θ−h)) / 2h for every parameter entry."""
    if not h > 0:
        raise InvalidInputError(f"finite-difference step must be > 0, got {h}")
    base = {name: np.array(v, dtype=np.float64) for name, v in params.items()}
    grads = {}
    for name, value in base.items():
        g = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            plus = value.copy()
            plus[idx] += h
            minus = value.copy()
            minus[idx] -= h
            f_plus = loss_fn({**base, name: plus})
            f_minus = loss_fn({**base, name: minus})
            if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                raise VerificationError(f"non-finite loss while perturbing {name}{list(idx)}")
            g[idx] = (f_plus - f_minus) / (2 * h)
        grads[name] = g
    return grads


def grad_check(loss_fn: Callable[[Dict[str, np.ndarray]], float], params: Mapping[str, np.ndarray],
               analytic: Mapping[str, np.ndarray], h: float = 1e-5,
               threshold: float = GRAD_REL_ERROR_THRESHOLD) -> GradCheckReport:
    """Per-parameter max relative error between ``analytic`` and central differences."""
    if not math.isfinite(loss_fn(dict(params))):
        raise VerificationError("loss is not finite at the starting point")
    numeric = numeric_gradients(loss_fn, params, h)
    errors = {}
    for name in params:
        if np.shape(analytic[name]) != numeric[name].shape:
            raise InvalidInputError(f"analytic gradient for {name} has shape {list(np.shape(analytic[name]))}")
        err = relative_error(np.asarray(analytic[name], dtype=np.float64), numeric[name])
        errors[name] = float(err.max()) if err.size else 0.0
    report = GradCheckReport(errors=errors, threshold=threshold)
    logger.debug("grad_check: max rel err %.3e (%s)", report.max_error, report.worst)
    return report


@dataclass
class AttnCheckReport:
    variant: str
    heads: int
    dim: int
    windows: int
    context_length: int
    step: float
    grad: GradCheckReport
    softmax_residual: float
    residual_identity: bool
    loss: float
    softmax_threshold: float = SOFTMAX_RESIDUAL_THRESHOLD
    params: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    @property
    def passed(self) -> bool:
        return self.grad.passed and self.softmax_residual <= self.softmax_threshold and self.residual_identity

    def to_dict(self) -> Dict[str, object]:
        return {
            "variant": self.variant, "heads": self.heads, "dim": self.dim, "windows": self.windows,
            "context_length": self.context_length, "step": self.step,
            "max_rel_error": self.grad.max_error, "threshold": self.grad.threshold,
            "per_param": dict(self.grad.errors),
            "loss": self.loss,
            "softmax_residual": self.softmax_residual, "residual_identity": self.residual_identity,
            "passed": self.passed,
        }


def attn_check(heads: int, dim: int, windows: int, step: float = 1e-5, seed: int = 0,
               context_length: int = DEFAULT_CONTEXT_LENGTH, classes: int = 5,
               variant: TemporalVariant = TemporalVariant.CROSS,
               head: Optional[TemporalHead] = None) -> AttnCheckReport:
    """Gradient, softmax-normalisation and residual-identity checks on random frames.

    Frames are ``windows`` crops of 2×2 patches; the context is the mean of the
    ``context_length`` frames preceding the current one.
    """
    if heads < 1 or dim < 1 or dim % heads:
        raise InvalidInputError(f"--dim {dim} is not divisible by --heads {heads}")
    if windows < 1:
        raise InvalidInputError(f"--windows must be >= 1, got {windows}")
    rng = np.random.default_rng(seed)
    frames = [window_partition(rng.standard_normal((windows, SLOTS, dim))).values
              for _ in range(context_length + 1)]
    buf = ContextBuffer(context_length)
    for frame in frames[:-1]:
        buf.push(frame)
    current = frames[-1]
    ctx = buf.context(current).values
    target = int(rng.integers(classes))
    if head is None:
        head = TemporalHead.init(dim, heads, classes, rng, cold_start=False)
    elif head.mhca.dim != dim or head.mhca.heads != heads:
        raise InvalidInputError(f"loaded parameters are for dim {head.mhca.dim}, {head.mhca.heads} heads")
    variant = TemporalVariant(variant)

    def loss_fn(tensors: Dict[str, np.ndarray]) -> float:
        return pipeline_loss(TemporalHead.from_tensors(heads, tensors), current, ctx, target, variant)

    loss = pipeline_loss(head, current, ctx, target, variant)
    params = head.tensors()
    grad = grad_check(loss_fn, params, pipeline_gradients(head, current, ctx, target, variant), h=step)

    attn = attention_weights(current, ctx, head.mhca)
    pooled = pool_weights(enrich_variant(variant, current, ctx, head.mhca), head.pool)
    residual = max(float(np.max(np.abs(attn.sum(axis=-1) - 1.0))),
                   float(np.max(np.abs(pooled.sum(axis=-1) - 1.0))))

    cold = MhcaParams.init(dim, heads, rng, zero_output=True)
    identity = bool(np.array_equal(temporal_enrich(current, ctx, cold).values, current))

    return AttnCheckReport(variant=variant.value, heads=heads, dim=dim, windows=windows,
                           context_length=context_length, step=step, grad=grad,
                           softmax_residual=residual, residual_identity=identity, loss=loss,
                           params=params)
