"""Neural network layers on top of the autodiff tensor.

Layers hold their parameters as requires_grad tensors and expose them
through named_params() so optimizers and checkpoints see a flat,
deterministically ordered name -> Tensor mapping. All randomness
(weight init, dropout) comes from generators passed in by the caller.
"""
from __future__ import annotations

import math

import numpy as np

from .autodiff import Tensor, concat, softmax
from .errors import ConfigError, MaskError, ShapeError

Array = np.ndarray


def uniform_init(rng: np.random.Generator, shape: tuple, fan_in: int) -> Array:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear:
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        self.w = Tensor(uniform_init(rng, (d_in, d_out), d_in), requires_grad=True)
        self.b = Tensor(np.zeros(d_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.w + self.b

    def named_params(self) -> dict:
        return {"w": self.w, "b": self.b}


class LayerNorm:
    """Normalize over the last axis, then scale and shift."""

    def __init__(self, d: int, eps: float = 1e-5):
        self.gain = Tensor(np.ones(d), requires_grad=True)
        self.bias = Tensor(np.zeros(d), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        normed = centered * (var + self.eps) ** -0.5
        return normed * self.gain + self.bias

    def named_params(self) -> dict:
        return {"gain": self.gain, "bias": self.bias}


class Dropout:
    """Inverted dropout; identity when rate is 0 or not training."""

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def __call__(self, x: Tensor, rng: np.random.Generator | None = None, training: bool = False) -> Tensor:
        if not training or self.rate == 0.0:
            return x
        if rng is None:
            raise ConfigError("dropout in training mode needs a random generator")
        keep = (rng.random(x.data.shape) >= self.rate) / (1.0 - self.rate)
        return x * keep


class Embedding:
    """Lookup table mapping class indices to d-dimensional rows."""

    def __init__(self, n_classes: int, d: int, rng: np.random.Generator):
        self.table = Tensor(uniform_init(rng, (n_classes, d), d), requires_grad=True)

    def __call__(self, indices) -> Tensor:
        from .autodiff import embedding_lookup

        return embedding_lookup(self.table, indices)

    def named_params(self) -> dict:
        return {"table": self.table}


# ---- positional encoding -------------------------------------------------


def positional_encoding(t: int, d_model: int) -> Array:
    """Sinusoidal time encoding: sin at even components, cos at odd ones."""
    if d_model % 2 != 0:
        raise ConfigError(f"positional encoding needs an even width, got {d_model}")
    if t < 0:
        raise ConfigError(f"time index must be non-negative, got {t}")
    d = np.arange(d_model)
    angle = t / np.power(10000.0, d / d_model)
    return np.where(d % 2 == 0, np.sin(angle), np.cos(angle))


def positional_table(times, d_model: int) -> Array:
    """Encodings for a vector of time indices, stacked into (len, d_model)."""
    times = np.asarray(times)
    if times.size and times.min() < 0:
        raise ConfigError("time indices must be non-negative")
    if d_model % 2 != 0:
        raise ConfigError(f"positional encoding needs an even width, got {d_model}")
    d = np.arange(d_model)
    angle = times[:, None] / np.power(10000.0, d / d_model)[None, :]
    return np.where(d % 2 == 0, np.sin(angle), np.cos(angle))


# ---- attention -----------------------------------------------------------


def full_mask(n_q: int, n_k: int) -> Array:
    return np.ones((n_q, n_k), dtype=bool)


def causal_mask(n: int) -> Array:
    return np.tril(np.ones((n, n), dtype=bool))


def validate_mask(mask: Array) -> Array:
    mask = np.asarray(mask)
    if mask.dtype != bool or mask.ndim != 2:
        raise MaskError(f"attention mask must be a 2-D boolean array, got {mask.dtype} {mask.shape}")
    if not mask.any(axis=1).all():
        bad = int(np.flatnonzero(~mask.any(axis=1))[0])
        raise MaskError(f"query row {bad} has no allowed keys")
    return mask


def attention_bias(mask: Array) -> Array:
    """0 where attending is allowed, -inf where it is not."""
    return np.where(validate_mask(mask), 0.0, -np.inf)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, mask: Array) -> Tensor:
    """softmax(q k^T / sqrt(d_k)) v with an additive -inf mask.

    q: (..., Lq, d_k), k: (..., Lk, d_k), v: (..., Lk, d_v); mask (Lq, Lk)
    broadcasts over any leading batch/head axes.
    """
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"query/key widths differ: {q.shape} vs {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"key/value lengths differ: {k.shape} vs {v.shape}")
    bias = attention_bias(mask)
    if bias.shape != (q.shape[-2], k.shape[-2]):
        raise ShapeError(f"mask shape {bias.shape} does not match ({q.shape[-2]}, {k.shape[-2]})")
    axes = tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2)
    scores = (q @ k.transpose(axes)) * (1.0 / math.sqrt(q.shape[-1])) + bias
    return softmax(scores, axis=-1) @ v


def split_heads(x: Tensor, heads: int) -> Tensor:
    """(..., L, D) -> (..., heads, L, D/heads)"""
    if x.ndim == 2:
        length, d = x.shape
        return x.reshape(length, heads, d // heads).transpose((1, 0, 2))
    batch, length, d = x.shape
    return x.reshape(batch, length, heads, d // heads).transpose((0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    """(..., heads, L, d_k) -> (..., L, heads*d_k)"""
    if x.ndim == 3:
        heads, length, dk = x.shape
        return x.transpose((1, 0, 2)).reshape(length, heads * dk)
    batch, heads, length, dk = x.shape
    return x.transpose((0, 2, 1, 3)).reshape(batch, length, heads * dk)


class MultiHeadAttention:
    def __init__(self, d_model: int, heads: int, rng: np.random.Generator):
        if d_model % heads != 0:
            raise ConfigError(f"heads ({heads}) must divide d_model ({d_model})")
        self.heads = heads
        self.wq = Linear(d_model, d_model, rng)
        self.wk = Linear(d_model, d_model, rng)
        self.wv = Linear(d_model, d_model, rng)
        self.wo = Linear(d_model, d_model, rng)

    def __call__(self, q_in: Tensor, k_in: Tensor, v_in: Tensor, mask: Array) -> Tensor:
        q = split_heads(self.wq(q_in), self.heads)
        k = split_heads(self.wk(k_in), self.heads)
        v = split_heads(self.wv(v_in), self.heads)
        return self.wo(merge_heads(scaled_dot_attention(q, k, v, mask)))

    def named_params(self) -> dict:
        out = {}
        for name, lin in (("wq", self.wq), ("wk", self.wk), ("wv", self.wv), ("wo", self.wo)):
            for k, t in lin.named_params().items():
                out[f"{name}.{k}"] = t
        return out


class MemoryAttention:
    """Cross-attention against precomputed key/value memory.

    The memory (already split into heads) is shared by every layer that
    attends to it; this layer owns only the query and output projections.
    """

    def __init__(self, d_model: int, heads: int, rng: np.random.Generator):
        if d_model % heads != 0:
            raise ConfigError(f"heads ({heads}) must divide d_model ({d_model})")
        self.heads = heads
        self.wq = Linear(d_model, d_model, rng)
        self.wo = Linear(d_model, d_model, rng)

    def __call__(self, x: Tensor, mem_k: Tensor, mem_v: Tensor, mask: Array) -> Tensor:
        q = split_heads(self.wq(x), self.heads)
        return self.wo(merge_heads(scaled_dot_attention(q, mem_k, mem_v, mask)))

    def named_params(self) -> dict:
        out = {}
        for name, lin in (("wq", self.wq), ("wo", self.wo)):
            for k, t in lin.named_params().items():
                out[f"{name}.{k}"] = t
        return out


class FeedForward:
    """Position-wise two-layer net with a 4x inner width."""

    def __init__(self, d_model: int, rng: np.random.Generator):
        self.inner = Linear(d_model, 4 * d_model, rng)
        self.outer = Linear(4 * d_model, d_model, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.outer(self.inner(x).relu())

    def named_params(self) -> dict:
        out = {}
        for name, lin in (("inner", self.inner), ("outer", self.outer)):
            for k, t in lin.named_params().items():
                out[f"{name}.{k}"] = t
        return out


class EncoderLayer:
    """Self-attention then feed-forward, post-norm residuals."""

    def __init__(self, d_model: int, heads: int, dropout_rate: float, rng: np.random.Generator):
        self.attn = MultiHeadAttention(d_model, heads, rng)
        self.ff = FeedForward(d_model, rng)
        self.ln1 = LayerNorm(d_model)
        self.ln2 = LayerNorm(d_model)
        self.drop = Dropout(dropout_rate)

    def __call__(self, x: Tensor, mask: Array, rng=None, training: bool = False) -> Tensor:
        x = self.ln1(x + self.drop(self.attn(x, x, x, mask), rng, training))
        return self.ln2(x + self.drop(self.ff(x), rng, training))

    def named_params(self) -> dict:
        out = {}
        for name, sub in (("attn", self.attn), ("ff", self.ff), ("ln1", self.ln1), ("ln2", self.ln2)):
            for k, t in sub.named_params().items():
                out[f"{name}.{k}"] = t
        return out


class DecoderLayer:
    """Causal self-attention, cross-attention to shared memory, feed-forward."""

    def __init__(self, d_model: int, heads: int, dropout_rate: float, rng: np.random.Generator):
        self.self_attn = MultiHeadAttention(d_model, heads, rng)
        self.cross = MemoryAttention(d_model, heads, rng)
        self.ff = FeedForward(d_model, rng)
        self.ln1 = LayerNorm(d_model)
        self.ln2 = LayerNorm(d_model)
        self.ln3 = LayerNorm(d_model)
        self.drop = Dropout(dropout_rate)

    def __call__(self, x: Tensor, mem_k: Tensor, mem_v: Tensor, self_mask: Array, cross_mask: Array,
                 rng=None, training: bool = False) -> Tensor:
        x = self.ln1(x + self.drop(self.self_attn(x, x, x, self_mask), rng, training))
        x = self.ln2(x + self.drop(self.cross(x, mem_k, mem_v, cross_mask), rng, training))
        return self.ln3(x + self.drop(self.ff(x), rng, training))

    def named_params(self) -> dict:
        out = {}
        subs = (("self_attn", self.self_attn), ("cross", self.cross), ("ff", self.ff),
                ("ln1", self.ln1), ("ln2", self.ln2), ("ln3", self.ln3))
        for name, sub in subs:
            for k, t in sub.named_params().items():
                out[f"{name}.{k}"] = t
        return out


class LSTMCell:
    """Single recurrent cell; gate order in the packed weights is i, f, g, o."""

    def __init__(self, d_in: int, d_hidden: int, rng: np.random.Generator):
        self.d_hidden = d_hidden
        self.w_ih = Tensor(uniform_init(rng, (d_in, 4 * d_hidden), d_in), requires_grad=True)
        self.w_hh = Tensor(uniform_init(rng, (d_hidden, 4 * d_hidden), d_hidden), requires_grad=True)
        self.b = Tensor(np.zeros(4 * d_hidden), requires_grad=True)

    def __call__(self, x: Tensor, h: Tensor, c: Tensor) -> tuple:
        n = self.d_hidden
        z = x @ self.w_ih + h @ self.w_hh + self.b
        i = z[..., 0:n].sigmoid()
        f = z[..., n:2 * n].sigmoid()
        g = z[..., 2 * n:3 * n].tanh()
        o = z[..., 3 * n:4 * n].sigmoid()
        c_next = f * c + i * g
        h_next = o * c_next.tanh()
        return h_next, c_next

    def named_params(self) -> dict:
        return {"w_ih": self.w_ih, "w_hh": self.w_hh, "b": self.b}


def prefix_params(prefix: str, params: dict) -> dict:
    return {f"{prefix}.{k}": t for k, t in params.items()}
