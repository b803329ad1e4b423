"""Scaled dot-product / multi-head attention, masks, and the encoder block.

Every function accepts either unbatched ``[t, d]`` or batched ``[B, t, d]``
activations.  Masks are boolean with True meaning "may attend"; batched masks
have shape ``[B, t_q, t_k]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, LengthError
from .tensor import Tensor


@dataclass(frozen=True)
class AttentionConfig:
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 256

    def __post_init__(self):
        if self.d_model <= 0 or self.n_heads <= 0 or self.d_ff <= 0:
            raise ConfigError("attention dimensions must be positive")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


@dataclass
class RunContext:
    """Training-mode switches threaded through a forward pass."""

    training: bool = False
    dropout: float = 0.0
    rng: np.random.Generator | None = None

    def drop(self, x: Tensor) -> Tensor:
        return T.dropout(x, self.dropout, self.training, self.rng)


EVAL = RunContext()


class Scope:
    """Prefix view into a flat ``{layer.path: Tensor}`` mapping."""

    __slots__ = ("params", "prefix")

    def __init__(self, params: dict, prefix: str = ""):
        self.params = params
        self.prefix = prefix

    def key(self, name: str) -> str:
        return f"{self.prefix}.{name}" if self.prefix else name

    def __getitem__(self, name: str) -> Tensor:
        return self.params[self.key(name)]

    def __contains__(self, name: str) -> bool:
        return self.key(name) in self.params

    def sub(self, name: str) -> "Scope":
        return Scope(self.params, self.key(name))


# -- masks ---------------------------------------------------------------


def make_padding_mask(lengths, max_len: int, query_len: int | None = None) -> np.ndarray:
    """[B, query_len, max_len] mask allowing keys ``j < lengths[b]`` for every query."""
    lengths = np.asarray(lengths, dtype=np.int64).reshape(-1)
    if np.any(lengths > max_len) or np.any(lengths < 0):
        raise DimensionError(f"lengths {lengths.tolist()} outside [0, {max_len}]")
    keys = np.arange(max_len)[None, :] < lengths[:, None]
    tq = max_len if query_len is None else query_len
    return np.broadcast_to(keys[:, None, :], (len(lengths), tq, max_len)).copy()


def make_causal_mask(t: int) -> np.ndarray:
    if t < 1:
        raise LengthError(f"causal mask needs t >= 1, got {t}")
    return np.tril(np.ones((t, t), dtype=bool))


# -- parameter construction ----------------------------------------------


def xavier(rng: np.random.Generator, fan_in: int, fan_out: int, dtype=np.float64) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


def init_linear(params: dict, prefix: str, d_in: int, d_out: int, rng, dtype=np.float64,
                w: str = "w", b: str = "b") -> None:
    params[f"{prefix}.{w}"] = Tensor(xavier(rng, d_in, d_out, dtype), requires_grad=True)
    params[f"{prefix}.{b}"] = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True)


def init_mha(params: dict, prefix: str, d_model: int, rng, dtype=np.float64) -> None:
    for p in "qkvo":
        init_linear(params, prefix, d_model, d_model, rng, dtype, w=f"w{p}", b=f"b{p}")


def init_layer_norm(params: dict, prefix: str, d: int, dtype=np.float64) -> None:
    params[f"{prefix}.g"] = Tensor(np.ones(d, dtype=dtype), requires_grad=True)
    params[f"{prefix}.b"] = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)


def init_ffn(params: dict, prefix: str, d_model: int, d_ff: int, rng, dtype=np.float64) -> None:
    init_linear(params, prefix, d_model, d_ff, rng, dtype, w="w1", b="b1")
    init_linear(params, prefix, d_ff, d_model, rng, dtype, w="w2", b="b2")


def init_encoder_block(params: dict, prefix: str, cfg: AttentionConfig, rng, dtype=np.float64) -> None:
    init_mha(params, f"{prefix}.attn", cfg.d_model, rng, dtype)
    init_layer_norm(params, f"{prefix}.norm1", cfg.d_model, dtype)
    init_ffn(params, f"{prefix}.ffn", cfg.d_model, cfg.d_ff, rng, dtype)
    init_layer_norm(params, f"{prefix}.norm2", cfg.d_model, dtype)


def mha_param_count(d_model: int) -> int:
    return 4 * d_model * d_model + 4 * d_model


# -- attention -----------------------------------------------------------


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None):
    """Return ``(softmax(q k^T / sqrt(d)) v, weights)`` with masked weights exactly 0."""
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"query width {q.shape[-1]} != key width {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"key length {k.shape[-2]} != value length {v.shape[-2]}")
    if mask is not None:
        want = q.shape[:-1] + (k.shape[-2],)
        try:
            mask = np.broadcast_to(mask, want)
        except ValueError:
            raise DimensionError(f"mask shape {np.shape(mask)} does not fit scores {want}") from None
    scores = T.scale(T.matmul(q, T.swapaxes(k, -1, -2)), 1.0 / math.sqrt(q.shape[-1]))
    weights = T.softmax(scores, axis=-1, mask=mask)
    return T.matmul(weights, v), weights


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    b, t, d = x.shape
    return T.swapaxes(T.reshape(x, (b, t, n_heads, d // n_heads)), 1, 2)


def _merge_heads(x: Tensor) -> Tensor:
    b, h, t, dh = x.shape
    return T.reshape(T.swapaxes(x, 1, 2), (b, t, h * dh))


def _batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 2:
        return T.reshape(x, (1,) + x.shape), True
    if x.ndim != 3:
        raise DimensionError(f"expected [t, d] or [B, t, d], got {x.shape}")
    return x, False


def multi_head_attention(x_q: Tensor, x_kv: Tensor, p: Scope, n_heads: int,
                         mask: np.ndarray | None = None) -> Tensor:
    """Project, attend per head, concatenate heads, project back."""
    d_model = p["wq"].shape[0]
    if x_q.shape[-1] != d_model or x_kv.shape[-1] != d_model:
        raise DimensionError(f"MHA expects width {d_model}, got {x_q.shape[-1]} and {x_kv.shape[-1]}")
    if d_model % n_heads:
        raise DimensionError(f"d_model={d_model} not divisible by n_heads={n_heads}")
    xq, squeeze = _batched(x_q)
    xkv, _ = _batched(x_kv)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.ndim == 2:
            mask = mask[None]
        mask = mask[:, None]  # broadcast over heads
    q = _split_heads(T.linear(xq, p["wq"], p["bq"]), n_heads)
    k = _split_heads(T.linear(xkv, p["wk"], p["bk"]), n_heads)
    v = _split_heads(T.linear(xkv, p["wv"], p["bv"]), n_heads)
    heads, _ = scaled_dot_attention(q, k, v, mask)
    out = T.linear(_merge_heads(heads), p["wo"], p["bo"])
    if squeeze:
        out = T.reshape(out, out.shape[1:])
    return out


def feed_forward(x: Tensor, p: Scope) -> Tensor:
    return T.linear(T.relu(T.linear(x, p["w1"], p["b1"])), p["w2"], p["b2"])


def add_norm(x: Tensor, sublayer_out: Tensor, p: Scope, ctx: RunContext) -> Tensor:
    """Post-norm residual: layer_norm(x + dropout(sublayer_out))."""
    return T.layer_norm(T.add(x, ctx.drop(sublayer_out)), p["g"], p["b"])


def encoder_block(x: Tensor, p: Scope, n_heads: int, mask: np.ndarray | None = None,
                  ctx: RunContext = EVAL) -> Tensor:
    x = add_norm(x, multi_head_attention(x, x, p.sub("attn"), n_heads, mask), p.sub("norm1"), ctx)
    return add_norm(x, feed_forward(x, p.sub("ffn")), p.sub("norm2"), ctx)


def positional_encoding(t: int, d: int, dtype=np.float64) -> np.ndarray:
    """Fixed sinusoidal encodings, [t, d]."""
    pos = np.arange(t)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle)).astype(dtype)
