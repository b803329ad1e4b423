"""Audio-visual fusion blocks: AV-concat, AV-align (one-way), AV-cross (two-way).

All three emit a single ``[.., t, d_model]`` stream.  The attentive variants
enhance one or both streams with a residual cross-modal attention and then
concatenate and project exactly like AV-concat.  No normalisation and no
dropout happen inside the block.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from . import tensor as T
from .attention import Scope, init_linear, init_mha, mha_param_count, multi_head_attention
from .errors import AlignmentError, ConfigError
from .tensor import Tensor


class FusionBlockKind(str, Enum):
    CONCAT = "concat"
    ALIGN = "align"
    CROSS = "cross"

    @classmethod
    def parse(cls, value) -> "FusionBlockKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            allowed = ", ".join(k.value for k in cls)
            raise ConfigError(f"block: {value!r} is not one of {allowed}") from None

    @property
    def label(self) -> str:
        return {"concat": "AV-concat", "align": "AV-align", "cross": "AV-cross"}[self.value]


def init_fusion(params: dict, prefix: str, kind: FusionBlockKind, d_model: int, rng,
                dtype=np.float64, with_fc: bool = True) -> None:
    if kind in (FusionBlockKind.ALIGN, FusionBlockKind.CROSS):
        init_mha(params, f"{prefix}.audio_attn", d_model, rng, dtype)
    if kind is FusionBlockKind.CROSS:
        init_mha(params, f"{prefix}.video_attn", d_model, rng, dtype)
    if with_fc:
        init_linear(params, f"{prefix}.fc", 2 * d_model, d_model, rng, dtype)


def fusion_param_count(kind: FusionBlockKind, d_model: int, with_fc: bool = True) -> int:
    n_mha = {FusionBlockKind.CONCAT: 0, FusionBlockKind.ALIGN: 1, FusionBlockKind.CROSS: 2}[kind]
    fc = 2 * d_model * d_model + d_model if with_fc else 0
    return n_mha * mha_param_count(d_model) + fc


def _check_aligned(a: Tensor, v: Tensor) -> None:
    if a.shape[:-1] != v.shape[:-1]:
        raise AlignmentError(f"audio {a.shape} and video {v.shape} are not time-aligned")


def project_concat(a: Tensor, v: Tensor, p: Scope) -> Tensor:
    return T.linear(T.concat_last_axis(a, v), p["fc.w"], p["fc.b"])


def enhance(a: Tensor, v: Tensor, kind: FusionBlockKind, p: Scope, n_heads: int,
            audio_mask: np.ndarray | None = None, video_mask: np.ndarray | None = None):
    """Residual cross-modal enhancement, before any concatenation.

    Each cross attention masks with the key-side modality's padding mask:
    audio queries attend over video keys with ``video_mask`` and vice versa.
    Returns ``(a_enh, v_enh)``; streams a kind does not enhance pass through.
    """
    _check_aligned(a, v)
    a_enh, v_enh = a, v
    if kind in (FusionBlockKind.ALIGN, FusionBlockKind.CROSS):
        a_enh = T.add(a, multi_head_attention(a, v, p.sub("audio_attn"), n_heads, video_mask))
    if kind is FusionBlockKind.CROSS:
        v_enh = T.add(v, multi_head_attention(v, a, p.sub("video_attn"), n_heads, audio_mask))
    return a_enh, v_enh


def av_concat(a: Tensor, v: Tensor, p: Scope) -> Tensor:
    _check_aligned(a, v)
    return project_concat(a, v, p)


def av_align(a: Tensor, v: Tensor, p: Scope, n_heads: int, video_mask=None) -> Tensor:
    a_enh, _ = enhance(a, v, FusionBlockKind.ALIGN, p, n_heads, video_mask=video_mask)
    return project_concat(a_enh, v, p)


def av_cross(a: Tensor, v: Tensor, p: Scope, n_heads: int, audio_mask=None, video_mask=None) -> Tensor:
    a_enh, v_enh = enhance(a, v, FusionBlockKind.CROSS, p, n_heads, audio_mask, video_mask)
    return project_concat(a_enh, v_enh, p)


def fuse(a: Tensor, v: Tensor, kind: FusionBlockKind, p: Scope, n_heads: int,
         audio_mask=None, video_mask=None) -> Tensor:
    """Dispatch to the block selected by ``kind``."""
    a_enh, v_enh = enhance(a, v, kind, p, n_heads, audio_mask, video_mask)
    return project_concat(a_enh, v_enh, p)
