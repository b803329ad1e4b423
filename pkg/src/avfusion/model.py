"""The nine {Early, Middle, Late} x {concat, align, cross} model variants.

Parameters live in one flat ``{layer.path: Tensor}`` dict.  Layer paths::

    audio_in.{w,b}  video_in.{w,b}          input projections
    enc.audio.{i}.*  enc.video.{i}.*         per-modality encoder blocks
    fusion.{audio_attn,video_attn,fc}.*      fusion block
    enc.shared.{i}.*                         post-fusion blocks (Early only)
    dec.embed                                token embedding
    dec.{i}.{self_attn,norm1,cross_attn,norm2,ffn,norm3}.*
    dec.{i}.{cross_attn_a,cross_attn_v}.*    dual attention (Late)
    dec.{i}.combine.{w,b}                    Late concat combiner, if chosen
    dec.out.{w,b}                            vocabulary projection

Encoder depths: Early runs ``n_premix_blocks`` per modality, fuses, then
``n_shared_blocks`` on the fused stream.  Middle and Late run
``separate_depth(stage)`` blocks per modality.  Unless ``n_separate_blocks``
pins it, that depth is chosen so the stage's parameter count lands closest to
Early's (ties go to the deeper stack).  Late needs fewer encoder blocks than
Middle once the decoder is large, because every dual-attention decoder block
carries an extra cross-attention.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import tensor as T
from .attention import (
    EVAL,
    AttentionConfig,
    RunContext,
    Scope,
    add_norm,
    encoder_block,
    feed_forward,
    init_encoder_block,
    init_ffn,
    init_layer_norm,
    init_linear,
    init_mha,
    make_causal_mask,
    make_padding_mask,
    mha_param_count,
    multi_head_attention,
    positional_encoding,
    xavier,
)
from .errors import AlignmentError, ConfigError, UsageError
from .fusion import FusionBlockKind, enhance, init_fusion, project_concat
from .loss import label_smoothed_ce
from .seeding import derive_rng
from .tensor import Tensor
from .vocab import EOS, PAD, SOS


class FusionStage(str, Enum):
    EARLY = "early"
    MIDDLE = "middle"
    LATE = "late"

    @classmethod
    def parse(cls, value) -> "FusionStage":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            allowed = ", ".join(s.value for s in cls)
            raise ConfigError(f"stage: {value!r} is not one of {allowed}") from None

    @property
    def label(self) -> str:
        return f"{self.value.capitalize()}-fusion"


@dataclass(frozen=True)
class FusionSpec:
    stage: FusionStage
    block: FusionBlockKind

    def __post_init__(self):
        object.__setattr__(self, "stage", FusionStage.parse(self.stage))
        object.__setattr__(self, "block", FusionBlockKind.parse(self.block))

    @classmethod
    def all(cls) -> list["FusionSpec"]:
        """Table order: Late, Middle, Early; concat, align, cross within each."""
        stages = (FusionStage.LATE, FusionStage.MIDDLE, FusionStage.EARLY)
        return [cls(s, b) for s in stages for b in FusionBlockKind]

    def to_dict(self) -> dict:
        return {"stage": self.stage.value, "block": self.block.value}

    def __str__(self) -> str:
        return f"{self.stage.value}/{self.block.value}"


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 256
    n_premix_blocks: int = 1
    n_shared_blocks: int = 2
    n_separate_blocks: int | None = None
    n_decoder_blocks: int = 2
    vocab_size: int = 11
    d_audio_in: int = 320
    d_video_in: int = 512
    late_combiner: str = "sum"
    late_audio_only: bool = False
    audio_only: bool = False
    ln_eps: float = 1e-5

    def __post_init__(self):
        problems = []
        try:
            AttentionConfig(self.d_model, self.n_heads, self.d_ff)
        except ConfigError as exc:
            problems.extend(exc.problems)
        for name in ("n_premix_blocks", "n_shared_blocks"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be >= 0")
        if self.n_separate_blocks is not None and self.n_separate_blocks < 0:
            problems.append("n_separate_blocks must be >= 0")
        if self.n_decoder_blocks < 1:
            problems.append("n_decoder_blocks must be >= 1")
        if self.vocab_size < 4:
            problems.append("vocab_size must cover pad/sos/eos and at least one symbol")
        if self.d_audio_in < 1 or self.d_video_in < 1:
            problems.append("input widths must be positive")
        if self.late_combiner not in ("sum", "concat"):
            problems.append(f"late_combiner: {self.late_combiner!r} is not one of sum, concat")
        if problems:
            raise ConfigError(problems)

    @property
    def attention(self) -> AttentionConfig:
        return AttentionConfig(self.d_model, self.n_heads, self.d_ff)

    def encoder_block_params(self) -> int:
        d, ff = self.d_model, self.d_ff
        return mha_param_count(d) + (d * ff + ff) + (ff * d + d) + 4 * d

    def separate_depth(self, stage) -> int:
        """Per-modality encoder depth for Middle/Late (parity-driven unless pinned)."""
        stage = FusionStage.parse(stage)
        if stage is FusionStage.EARLY:
            return self.n_premix_blocks
        if self.n_separate_blocks is not None:
            return self.n_separate_blocks
        d, block = self.d_model, self.encoder_block_params()
        early = (2 * self.n_premix_blocks + self.n_shared_blocks) * block
        extra = 0
        if stage is FusionStage.LATE and not self.late_audio_only:
            # dual attention adds one cross-MHA (plus combiner) per decoder block; Late has no fusion FC
            per_dec = mha_param_count(d) + (2 * d * d + d if self.late_combiner == "concat" else 0)
            extra = self.n_decoder_blocks * per_dec - (2 * d * d + d)
        best = None
        for depth in range(2 * self.n_premix_blocks + self.n_shared_blocks + 1):
            gap = abs(2 * depth * block + extra - early)
            if best is None or gap <= best[0]:
                best = (gap, depth)
        return best[1]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Batch:
    audio: np.ndarray          # [B, t, d_audio_in]
    video: np.ndarray          # [B, t, d_video_in]
    frame_lengths: np.ndarray  # [B]
    tokens_in: np.ndarray      # [B, ty]  sos + transcript
    tokens_out: np.ndarray     # [B, ty]  transcript + eos
    token_lengths: np.ndarray  # [B]
    ids: list = field(default_factory=list)

    @property
    def size(self) -> int:
        return len(self.frame_lengths)


def collate(items, pad_frames: int = 0, pad_tokens: int = 0) -> Batch:
    """Pad ``(audio [t,da], video [t,dv], transcript ids[, id])`` items into a Batch."""
    items = list(items)
    if not items:
        raise UsageError("cannot collate an empty batch")
    for it in items:
        if it[0].shape[0] != it[1].shape[0]:
            raise AlignmentError(f"audio has {it[0].shape[0]} frames, video {it[1].shape[0]}")
        if len(it[2]) == 0:
            raise UsageError("empty transcript")
    b = len(items)
    t = max(it[0].shape[0] for it in items) + pad_frames
    ty = max(len(it[2]) for it in items) + 1 + pad_tokens
    da, dv = items[0][0].shape[1], items[0][1].shape[1]
    audio = np.zeros((b, t, da))
    video = np.zeros((b, t, dv))
    tin = np.full((b, ty), PAD, dtype=np.int64)
    tout = np.full((b, ty), PAD, dtype=np.int64)
    flen = np.zeros(b, dtype=np.int64)
    tlen = np.zeros(b, dtype=np.int64)
    ids = []
    for i, it in enumerate(items):
        n = it[0].shape[0]
        audio[i, :n], video[i, :n], flen[i] = it[0], it[1], n
        y = list(it[2])
        tin[i, : len(y) + 1] = [SOS] + y
        tout[i, : len(y) + 1] = y + [EOS]
        tlen[i] = len(y) + 1
        ids.append(it[3] if len(it) > 3 else str(i))
    return Batch(audio, video, flen, tin, tout, tlen, ids)


def init_params(spec: FusionSpec, cfg: ModelConfig, seed: int = 0, dtype=np.float64) -> dict:
    """Xavier-uniform weights, zero biases, unit layer-norm gains."""
    rng = derive_rng(seed, "init", spec.stage.value, spec.block.value, cfg.audio_only)
    p: dict[str, Tensor] = {}
    d, att = cfg.d_model, cfg.attention
    init_linear(p, "audio_in", cfg.d_audio_in, d, rng, dtype)
    if cfg.audio_only:
        for i in range(cfg.n_premix_blocks + cfg.n_shared_blocks):
            init_encoder_block(p, f"enc.audio.{i}", att, rng, dtype)
    else:
        init_linear(p, "video_in", cfg.d_video_in, d, rng, dtype)
        depth = cfg.separate_depth(spec.stage)
        for mod in ("audio", "video"):
            for i in range(depth):
                init_encoder_block(p, f"enc.{mod}.{i}", att, rng, dtype)
        init_fusion(p, "fusion", spec.block, d, rng, dtype, with_fc=spec.stage is not FusionStage.LATE)
        if spec.stage is FusionStage.EARLY:
            for i in range(cfg.n_shared_blocks):
                init_encoder_block(p, f"enc.shared.{i}", att, rng, dtype)
    p["dec.embed"] = Tensor(xavier(rng, cfg.vocab_size, d, dtype), requires_grad=True)
    for i in range(cfg.n_decoder_blocks):
        pre = f"dec.{i}"
        init_mha(p, f"{pre}.self_attn", d, rng, dtype)
        init_layer_norm(p, f"{pre}.norm1", d, dtype)
        if _dual_decoder(spec, cfg):
            init_mha(p, f"{pre}.cross_attn_a", d, rng, dtype)
            init_mha(p, f"{pre}.cross_attn_v", d, rng, dtype)
            if cfg.late_combiner == "concat":
                init_linear(p, f"{pre}.combine", 2 * d, d, rng, dtype)
        else:
            init_mha(p, f"{pre}.cross_attn", d, rng, dtype)
        init_layer_norm(p, f"{pre}.norm2", d, dtype)
        init_ffn(p, f"{pre}.ffn", d, cfg.d_ff, rng, dtype)
        init_layer_norm(p, f"{pre}.norm3", d, dtype)
    init_linear(p, "dec.out", d, cfg.vocab_size, rng, dtype)
    return p


def _dual_decoder(spec: FusionSpec, cfg: ModelConfig) -> bool:
    return spec.stage is FusionStage.LATE and not cfg.late_audio_only and not cfg.audio_only


def count_params(params: dict) -> int:
    return int(sum(t.data.size for t in params.values()))


@dataclass
class AVSRModel:
    spec: FusionSpec
    config: ModelConfig
    params: dict

    @classmethod
    def create(cls, spec: FusionSpec, cfg: ModelConfig, seed: int = 0, dtype=np.float64) -> "AVSRModel":
        return cls(spec, cfg, init_params(spec, cfg, seed, dtype))

    @property
    def dtype(self):
        return self.params["dec.out.w"].dtype

    @property
    def n_heads(self) -> int:
        return self.config.n_heads

    def scope(self, prefix: str = "") -> Scope:
        return Scope(self.params, prefix)

    def header(self) -> dict:
        return {"spec": self.spec.to_dict(), "model": self.config.to_dict()}

    def parameters(self) -> dict:
        return self.params

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    # -- encoders --------------------------------------------------------

    def _inputs(self, audio, video, lengths):
        audio = np.asarray(audio, dtype=self.dtype)
        video = np.asarray(video, dtype=self.dtype)
        if audio.shape[:-1] != video.shape[:-1]:
            raise AlignmentError(f"audio {audio.shape} and video {video.shape} differ in time")
        t = audio.shape[-2]
        pe = positional_encoding(t, self.config.d_model, self.dtype)
        p = self.scope()
        a = T.add(T.linear(Tensor(audio), p["audio_in.w"], p["audio_in.b"]), pe)
        v = T.add(T.linear(Tensor(video), p["video_in.w"], p["video_in.b"]), pe)
        return a, v, self._self_mask(lengths, t)

    @staticmethod
    def _self_mask(lengths, t):
        if lengths is None:
            return None
        return make_padding_mask(lengths, t)

    def _stack(self, x, prefix, depth, mask, ctx):
        for i in range(depth):
            x = encoder_block(x, self.scope(f"{prefix}.{i}"), self.n_heads, mask, ctx)
        return x

    def encode_early(self, audio, video, lengths=None, ctx: RunContext = EVAL) -> Tensor:
        a, v, mask = self._inputs(audio, video, lengths)
        a = self._stack(a, "enc.audio", self.config.n_premix_blocks, mask, ctx)
        v = self._stack(v, "enc.video", self.config.n_premix_blocks, mask, ctx)
        a_enh, v_enh = enhance(a, v, self.spec.block, self.scope("fusion"), self.n_heads, mask, mask)
        fused = project_concat(a_enh, v_enh, self.scope("fusion"))
        return self._stack(fused, "enc.shared", self.config.n_shared_blocks, mask, ctx)

    def encode_middle(self, audio, video, lengths=None, ctx: RunContext = EVAL) -> Tensor:
        a, v, mask = self._inputs(audio, video, lengths)
        depth = self.config.separate_depth(self.spec.stage)
        a = self._stack(a, "enc.audio", depth, mask, ctx)
        v = self._stack(v, "enc.video", depth, mask, ctx)
        a_enh, v_enh = enhance(a, v, self.spec.block, self.scope("fusion"), self.n_heads, mask, mask)
        return project_concat(a_enh, v_enh, self.scope("fusion"))

    def encode_late(self, audio, video, lengths=None, ctx: RunContext = EVAL):
        a, v, mask = self._inputs(audio, video, lengths)
        depth = self.config.separate_depth(self.spec.stage)
        a = self._stack(a, "enc.audio", depth, mask, ctx)
        v = self._stack(v, "enc.video", depth, mask, ctx)
        return enhance(a, v, self.spec.block, self.scope("fusion"), self.n_heads, mask, mask)

    def encode_audio_only(self, audio, lengths=None, ctx: RunContext = EVAL) -> Tensor:
        audio = np.asarray(audio, dtype=self.dtype)
        t = audio.shape[-2]
        p = self.scope()
        a = T.add(T.linear(Tensor(audio), p["audio_in.w"], p["audio_in.b"]),
                  positional_encoding(t, self.config.d_model, self.dtype))
        depth = self.config.n_premix_blocks + self.config.n_shared_blocks
        return self._stack(a, "enc.audio", depth, self._self_mask(lengths, t), ctx)

    def encode(self, audio, video, lengths=None, ctx: RunContext = EVAL) -> list[Tensor]:
        """Decoder memories: one for Early/Middle/audio-only, one or two for Late."""
        if self.config.audio_only:
            return [self.encode_audio_only(audio, lengths, ctx)]
        if self.spec.stage is FusionStage.EARLY:
            return [self.encode_early(audio, video, lengths, ctx)]
        if self.spec.stage is FusionStage.MIDDLE:
            return [self.encode_middle(audio, video, lengths, ctx)]
        mem_a, mem_v = self.encode_late(audio, video, lengths, ctx)
        return [mem_a] if self.config.late_audio_only else [mem_a, mem_v]

    # -- decoder ---------------------------------------------------------

    def embed_targets(self, tokens) -> Tensor:
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.shape[-1] == 0:
            raise UsageError("empty target sequence")
        pe = positional_encoding(tokens.shape[-1], self.config.d_model, self.dtype)
        return T.add(T.embedding(self.params["dec.embed"], tokens), pe)

    def decode_embedded(self, y: Tensor, memories: list[Tensor], token_lengths=None,
                        memory_lengths=None, ctx: RunContext = EVAL) -> Tensor:
        ty = y.shape[-2]
        self_mask = make_causal_mask(ty)
        if token_lengths is not None:
            self_mask = self_mask[None] & make_padding_mask(token_lengths, ty)
        mem_mask = None
        if memory_lengths is not None:
            mem_mask = make_padding_mask(memory_lengths, memories[0].shape[-2], query_len=ty)
        h = self.n_heads
        for i in range(self.config.n_decoder_blocks):
            p = self.scope(f"dec.{i}")
            y = add_norm(y, multi_head_attention(y, y, p.sub("self_attn"), h, self_mask), p.sub("norm1"), ctx)
            if len(memories) == 2:
                ca = multi_head_attention(y, memories[0], p.sub("cross_attn_a"), h, mem_mask)
                cv = multi_head_attention(y, memories[1], p.sub("cross_attn_v"), h, mem_mask)
                if self.config.late_combiner == "concat":
                    c = T.linear(T.concat_last_axis(ca, cv), p["combine.w"], p["combine.b"])
                else:
                    c = T.add(ca, cv)
            else:
                c = multi_head_attention(y, memories[0], p.sub("cross_attn"), h, mem_mask)
            y = add_norm(y, c, p.sub("norm2"), ctx)
            y = add_norm(y, feed_forward(y, p.sub("ffn")), p.sub("norm3"), ctx)
        return T.linear(y, self.params["dec.out.w"], self.params["dec.out.b"])

    def decode_forward(self, memories, tokens, token_lengths=None, memory_lengths=None,
                       ctx: RunContext = EVAL) -> Tensor:
        """Teacher-forced logits [.., t_y, vocab] for ``tokens`` (starting with sos)."""
        if isinstance(memories, Tensor):
            memories = [memories]
        return self.decode_embedded(self.embed_targets(tokens), list(memories), token_lengths,
                                    memory_lengths, ctx)

    def logits(self, batch: Batch, ctx: RunContext = EVAL) -> Tensor:
        mems = self.encode(batch.audio, batch.video, batch.frame_lengths, ctx)
        return self.decode_forward(mems, batch.tokens_in, batch.token_lengths, batch.frame_lengths, ctx)

    def forward_loss(self, batch: Batch, label_smoothing: float = 0.1, ctx: RunContext = EVAL) -> Tensor:
        """Mean label-smoothed cross-entropy over real (non-pad) target positions."""
        logits = self.logits(batch, ctx)
        valid = np.arange(batch.tokens_out.shape[1])[None, :] < batch.token_lengths[:, None]
        return label_smoothed_ce(logits, batch.tokens_out, label_smoothing, valid)


def load_model(header: dict, tensors: dict, dtype=np.float64) -> AVSRModel:
    spec = FusionSpec(**header["spec"])
    cfg = ModelConfig.from_dict(header["model"])
    expected = init_params(spec, cfg, 0, dtype)
    if set(expected) != set(tensors):
        missing = sorted(set(expected) - set(tensors))
        extra = sorted(set(tensors) - set(expected))
        raise ConfigError(f"checkpoint parameters do not match config (missing {missing[:3]}, extra {extra[:3]})")
    params = {}
    for name, ref in expected.items():
        arr = np.asarray(tensors[name])
        if arr.shape != ref.shape:
            raise ConfigError(f"{name}: checkpoint shape {arr.shape} != expected {ref.shape}")
        params[name] = Tensor(arr.astype(dtype), requires_grad=True)
    return AVSRModel(spec, cfg, params)
