"""Multi-condition training: curriculum ordering, LR schedule, Adam updates."""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .attention import RunContext
from .checkpoint import save_checkpoint
from .datapipe.corpus import CorpusSample
from .datapipe.features import FeaturePair, featurize
from .datapipe.noise import STANDARD_SNRS, SEEN_KINDS, Condition, NoiseKind, mix_at_snr, sample_training_condition, synth_noise
from .datapipe.storage import expected_frames
from .errors import ConfigError, NumericError, StateError
from .loss import label_smoothed_ce, smoothing_floor  # noqa: F401  (re-exported)
from .model import AVSRModel, Batch, collate
from .optim import AdamState, adam_step, clip_grad_norm
from .seeding import derive_rng
from .tensor import backward

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 10
    cl_epochs: int = 2
    lr_start: float = 1e-4
    lr_end: float = 5e-6
    lr_schedule: str = "loglinear"
    label_smoothing: float = 0.1
    dropout: float = 0.1
    batch_size: int = 8
    seed: int = 0
    snr_set: tuple = STANDARD_SNRS
    noise_kinds: tuple = tuple(k.value for k in SEEN_KINDS)
    grad_clip: float = 0.0
    bucket_window: int = 4

    def validate(self) -> list[str]:
        problems = []
        if self.epochs < 0:
            problems.append("epochs must be >= 0")
        if self.cl_epochs < 0:
            problems.append("cl_epochs must be >= 0")
        if self.lr_start <= 0 or self.lr_end <= 0:
            problems.append("learning rates must be positive")
        if self.lr_schedule not in ("loglinear", "linear"):
            problems.append(f"lr_schedule: {self.lr_schedule!r} is not one of loglinear, linear")
        if not 0.0 <= self.label_smoothing < 1.0:
            problems.append("label_smoothing must satisfy 0 <= eps < 1")
        if not 0.0 <= self.dropout < 1.0:
            problems.append("dropout must satisfy 0 <= p < 1")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if self.bucket_window < 1:
            problems.append("bucket_window must be >= 1")
        if self.grad_clip < 0:
            problems.append("grad_clip must be >= 0")
        for k in self.noise_kinds:
            try:
                if NoiseKind.parse(k).unseen:
                    problems.append(f"noise_kinds: {k!r} is the held-out unseen family and cannot be trained on")
            except ConfigError as exc:
                problems.extend(exc.problems)
        if self.noise_kinds and not self.snr_set:
            problems.append("snr_set must be nonempty when noise_kinds is set")
        return problems

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["snr_set"], d["noise_kinds"] = list(self.snr_set), list(self.noise_kinds)
        return d


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Per-epoch learning rate, decaying from lr_start at epoch 0 to lr_end at the last epoch."""
    if cfg.epochs <= 1:
        return cfg.lr_start
    frac = epoch / (cfg.epochs - 1)
    if cfg.lr_schedule == "linear":
        return cfg.lr_start + (cfg.lr_end - cfg.lr_start) * frac
    return cfg.lr_start * (cfg.lr_end / cfg.lr_start) ** frac


def curriculum_order(lengths, ids, epoch: int, cfg: TrainConfig, rng=None) -> list[int]:
    """Short-to-long during the curriculum epochs, a seeded shuffle afterwards."""
    n = len(lengths)
    if epoch < cfg.cl_epochs:
        return sorted(range(n), key=lambda i: (lengths[i], ids[i]))
    rng = derive_rng(cfg.seed, "shuffle", epoch) if rng is None else rng
    return [int(i) for i in rng.permutation(n)]


def make_batches(order: list[int], lengths, epoch: int, cfg: TrainConfig) -> list[list[int]]:
    """Chunk ``order`` into batches; after the curriculum, bucket by length first."""
    bs = cfg.batch_size
    if epoch < cfg.cl_epochs:
        return [order[i : i + bs] for i in range(0, len(order), bs)]
    window = bs * cfg.bucket_window
    batches = []
    for w in range(0, len(order), window):
        chunk = sorted(order[w : w + window], key=lambda i: lengths[i])
        batches.extend(chunk[i : i + bs] for i in range(0, len(chunk), bs))
    perm = derive_rng(cfg.seed, "batch-order", epoch).permutation(len(batches))
    return [batches[i] for i in perm]


@dataclass
class EpochMetrics:
    epoch: int
    lr: float
    mean_loss: float
    wall_seconds: float

    def line(self) -> str:
        return f"{self.epoch}\t{self.lr!r}\t{self.mean_loss!r}\t{self.wall_seconds:.3f}"


@dataclass
class TrainResult:
    model: AVSRModel
    metrics: list[EpochMetrics]
    state: AdamState
    conditions: list = field(default_factory=list)


def sample_frames(s: CorpusSample) -> int:
    return expected_frames(len(s.waveform), s.video.shape[0], s.waveform.sample_rate)


class ConditionedFeatures:
    """Featurises corpus samples under a drawn noise condition; clean features are cached."""

    def __init__(self, seed: int, n_mels: int = 80):
        self.seed = seed
        self.n_mels = n_mels
        self._clean: dict[str, FeaturePair] = {}

    def clean(self, s: CorpusSample) -> FeaturePair:
        fp = self._clean.get(s.id)
        if fp is None:
            fp = self._clean[s.id] = featurize(s.waveform, s.video, s.transcript, s.id, self.n_mels)
        return fp

    def noisy(self, s: CorpusSample, cond: Condition, *labels) -> FeaturePair:
        noise_seed = int(derive_rng(self.seed, "noise-seed", *labels, s.id).integers(2**62))
        noise = synth_noise(cond.kind, len(s.waveform) + s.waveform.sample_rate // 2, noise_seed,
                            s.waveform.sample_rate)
        mixed = mix_at_snr(s.waveform, noise, cond.snr_db, derive_rng(self.seed, "mix-offset", *labels, s.id))
        return featurize(mixed, s.video, s.transcript, s.id, self.n_mels)

    def get(self, s: CorpusSample, cond: Condition, *labels) -> FeaturePair:
        return self.clean(s) if cond.is_clean else self.noisy(s, cond, *labels)


def draw_condition(cfg: TrainConfig, epoch: int, sample_id: str) -> Condition:
    if not cfg.noise_kinds:
        return Condition()
    rng = derive_rng(cfg.seed, "condition", epoch, sample_id)
    return sample_training_condition(rng, cfg.snr_set, cfg.noise_kinds)


def batch_loss(model: AVSRModel, batch: Batch, cfg: TrainConfig, ctx: RunContext):
    return model.forward_loss(batch, cfg.label_smoothing, ctx)


def save_train_state(path, model: AVSRModel, state: AdamState, next_epoch: int) -> None:
    arrays = {f"p/{k}": v.data for k, v in model.params.items()}
    arrays.update({f"m/{k}": v for k, v in state.m.items()})
    arrays.update({f"v/{k}": v for k, v in state.v.items()})
    arrays.update({f"t/{k}": np.array(v) for k, v in state.t.items()})
    arrays["meta/step"] = np.array(state.step)
    arrays["meta/next_epoch"] = np.array(next_epoch)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_train_state(path, model: AVSRModel) -> tuple[AdamState, int]:
    with np.load(path) as z:
        state = AdamState(step=int(z["meta/step"]))
        for key in z.files:
            kind, _, name = key.partition("/")
            if kind == "p":
                if name not in model.params or model.params[name].shape != z[key].shape:
                    raise StateError(f"training state parameter {name} does not match the model")
                model.params[name].data = z[key].astype(model.dtype)
            elif kind == "m":
                state.m[name] = z[key]
            elif kind == "v":
                state.v[name] = z[key]
            elif kind == "t":
                state.t[name] = int(z[key])
        return state, int(z["meta/next_epoch"])


def train(
    corpus: list[CorpusSample],
    model: AVSRModel,
    cfg: TrainConfig,
    out_dir=None,
    resume: str | Path | None = None,
    on_epoch: Callable[[EpochMetrics], None] | None = None,
    stop_after: int | None = None,
) -> TrainResult:
    """Train ``model`` in place; writes metrics and checkpoints when ``out_dir`` is given.

    ``stop_after`` ends the run after that many epochs (counted from epoch 0)
    without writing ``model.avck``, as if the process had been interrupted; a
    later call with ``resume`` continues exactly where it stopped.
    """
    problems = cfg.validate()
    if problems:
        raise ConfigError(problems)
    if not corpus:
        raise ConfigError("training corpus is empty")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        if resume is None:
            (out / "metrics.tsv").write_text("", encoding="utf-8")
    state, start = AdamState(), 0
    if resume is not None:
        state, start = load_train_state(resume, model)
    feats = ConditionedFeatures(cfg.seed, n_mels=model.config.d_audio_in // 4)
    lengths = [sample_frames(s) for s in corpus]
    ids = [s.id for s in corpus]
    metrics: list[EpochMetrics] = []
    drawn: list[Condition] = []
    end = cfg.epochs if stop_after is None else min(cfg.epochs, stop_after)
    for epoch in range(start, end):
        t0 = time.perf_counter()
        lr = lr_at(epoch, cfg)
        order = curriculum_order(lengths, ids, epoch, cfg)
        total, n_tok = 0.0, 0
        for bi, idx in enumerate(make_batches(order, lengths, epoch, cfg)):
            items = []
            for i in idx:
                cond = draw_condition(cfg, epoch, ids[i])
                drawn.append(cond)
                items.append(feats.get(corpus[i], cond, "train", epoch).as_item())
            batch = collate(items)
            ctx = RunContext(True, cfg.dropout, derive_rng(cfg.seed, "dropout", epoch, bi))
            model.zero_grad()
            loss = batch_loss(model, batch, cfg, ctx)
            value = float(loss.data)
            if not math.isfinite(value):
                raise NumericError(
                    f"non-finite loss {value} at epoch {epoch}, batch {bi} (samples {batch.ids}); "
                    f"lr={lr:.3g}"
                )
            backward(loss)
            grads = {k: p.grad for k, p in model.params.items()}
            if cfg.grad_clip > 0:
                clip_grad_norm(grads, cfg.grad_clip)
            adam_step(model.params, grads, lr, state)
            ntok = int(batch.token_lengths.sum())
            total += value * ntok
            n_tok += ntok
        m = EpochMetrics(epoch, lr, total / n_tok, time.perf_counter() - t0)
        metrics.append(m)
        log.info("epoch %d lr %.3g loss %.5f (%.1fs)", epoch, lr, m.mean_loss, m.wall_seconds)
        if on_epoch is not None:
            on_epoch(m)
        if out is not None:
            with open(out / "metrics.tsv", "a", encoding="utf-8") as fh:
                fh.write(m.line() + "\n")
            save_checkpoint(out / "checkpoints" / f"epoch_{epoch:03d}.avck", model.params,
                            {**model.header(), "epoch": epoch})
            save_train_state(out / "train_state.npz", model, state, epoch + 1)
    if out is not None and end == cfg.epochs:
        save_checkpoint(out / "model.avck", model.params, {**model.header(), "epoch": cfg.epochs - 1})
        if not (out / "train_state.npz").exists():
            save_train_state(out / "train_state.npz", model, state, cfg.epochs)
    return TrainResult(model, metrics, state, drawn)
