"""Flat ``key = value`` experiment configuration.

Lines are ``key = value``; ``#`` starts a comment; list values are
comma-separated.  Unknown keys are rejected.  ``--set key=value`` on the
command line overrides file values.  See ``configs/desk.cfg`` for a commented
example.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datapipe.noise import STANDARD_SNRS, NoiseKind
from .errors import ConfigError
from .fusion import FusionBlockKind
from .model import FusionSpec, FusionStage, ModelConfig
from .seeding import derive_rng
from .trainer import TrainConfig
from .vocab import Vocab


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_int(s: str):
    return None if s.strip().lower() in ("", "auto", "none") else int(s)


def _int_list(s: str) -> list[int]:
    return [int(x) for x in s.split(",") if x.strip()]


def _str_list(s: str) -> list[str]:
    return [x.strip() for x in s.split(",") if x.strip()]


def _fmt(v) -> str:
    if v is None:
        return "auto"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _f(default, parse, doc=""):
    if isinstance(default, list):
        return field(default_factory=lambda d=default: list(d), metadata={"parse": parse, "doc": doc})
    return field(default=default, metadata={"parse": parse, "doc": doc})


@dataclass
class ExperimentConfig:
    # run
    seed: int = _f(0, int, "root seed; every random stream is derived from it")
    out_dir: str = _f("runs/default", str, "output directory")
    dtype: str = _f("float64", str, "float64 | float32")
    threads: int = _f(1, int, "worker threads for evaluation cells")
    # model
    stage: str = _f("early", str, "early | middle | late")
    block: str = _f("align", str, "concat | align | cross")
    audio_only: bool = _f(False, _bool, "audio-only ablation (ignores video)")
    d_model: int = _f(64, int)
    n_heads: int = _f(4, int)
    d_ff: int = _f(256, int)
    n_premix_blocks: int = _f(1, int)
    n_shared_blocks: int = _f(2, int)
    n_separate_blocks: object = _f(None, _opt_int, "Middle/Late per-modality depth; auto = parity rule")
    n_decoder_blocks: int = _f(2, int)
    late_combiner: str = _f("sum", str, "sum | concat")
    late_audio_only: bool = _f(False, _bool)
    alphabet: str = _f("abcdefgh", str)
    n_mels: int = _f(80, int)
    d_video_in: int = _f(512, int)
    # training
    epochs: int = _f(30, int)
    cl_epochs: int = _f(2, int)
    lr_start: float = _f(1e-3, float)
    lr_end: float = _f(5e-5, float)
    lr_schedule: str = _f("loglinear", str)
    label_smoothing: float = _f(0.1, float)
    dropout: float = _f(0.1, float)
    batch_size: int = _f(4, int)
    snr_set: list = _f(list(STANDARD_SNRS), _int_list)
    noise_kinds: list = _f(["white", "pink", "babble"], _str_list)
    grad_clip: float = _f(0.0, float)
    bucket_window: int = _f(4, int)
    # corpus
    corpus_dir: str = _f("data/train", str)
    test_corpus_dir: str = _f("data/test", str)
    n_samples: int = _f(32, int)
    min_len: int = _f(2, int)
    max_len: int = _f(6, int)
    video_jitter: float = _f(1.0, float)
    occlusion: float = _f(0.0, float)
    codebook_seed: int = _f(0, int)
    # evaluation
    eval_snrs: list = _f(list(STANDARD_SNRS), _int_list)
    eval_kinds: list = _f(["babble", "hum"], _str_list)
    eval_clean: bool = _f(True, _bool)
    beam_width: int = _f(6, int)
    length_norm: bool = _f(False, _bool)
    checkpoint: str = _f("", str)

    # -- derived objects -------------------------------------------------

    @property
    def vocab(self) -> Vocab:
        return Vocab(self.alphabet)

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def fusion_spec(self) -> FusionSpec:
        return FusionSpec(self.stage, self.block)

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            d_model=self.d_model, n_heads=self.n_heads, d_ff=self.d_ff,
            n_premix_blocks=self.n_premix_blocks, n_shared_blocks=self.n_shared_blocks,
            n_separate_blocks=self.n_separate_blocks, n_decoder_blocks=self.n_decoder_blocks,
            vocab_size=Vocab(self.alphabet).size, d_audio_in=4 * self.n_mels, d_video_in=self.d_video_in,
            late_combiner=self.late_combiner, late_audio_only=self.late_audio_only, audio_only=self.audio_only,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, cl_epochs=self.cl_epochs, lr_start=self.lr_start, lr_end=self.lr_end,
            lr_schedule=self.lr_schedule, label_smoothing=self.label_smoothing, dropout=self.dropout,
            batch_size=self.batch_size, seed=int(derive_rng(self.seed, "train").integers(2**62)),
            snr_set=tuple(self.snr_set), noise_kinds=tuple(self.noise_kinds), grad_clip=self.grad_clip,
            bucket_window=self.bucket_window,
        )

    def model_seed(self) -> int:
        return int(derive_rng(self.seed, "model").integers(2**62))

    def corpus_seed(self, split: str) -> int:
        return int(derive_rng(self.seed, "corpus", split).integers(2**62))

    # -- validation and serialisation --------------------------------------

    def validate(self) -> list[str]:
        problems = []
        for name, kind in (("stage", FusionStage), ("block", FusionBlockKind)):
            try:
                kind.parse(getattr(self, name))
            except ConfigError as exc:
                problems.extend(exc.problems)
        if self.dtype not in ("float64", "float32"):
            problems.append(f"dtype: {self.dtype!r} is not one of float64, float32")
        if self.threads < 1:
            problems.append("threads must be >= 1")
        try:
            Vocab(self.alphabet)
        except ConfigError as exc:
            problems.extend(exc.problems)
        else:
            try:
                self.model_config()
            except ConfigError as exc:
                problems.extend(exc.problems)
        if self.n_mels < 1:
            problems.append("n_mels must be >= 1")
        problems.extend(self.train_config().validate())
        if self.n_samples < 1:
            problems.append("n_samples must be >= 1")
        if not 1 <= self.min_len <= self.max_len:
            problems.append("need 1 <= min_len <= max_len")
        if not 0.0 <= self.occlusion <= 1.0:
            problems.append("occlusion must lie in [0, 1]")
        for k in self.eval_kinds:
            try:
                NoiseKind.parse(k)
            except ConfigError as exc:
                problems.extend(exc.problems)
        if self.beam_width < 1:
            problems.append("beam_width must be >= 1")
        return problems

    def check(self) -> "ExperimentConfig":
        problems = self.validate()
        if problems:
            raise ConfigError(problems)
        return self

    def dumps(self) -> str:
        lines = ["# resolved experiment configuration"]
        for f in dataclasses.fields(self):
            lines.append(f"{f.name} = {_fmt(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.dumps(), encoding="utf-8")


FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def parse_pairs(pairs, source: str = "") -> dict:
    """Parse ``key=value`` strings; collects every problem before raising."""
    values, problems = {}, []
    for lineno, raw in pairs:
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}: " if source else ""
        if "=" not in line:
            problems.append(f"{where}expected key = value, got {raw.strip()!r}")
            continue
        key, _, value = (s.strip() for s in line.partition("="))
        if key not in FIELDS:
            problems.append(f"{where}unknown config key {key!r}")
            continue
        try:
            values[key] = FIELDS[key].metadata["parse"](value)
        except ValueError as exc:
            problems.append(f"{where}{key}: {exc}")
    if problems:
        raise ConfigError(problems)
    return values


def load_config(path=None, overrides=()) -> ExperimentConfig:
    values, problems = {}, []
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        try:
            values.update(parse_pairs(enumerate(text.splitlines(), 1), str(path)))
        except ConfigError as exc:
            problems.extend(exc.problems)
    try:
        values.update(parse_pairs(((f"--set {i}", o) for i, o in enumerate(overrides, 1))))
    except ConfigError as exc:
        problems.extend(exc.problems)
    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(**values)
