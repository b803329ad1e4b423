"""Synthetic paired audio-visual corpus.

Each symbol is spoken as a 160 ms pair of tones and "seen" as a fixed random
video embedding repeated over the four 40 ms video frames that span it.  The
tone table and the embedding codebook depend only on ``codebook_seed``, so
separately generated training and test corpora share them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import UsageError
from ..seeding import derive_rng
from ..vocab import Vocab
from .features import SAMPLE_RATE, Waveform

TOKEN_MS = 160
VIDEO_FPS = 25
LOW_TONES = (300.0, 500.0, 700.0, 900.0, 1100.0, 1300.0)
HIGH_TONES = (1700.0, 2600.0, 3500.0, 4400.0, 5300.0, 6200.0)
MAX_SYMBOLS = len(LOW_TONES) * len(HIGH_TONES)


@dataclass
class CorpusSample:
    id: str
    waveform: Waveform
    video: np.ndarray   # [4 * len(transcript), d_video]
    transcript: list    # symbol ids (no specials)


def token_tones(symbol_index: int) -> tuple[float, float]:
    """Distinct (low, high) frequency pair for the ``symbol_index``-th symbol."""
    if not 0 <= symbol_index < MAX_SYMBOLS:
        raise UsageError(f"at most {MAX_SYMBOLS} symbols have tone signatures")
    return LOW_TONES[symbol_index % len(LOW_TONES)], HIGH_TONES[symbol_index // len(LOW_TONES)]


def video_codebook(n_symbols: int, d_video: int, codebook_seed: int = 0) -> np.ndarray:
    return derive_rng(codebook_seed, "video-codebook", d_video).standard_normal((n_symbols, d_video))


def frames_per_token(sample_rate: int = SAMPLE_RATE) -> int:
    return TOKEN_MS * VIDEO_FPS // 1000


def render_audio(symbols, rng, sample_rate: int = SAMPLE_RATE, channel_noise: float = 0.003) -> np.ndarray:
    n_tok = sample_rate * TOKEN_MS // 1000
    ramp = int(0.005 * sample_rate)
    env = np.ones(n_tok)
    env[:ramp] = env[-ramp:][::-1] = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
    t = np.arange(n_tok) / sample_rate
    gain = rng.uniform(0.6, 1.0)
    pieces = []
    for s in symbols:
        lo, hi = token_tones(s)
        phase = rng.uniform(0, 2 * np.pi, size=2)
        tone = 0.5 * np.sin(2 * np.pi * lo * t + phase[0]) + 0.35 * np.sin(2 * np.pi * hi * t + phase[1])
        pieces.append(gain * env * tone)
    audio = np.concatenate(pieces)
    return audio + channel_noise * rng.standard_normal(len(audio))


def render_video(symbols, codebook: np.ndarray, rng, jitter: float = 1.0, occlusion: float = 0.0) -> np.ndarray:
    fpt = frames_per_token()
    rows = []
    for s in symbols:
        code = codebook[s] if rng.random() >= occlusion else np.zeros(codebook.shape[1])
        rows.append(np.repeat(code[None, :], fpt, axis=0))
    video = np.concatenate(rows)
    return video + jitter * rng.standard_normal(video.shape)


def synth_sample(index: int, vocab: Vocab, max_len: int, seed: int, min_len: int = 2,
                 d_video: int = 512, jitter: float = 1.0, occlusion: float = 0.0,
                 codebook_seed: int = 0, sample_rate: int = SAMPLE_RATE,
                 codebook: np.ndarray | None = None) -> CorpusSample:
    rng = derive_rng(seed, "corpus-sample", index)
    n = int(rng.integers(min_len, max_len + 1))
    symbols = [int(s) for s in rng.integers(0, vocab.n_symbols, size=n)]
    if codebook is None:
        codebook = video_codebook(vocab.n_symbols, d_video, codebook_seed)
    audio = render_audio(symbols, rng, sample_rate)
    video = render_video(symbols, codebook, rng, jitter, occlusion)
    transcript = [vocab.token_ids()[s] for s in symbols]
    return CorpusSample(f"s{index:05d}", Waveform(audio, sample_rate), video, transcript)


def synth_av_corpus(n_samples: int, vocab: Vocab, max_len: int, seed: int, min_len: int = 2,
                    d_video: int = 512, jitter: float = 1.0, occlusion: float = 0.0,
                    codebook_seed: int = 0, sample_rate: int = SAMPLE_RATE) -> list[CorpusSample]:
    """``n_samples`` random transcripts with matching tone audio and codebook video.

    Sample ``i`` depends only on (seed, i), so any subset can be regenerated
    independently.
    """
    if vocab.n_symbols < 2:
        raise UsageError("vocab needs at least two symbols")
    if vocab.n_symbols > MAX_SYMBOLS:
        raise UsageError(f"vocab has {vocab.n_symbols} symbols; at most {MAX_SYMBOLS} supported")
    if not 1 <= min_len <= max_len:
        raise UsageError(f"need 1 <= min_len <= max_len, got {min_len}, {max_len}")
    codebook = video_codebook(vocab.n_symbols, d_video, codebook_seed)
    return [
        synth_sample(i, vocab, max_len, seed, min_len, d_video, jitter, occlusion,
                     codebook_seed, sample_rate, codebook)
        for i in range(n_samples)
    ]
