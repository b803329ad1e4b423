"""Greedy and beam-search decoding.

The search routines work on a *step function*: given a list of prefixes (each
starting with sos) it returns next-token log-probabilities, one row per
prefix.  :func:`model_step_fn` builds one for a trained model and a fixed
encoder memory.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .errors import UsageError
from .model import AVSRModel
from .tensor import no_grad
from .vocab import EOS, PAD, SOS

StepFn = Callable[[list[list[int]]], np.ndarray]


@dataclass
class Hypothesis:
    tokens: list        # generated ids, without sos and eos
    score: float        # sum of per-step log-probabilities (eos included when finished)
    finished: bool


def _masked(logp: np.ndarray, banned: Sequence[int]) -> np.ndarray:
    if banned:
        logp = logp.copy()
        logp[..., list(banned)] = -np.inf
    return logp


def greedy_decode(step: StepFn, max_len: int, sos: int = SOS, eos: int = EOS,
                  banned: Sequence[int] = (PAD, SOS)) -> Hypothesis:
    if max_len < 1:
        raise UsageError("max_len must be >= 1")
    prefix, score = [sos], 0.0
    for _ in range(max_len):
        logp = _masked(step([prefix])[0], banned)
        tok = int(np.argmax(logp))
        score += float(logp[tok])
        if tok == eos:
            return Hypothesis(prefix[1:], score, True)
        prefix.append(tok)
    return Hypothesis(prefix[1:], score, False)


def beam_search(step: StepFn, width: int = 6, max_len: int = 20, sos: int = SOS, eos: int = EOS,
                banned: Sequence[int] = (PAD, SOS), length_norm: bool = False) -> Hypothesis:
    """Beam search with retiring finished hypotheses.

    At every step each live beam is expanded over the vocabulary and the
    ``width`` best expansions survive; those ending in eos retire to the
    finished pool.  Candidates are the finished hypotheses plus the live ones
    cut off at ``max_len``, and the greedy hypothesis is always among them, so
    a wider beam never scores below greedy decoding.  The result is the best
    candidate by total log-probability (or per-token average when
    ``length_norm``).  Ties go to the lower token id and the earlier beam,
    which makes ``width=1`` identical to greedy decoding.
    """
    if width < 1:
        raise UsageError("beam width must be >= 1")
    if max_len < 1:
        raise UsageError("max_len must be >= 1")

    def rank(h: Hypothesis) -> float:
        if not length_norm:
            return h.score
        return h.score / (len(h.tokens) + (1 if h.finished else 0) or 1)

    live = [Hypothesis([], 0.0, False)]
    finished: list[Hypothesis] = []
    for _ in range(max_len):
        logp = _masked(step([[sos] + h.tokens for h in live]), banned)
        cand = (np.array([h.score for h in live])[:, None] + logp).reshape(-1)
        order = np.argsort(-cand, kind="stable")[:width]
        vocab = logp.shape[1]
        new_live = []
        for flat in order:
            if not np.isfinite(cand[flat]):
                break
            b, tok = divmod(int(flat), vocab)
            parent = live[b]
            if tok == eos:
                finished.append(Hypothesis(parent.tokens, float(cand[flat]), True))
            else:
                new_live.append(Hypothesis(parent.tokens + [tok], float(cand[flat]), False))
        live = new_live
        if not live:
            break
        if finished and not length_norm and max(h.score for h in finished) >= max(h.score for h in live):
            # scores only decrease with length, so no live beam can overtake
            live = []
            break
    pool = finished + live
    if width > 1:
        pool.append(greedy_decode(step, max_len, sos, eos, banned))
    best = pool[0]
    for h in pool[1:]:
        if rank(h) > rank(best):
            best = h
    return best


def model_step_fn(model: AVSRModel, memories, memory_length: int | None = None) -> StepFn:
    """Step function over a single utterance's encoder memories ([1, t, d] each)."""
    memories = [m if m.ndim == 3 else T.reshape(m, (1,) + m.shape) for m in memories]

    def step(prefixes: list[list[int]]) -> np.ndarray:
        n = len(prefixes)
        ty = max(len(p) for p in prefixes)
        tokens = np.full((n, ty), PAD, dtype=np.int64)
        lengths = np.zeros(n, dtype=np.int64)
        for i, p in enumerate(prefixes):
            tokens[i, : len(p)] = p
            lengths[i] = len(p)
        mems = [T.Tensor(np.broadcast_to(m.data, (n,) + m.shape[1:])) for m in memories]
        mem_len = None if memory_length is None else np.full(n, memory_length)
        with no_grad():
            logits = model.decode_forward(mems, tokens, lengths, mem_len).data
        last = logits[np.arange(n), lengths - 1]
        z = last - last.max(axis=-1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))

    return step


def decode_features(model: AVSRModel, audio: np.ndarray, video: np.ndarray, width: int = 6,
                    max_len: int = 20, length_norm: bool = False) -> Hypothesis:
    """Encode one utterance ([t, d] features) and beam-decode it."""
    with no_grad():
        mems = model.encode(audio[None], video[None])
    step = model_step_fn(model, mems)
    if width == 1:
        return greedy_decode(step, max_len)
    return beam_search(step, width, max_len, length_norm=length_norm)
