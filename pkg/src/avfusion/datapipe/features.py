"""Log-mel filterbank features, frame grouping and modality alignment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import LengthError, SignalError

SAMPLE_RATE = 16000
N_MELS = 80
WIN_MS = 25.0
HOP_MS = 10.0
GROUP_ORDER = 4
LOG_FLOOR = 1e-10


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise SignalError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise SignalError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class FeaturePair:
    audio: np.ndarray       # [t, n_mels * order]
    video: np.ndarray       # [t, d_video]
    transcript: list
    id: str = ""

    def __post_init__(self):
        if self.audio.shape[0] != self.video.shape[0]:
            raise LengthError(f"{self.id}: audio has {self.audio.shape[0]} frames, video {self.video.shape[0]}")

    @property
    def n_frames(self) -> int:
        return self.audio.shape[0]

    def as_item(self):
        return self.audio, self.video, self.transcript, self.id


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(n_mels: int, f_min: float, f_max: float) -> np.ndarray:
    """Centre frequency (Hz) of each triangular filter."""
    return mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))[1:-1]


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int, f_min: float = 0.0,
                   f_max: float | None = None) -> np.ndarray:
    """[n_mels, n_fft // 2 + 1] triangular filters, unit peak, HTK mel scale."""
    f_max = sample_rate / 2 if f_max is None else f_max
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    bins = np.fft.rfftfreq(n_fft, 1.0 / sample_rate)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (bins[None, :] - lo) / (mid - lo)
    down = (hi - bins[None, :]) / (hi - mid)
    return np.maximum(0.0, np.minimum(up, down))


def frame_count(n_samples: int, win: int, hop: int) -> int:
    return 1 + (n_samples - win) // hop


def log_mel_fbank(w: Waveform, n_mels: int = N_MELS, win_ms: float = WIN_MS,
                  hop_ms: float = HOP_MS, floor: float = LOG_FLOOR) -> np.ndarray:
    """[frames, n_mels] log mel energies of the Hann-windowed magnitude spectrum."""
    win = int(round(w.sample_rate * win_ms / 1000.0))
    hop = int(round(w.sample_rate * hop_ms / 1000.0))
    if len(w) < win:
        raise LengthError(f"waveform has {len(w)} samples, fewer than one {win}-sample window")
    n_fft = 1 << (win - 1).bit_length()
    frames = np.lib.stride_tricks.sliding_window_view(w.samples, win)[::hop]
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(win) / win)
    mag = np.abs(np.fft.rfft(frames * window, n=n_fft, axis=-1))
    fb = mel_filterbank(n_mels, n_fft, w.sample_rate)
    return np.log(np.maximum(mag @ fb.T, floor))


def group_frames(frames: np.ndarray, order: int = GROUP_ORDER) -> np.ndarray:
    """Stack non-overlapping runs of ``order`` frames; trailing remainder is dropped."""
    n, d = frames.shape
    if n < order:
        raise LengthError(f"need at least {order} frames to group, got {n}")
    keep = (n // order) * order
    return frames[:keep].reshape(n // order, order * d)


def normalize_utterance(feats: np.ndarray) -> np.ndarray:
    """Remove the utterance mean and divide by the utterance standard deviation."""
    std = feats.std()
    return (feats - feats.mean()) / (std if std > 1e-8 else 1.0)


def featurize(w: Waveform, video: np.ndarray, transcript, sample_id: str = "",
              n_mels: int = N_MELS, order: int = GROUP_ORDER, normalize: bool = True) -> FeaturePair:
    """Waveform + video frames -> time-aligned FeaturePair (both truncated to the shorter)."""
    audio = group_frames(log_mel_fbank(w, n_mels), order)
    t = min(audio.shape[0], video.shape[0])
    audio = audio[:t]
    if normalize:
        audio = normalize_utterance(audio)
    return FeaturePair(audio, np.asarray(video[:t], dtype=np.float64), list(transcript), sample_id)
