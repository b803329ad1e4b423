"""Synthetic noise families, SNR-exact mixing and training-condition draws."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import signal

from ..errors import ConfigError, SignalError, UsageError
from ..seeding import derive_rng
from .features import SAMPLE_RATE, Waveform

STANDARD_SNRS = (20, 15, 10, 5, 0, -5)


class NoiseKind(str, Enum):
    WHITE = "white"
    PINK = "pink"
    BABBLE = "babble"
    HUM = "hum"

    @classmethod
    def parse(cls, value) -> "NoiseKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            allowed = ", ".join(k.value for k in cls)
            raise ConfigError(f"noise kind {value!r} is not one of {allowed}") from None

    @property
    def unseen(self) -> bool:
        return self is NoiseKind.HUM


SEEN_KINDS = (NoiseKind.WHITE, NoiseKind.PINK, NoiseKind.BABBLE)


@dataclass(frozen=True)
class Condition:
    """Clean when ``kind`` is None, otherwise noise ``kind`` at ``snr_db``."""

    kind: NoiseKind | None = None
    snr_db: float | None = None

    def __post_init__(self):
        if (self.kind is None) != (self.snr_db is None):
            raise UsageError("a condition is either clean or carries both kind and snr")

    @property
    def is_clean(self) -> bool:
        return self.kind is None


CLEAN = Condition()


def _unit_rms(x: np.ndarray) -> np.ndarray:
    rms = np.sqrt(np.mean(x * x))
    return x / rms if rms > 0 else x


def _white(rng, n, sr):
    return rng.standard_normal(n)


def _pink(rng, n, sr):
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / sr)
    shape = np.zeros_like(f)
    shape[1:] = 1.0 / np.sqrt(f[1:])
    return np.fft.irfft(spec * shape, n=n)


def _babble(rng, n, sr, n_voices=8, n_harmonics=12, band_hz=4000.0):
    t = np.arange(n) / sr
    ctrl_rate = 100
    n_ctrl = n // (sr // ctrl_rate) + 2
    ctrl_t = np.arange(n_ctrl) / ctrl_rate
    out = np.zeros(n)
    for _ in range(n_voices):
        log_f0 = np.log(rng.uniform(90.0, 250.0)) + np.cumsum(rng.normal(0.0, 0.02, n_ctrl))
        f0 = np.interp(t, ctrl_t, np.exp(np.clip(log_f0, np.log(80.0), np.log(300.0))))
        phase = 2.0 * np.pi * np.cumsum(f0) / sr
        voice = np.zeros(n)
        for k in range(1, n_harmonics + 1):
            amp = np.where(k * f0 < band_hz, 1.0 / k, 0.0)
            voice += amp * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
        rate = rng.uniform(2.0, 6.0)
        envelope = (0.5 * (1.0 + np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi)))) ** 2
        out += voice * envelope
    return out


def _hum(rng, n, sr, mains_hz=50.0, n_harmonics=20):
    t = np.arange(n) / sr
    out = np.zeros(n)
    for k in range(1, n_harmonics + 1):
        out += np.sin(2 * np.pi * mains_hz * k * t + rng.uniform(0, 2 * np.pi)) / np.sqrt(k)
    sos = signal.butter(4, [900.0, 1100.0], btype="bandpass", fs=sr, output="sos")
    band = _unit_rms(signal.sosfilt(sos, rng.standard_normal(n)))
    return _unit_rms(out) + 0.5 * band


_GENERATORS = {
    NoiseKind.WHITE: _white,
    NoiseKind.PINK: _pink,
    NoiseKind.BABBLE: _babble,
    NoiseKind.HUM: _hum,
}


def synth_noise(kind, n_samples: int, seed: int, sample_rate: int = SAMPLE_RATE) -> Waveform:
    """Unit-RMS noise of the given family; deterministic in (kind, n_samples, seed)."""
    kind = NoiseKind.parse(kind)
    if n_samples < 1:
        raise UsageError(f"n_samples must be >= 1, got {n_samples}")
    rng = derive_rng(seed, "noise", kind.value)
    return Waveform(_unit_rms(_GENERATORS[kind](rng, n_samples, sample_rate)), sample_rate)


def noise_scale(clean: np.ndarray, noise: np.ndarray, snr_db: float) -> float:
    p_clean = float(np.mean(clean * clean))
    p_noise = float(np.mean(noise * noise))
    if p_clean == 0.0:
        raise SignalError("clean signal has zero power")
    if p_noise == 0.0:
        raise SignalError("noise segment has zero power")
    return float(np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0))))


def mix_at_snr(clean: Waveform, noise: Waveform, snr_db: float,
               rng: np.random.Generator | None = None) -> Waveform:
    """Add ``noise`` scaled so that 10 log10(P_clean / P_noise) equals ``snr_db``.

    The noise is read circularly from a random start (``rng``) or from 0, so
    it is effectively tiled when shorter than the clean signal.
    """
    n, m = len(clean), len(noise)
    if m == 0:
        raise SignalError("empty noise waveform")
    start = int(rng.integers(0, m)) if rng is not None else 0
    segment = noise.samples[(start + np.arange(n)) % m]
    alpha = noise_scale(clean.samples, segment, snr_db)
    return Waveform(clean.samples + alpha * segment, clean.sample_rate)


def measured_snr(clean: np.ndarray, noisy: np.ndarray) -> float:
    residual = noisy - clean
    return float(10.0 * np.log10(np.mean(clean * clean) / np.mean(residual * residual)))


def condition_space(snr_set, noise_kinds) -> list[Condition]:
    snrs = list(snr_set)
    kinds = [NoiseKind.parse(k) for k in noise_kinds]
    if not snrs or not kinds:
        raise UsageError("snr_set and noise_kinds must both be nonempty")
    return [CLEAN] + [Condition(k, float(s)) for k in kinds for s in snrs]


def sample_training_condition(rng: np.random.Generator, snr_set, noise_kinds) -> Condition:
    """Uniform over {clean} plus every (kind, snr) pair."""
    space = condition_space(snr_set, noise_kinds)
    return space[int(rng.integers(len(space)))]
