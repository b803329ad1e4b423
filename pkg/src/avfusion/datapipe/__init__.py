from .corpus import CorpusSample, synth_av_corpus, video_codebook
from .features import FeaturePair, Waveform, featurize, group_frames, log_mel_fbank
from .noise import (
    CLEAN,
    STANDARD_SNRS,
    Condition,
    NoiseKind,
    mix_at_snr,
    sample_training_condition,
    synth_noise,
)

__all__ = [
    "CLEAN",
    "STANDARD_SNRS",
    "Condition",
    "CorpusSample",
    "FeaturePair",
    "NoiseKind",
    "Waveform",
    "featurize",
    "group_frames",
    "log_mel_fbank",
    "mix_at_snr",
    "sample_training_condition",
    "synth_av_corpus",
    "synth_noise",
    "video_codebook",
]
