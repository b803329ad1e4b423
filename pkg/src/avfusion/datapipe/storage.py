"""On-disk corpus: a TSV manifest plus one binary tensor file per stream.

Tensor file layout (little-endian)::

    offset  size  field
    0       4     magic b"AVTN"
    4       2     dtype code (u16): 1 = float32, 2 = float64, 3 = int64
    6       2     rank (u16), 1 or 2
    8       4     extent 0 (u32)
    12      4     extent 1 (u32), 0 when rank == 1
    16      ...   row-major data

Corpus directory::

    corpus.json        generation parameters (seed, alphabet, dims, ...)
    manifest.tsv       header + one line per sample:
                       id, transcript, n_tokens, n_samples, n_frames, audio, video
    audio/<id>.bin     waveform, float32, rank 1
    video/<id>.bin     video features, float32, rank 2
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import CheckpointError
from .corpus import CorpusSample
from .features import Waveform

MAGIC = b"AVTN"
DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i8")}
CODES = {v: k for k, v in DTYPES.items()}
MANIFEST_COLUMNS = ("id", "transcript", "n_tokens", "n_samples", "n_frames", "audio", "video")


def write_tensor(path, array: np.ndarray, dtype="<f4") -> None:
    dt = np.dtype(dtype).newbyteorder("<")
    arr = np.ascontiguousarray(array, dtype=dt)
    if arr.ndim not in (1, 2):
        raise ValueError(f"only rank 1 or 2 tensors are stored, got rank {arr.ndim}")
    extents = list(arr.shape) + [0] * (2 - arr.ndim)
    header = MAGIC + struct.pack("<HH2I", CODES[dt], arr.ndim, *extents)
    Path(path).write_bytes(header + arr.tobytes())


def read_tensor(path) -> np.ndarray:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from exc
    if len(buf) < 16 or buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a tensor file")
    code, rank, e0, e1 = struct.unpack_from("<HH2I", buf, 4)
    if code not in DTYPES or rank not in (1, 2):
        raise CheckpointError(f"{path}: bad dtype code {code} or rank {rank}")
    shape = (e0,) if rank == 1 else (e0, e1)
    dt = DTYPES[code]
    n = int(np.prod(shape))
    if len(buf) != 16 + n * dt.itemsize:
        raise CheckpointError(f"{path}: size does not match header")
    return np.frombuffer(buf, dtype=dt, offset=16, count=n).reshape(shape).copy()


def expected_frames(n_audio_samples: int, n_video_frames: int, sample_rate: int = 16000,
                    win_ms: float = 25.0, hop_ms: float = 10.0, order: int = 4) -> int:
    win = int(round(sample_rate * win_ms / 1000))
    hop = int(round(sample_rate * hop_ms / 1000))
    n_fbank = 1 + (n_audio_samples - win) // hop
    return min(n_fbank // order, n_video_frames)


def write_corpus(directory, samples: list[CorpusSample], meta: dict, vocab=None) -> dict:
    """Write ``samples`` and return summary statistics."""
    root = Path(directory)
    (root / "audio").mkdir(parents=True, exist_ok=True)
    (root / "video").mkdir(parents=True, exist_ok=True)
    lines = ["\t".join(MANIFEST_COLUMNS)]
    for s in samples:
        audio_rel, video_rel = f"audio/{s.id}.bin", f"video/{s.id}.bin"
        write_tensor(root / audio_rel, s.waveform.samples)
        write_tensor(root / video_rel, s.video)
        text = " ".join(str(t) for t in s.transcript)
        frames = expected_frames(len(s.waveform), s.video.shape[0], s.waveform.sample_rate)
        lines.append("\t".join(map(str, (s.id, text, len(s.transcript), len(s.waveform), frames,
                                          audio_rel, video_rel))))
    (root / "manifest.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (root / "corpus.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return corpus_stats(root)


def read_manifest(directory) -> list[dict]:
    path = Path(directory) / "manifest.tsv"
    try:
        rows = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise CheckpointError(f"cannot read manifest {path}: {exc}") from exc
    header = tuple(rows[0].split("\t"))
    if header != MANIFEST_COLUMNS:
        raise CheckpointError(f"{path}: unexpected manifest header {header}")
    return [dict(zip(header, r.split("\t"))) for r in rows[1:] if r]


def corpus_stats(directory) -> dict:
    rows = read_manifest(directory)
    n = len(rows)
    return {
        "n_samples": n,
        "mean_tokens": sum(int(r["n_tokens"]) for r in rows) / n if n else 0.0,
        "mean_frames": sum(int(r["n_frames"]) for r in rows) / n if n else 0.0,
    }


def read_corpus(directory) -> tuple[list[CorpusSample], dict]:
    root = Path(directory)
    try:
        meta = json.loads((root / "corpus.json").read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read {root / 'corpus.json'}: {exc}") from exc
    samples = []
    for r in read_manifest(root):
        wave = read_tensor(root / r["audio"]).astype(np.float64)
        video = read_tensor(root / r["video"]).astype(np.float64)
        transcript = [int(x) for x in r["transcript"].split()]
        samples.append(CorpusSample(r["id"], Waveform(wave, meta.get("sample_rate", 16000)), video, transcript))
    return samples, meta
