"""Word error rate, the SNR evaluation grid, and table reports.

CSV schema (one row per cell)::

    stage,block,noise,snr_db,wer

``snr_db`` is ``clean`` or an integer.  Rows are ordered by stage, block,
noise kind, then clean followed by descending SNR.  The text report mirrors
the layout of the published-style WER tables: one row per (stage, block, noise)
with a column per SNR and a final "mean on noisy data" column that averages
the SNR columns (the clean column is excluded).
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datapipe.corpus import CorpusSample
from .datapipe.features import FeaturePair, featurize
from .datapipe.noise import STANDARD_SNRS, NoiseKind, mix_at_snr, synth_noise
from .decode import decode_features
from .errors import UsageError
from .model import AVSRModel
from .seeding import derive_rng

CLEAN_COL = "clean"
CSV_HEADER = ("stage", "block", "noise", "snr_db", "wer")
STAGE_ORDER = ("late", "middle", "early", "audio")
BLOCK_ORDER = ("concat", "align", "cross", "none")
STAGE_LABELS = {"late": "Late-fusion", "middle": "Middle-fusion", "early": "Early-fusion", "audio": "Audio-only"}
BLOCK_LABELS = {"concat": "AV-concat", "align": "AV-align", "cross": "AV-cross", "none": "-"}
MEAN_HEADER = "mean on noisy data"


def edit_distance(ref, hyp) -> int:
    """Minimum number of unit-cost substitutions, deletions and insertions."""
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, 1):
        cur = [i]
        for j, h in enumerate(hyp, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h)))
        prev = cur
    return prev[-1]


def wer(reference, hypothesis) -> float:
    if len(reference) == 0:
        raise UsageError("WER is undefined for an empty reference")
    return edit_distance(reference, hypothesis) / len(reference)


def snr_key(snr) -> str | int:
    if snr is None or str(snr).lower() == CLEAN_COL:
        return CLEAN_COL
    return int(snr)


def _snr_sort(snr) -> tuple:
    return (0, 0) if snr == CLEAN_COL else (1, -int(snr))


def _index(seq, value):
    return seq.index(value) if value in seq else len(seq)


@dataclass
class EvalMatrix:
    """WER cells keyed by (stage, block, noise, snr) with snr = "clean" or an int dB."""

    cells: dict = field(default_factory=dict)

    def set(self, stage: str, block: str, noise: str, snr, value: float) -> None:
        self.cells[(stage, block, noise, snr_key(snr))] = float(value)

    def merge(self, other: "EvalMatrix") -> "EvalMatrix":
        out = EvalMatrix(dict(self.cells))
        out.cells.update(other.cells)
        return out

    def rows(self) -> list[tuple[str, str, str]]:
        keys = {(s, b, n) for s, b, n, _ in self.cells}
        return sorted(keys, key=lambda k: (_index(STAGE_ORDER, k[0]), _index(BLOCK_ORDER, k[1]), k[0], k[1], k[2]))

    def columns(self) -> list:
        return sorted({c for *_, c in self.cells}, key=_snr_sort)

    def row(self, stage: str, block: str, noise: str) -> dict:
        return {c: v for (s, b, n, c), v in self.cells.items() if (s, b, n) == (stage, block, noise)}

    def noisy_mean(self, stage: str, block: str, noise: str) -> float | None:
        vals = [v for c, v in self.row(stage, block, noise).items() if c != CLEAN_COL]
        return float(np.mean(vals)) if vals else None

    def ordered_cells(self):
        for s, b, n in self.rows():
            row = self.row(s, b, n)
            for c in sorted(row, key=_snr_sort):
                yield s, b, n, c, row[c]


# -- evaluation ------------------------------------------------------------


def eval_mixture(sample: CorpusSample, kind, snr_db: float, corpus_seed: int):
    """The noisy waveform used for (sample, kind, snr); independent of the model."""
    kind = NoiseKind.parse(kind)
    noise_seed = int(derive_rng(corpus_seed, "eval-noise", kind.value, int(snr_db), sample.id).integers(2**62))
    noise = synth_noise(kind, len(sample.waveform) + sample.waveform.sample_rate // 2, noise_seed,
                        sample.waveform.sample_rate)
    rng = derive_rng(corpus_seed, "eval-mix", kind.value, int(snr_db), sample.id)
    return mix_at_snr(sample.waveform, noise, snr_db, rng)


def eval_features(sample: CorpusSample, kind, snr, corpus_seed: int, n_mels: int = 80) -> FeaturePair:
    if snr_key(snr) == CLEAN_COL:
        wave = sample.waveform
    else:
        wave = eval_mixture(sample, kind, snr, corpus_seed)
    return featurize(wave, sample.video, sample.transcript, sample.id, n_mels)


def model_labels(model: AVSRModel) -> tuple[str, str]:
    if model.config.audio_only:
        return "audio", "none"
    return model.spec.stage.value, model.spec.block.value


def cell_wer(model: AVSRModel, corpus: list[CorpusSample], kind, snr, corpus_seed: int,
             width: int = 6, max_len: int | None = None, length_norm: bool = False) -> float:
    """Mean per-utterance WER of beam-decoded hypotheses for one grid cell."""
    n_mels = model.config.d_audio_in // 4
    rates = []
    for s in corpus:
        fp = eval_features(s, kind, snr, corpus_seed, n_mels)
        limit = max_len if max_len is not None else len(s.transcript) + 5
        hyp = decode_features(model, fp.audio, fp.video, width, limit, length_norm)
        rates.append(wer(s.transcript, hyp.tokens))
    return float(np.mean(rates))


def evaluate_matrix(model: AVSRModel, corpus: list[CorpusSample], noise_kinds, snr_grid=STANDARD_SNRS,
                    corpus_seed: int = 0, width: int = 6, include_clean: bool = True,
                    threads: int = 1, max_len: int | None = None, length_norm: bool = False) -> EvalMatrix:
    """Decode every test sample under every (noise kind, SNR) cell.

    The clean column is computed once and shared across noise kinds, since no
    mixing happens there.  Cells are independent and may run on ``threads``
    worker threads.
    """
    if not corpus:
        raise UsageError("evaluation corpus is empty")
    kinds = [NoiseKind.parse(k) for k in noise_kinds]
    stage, block = model_labels(model)
    jobs = [(k, s) for k in kinds for s in snr_grid]
    run = lambda job: cell_wer(model, corpus, job[0], job[1], corpus_seed, width, max_len, length_norm)  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            values = list(pool.map(run, jobs))
    else:
        values = [run(j) for j in jobs]
    m = EvalMatrix()
    if include_clean:
        clean = cell_wer(model, corpus, None, CLEAN_COL, corpus_seed, width, max_len, length_norm)
        for k in kinds:
            m.set(stage, block, k.value, CLEAN_COL, clean)
    for (k, s), v in zip(jobs, values):
        m.set(stage, block, k.value, s, v)
    return m


# -- reports -----------------------------------------------------------------


def to_csv(matrix: EvalMatrix) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for s, b, n, c, v in matrix.ordered_cells():
        w.writerow([s, b, n, c, repr(v)])
    return buf.getvalue()


def parse_csv(text: str) -> EvalMatrix:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise UsageError(f"CSV header must be {','.join(CSV_HEADER)}")
    m = EvalMatrix()
    for r in rows[1:]:
        if r:
            s, b, n, c, v = r
            m.set(s, b, n, c, float(v))
    return m


def format_percent(x: float | None) -> str:
    return "--" if x is None else f"{100.0 * x:.2f}%"


def _column_title(c) -> str:
    return CLEAN_COL if c == CLEAN_COL else f"{c}dB"


def render_row(stage: str, block: str, values: dict, columns) -> list[str]:
    noisy = [values[c] for c in columns if c != CLEAN_COL and c in values]
    mean = float(np.mean(noisy)) if noisy else None
    cells = [format_percent(values.get(c)) for c in columns]
    return [STAGE_LABELS.get(stage, stage), BLOCK_LABELS.get(block, block), *cells, format_percent(mean)]


def to_text(matrix: EvalMatrix, columns=None) -> str:
    """Aligned text tables, one section per noise kind."""
    if columns is None:
        columns = matrix.columns() or [CLEAN_COL, *STANDARD_SNRS]
    header = ["Fusion stage", "Fusion Block", *(_column_title(c) for c in columns), MEAN_HEADER]
    noises = sorted({n for _, _, n in matrix.rows()})
    sections = []
    for noise in noises or [None]:
        body = [render_row(s, b, matrix.row(s, b, n), columns) for s, b, n in matrix.rows() if n == noise]
        table = [header, *body]
        widths = [max(len(r[i]) for r in table) for i in range(len(header))]
        lines = [f"noise: {noise}"] if noise is not None else []
        for r in table:
            lines.append(" | ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip())
        sections.append("\n".join(lines))
    return "\n\n".join(sections) + "\n"


def report(matrices, out_dir, stem: str = "wer") -> tuple[Path, Path]:
    """Write ``<stem>.csv`` and ``<stem>.txt`` for the merged matrices."""
    merged = EvalMatrix()
    for m in matrices:
        merged = merged.merge(m)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, txt_path = out / f"{stem}.csv", out / f"{stem}.txt"
    csv_path.write_text(to_csv(merged), encoding="utf-8")
    txt_path.write_text(to_text(merged), encoding="utf-8")
    return csv_path, txt_path
