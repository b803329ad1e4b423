"""Command-line entry point: ``avfusion <command> [--config FILE] [--set key=value ...]``.

Commands:

* ``synth-data``  write a synthetic corpus (``--split train|test``)
* ``train``       train one fusion variant, optionally resuming
* ``evaluate``    decode a test corpus over the noise/SNR grid
* ``gradcheck``   finite-difference check of all nine fusion variants
* ``report``      merge WER CSV files into one table

Exit codes: 0 success, 1 validation error, 2 runtime/numeric failure,
3 IO error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .checkpoint import load_checkpoint
from .config import ExperimentConfig, load_config
from .datapipe.corpus import synth_av_corpus
from .datapipe.storage import read_corpus, write_corpus
from .errors import AVFusionError, CheckpointError, ConfigError, UsageError
from .evaluation import evaluate_matrix, parse_csv, report
from .gradcheck import DEFAULT_TOL, SAMPLED_ENTRIES, format_report, run_gradcheck
from .model import AVSRModel, FusionSpec, load_model
from .trainer import train

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_IO = 0, 1, 2, 3
RESOLVED_NAME = "config.resolved.cfg"

log = logging.getLogger("avfusion")


def _config(args) -> ExperimentConfig:
    overrides = list(args.set or [])
    if getattr(args, "threads", None) is not None:
        overrides.append(f"threads={args.threads}")
    return load_config(args.config, overrides).check()


def cmd_synth_data(args) -> int:
    cfg = _config(args)
    out = Path(args.out or (cfg.corpus_dir if args.split == "train" else cfg.test_corpus_dir))
    corpus_seed = cfg.corpus_seed(args.split)
    samples = synth_av_corpus(cfg.n_samples, cfg.vocab, cfg.max_len, corpus_seed, min_len=cfg.min_len,
                              d_video=cfg.d_video_in, jitter=cfg.video_jitter, occlusion=cfg.occlusion,
                              codebook_seed=cfg.codebook_seed)
    meta = {"split": args.split, "root_seed": cfg.seed, "corpus_seed": corpus_seed, "alphabet": cfg.alphabet,
            "n_samples": cfg.n_samples, "min_len": cfg.min_len, "max_len": cfg.max_len,
            "d_video": cfg.d_video_in, "jitter": cfg.video_jitter, "occlusion": cfg.occlusion,
            "codebook_seed": cfg.codebook_seed, "sample_rate": 16000}
    stats = write_corpus(out, samples, meta)
    cfg.write(out / RESOLVED_NAME)
    print(f"wrote {stats['n_samples']} samples to {out}")
    print(f"mean tokens per sample: {stats['mean_tokens']:.3f}")
    print(f"mean frames per sample: {stats['mean_frames']:.3f}")
    return EXIT_OK


def _resume_path(arg: str) -> Path:
    p = Path(arg)
    return p / "train_state.npz" if p.is_dir() else p


def cmd_train(args) -> int:
    cfg = _config(args)
    out = Path(cfg.out_dir)
    corpus, _ = read_corpus(cfg.corpus_dir)
    model = AVSRModel.create(cfg.fusion_spec(), cfg.model_config(), seed=cfg.model_seed(), dtype=cfg.np_dtype)
    resume = _resume_path(args.resume) if args.resume else None
    if resume is not None and not resume.exists():
        raise CheckpointError(f"no training state at {resume}")
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out / RESOLVED_NAME)

    def echo(m):
        print(m.line(), flush=True)

    result = train(corpus, model, cfg.train_config(), out_dir=out, resume=resume, on_epoch=echo,
                   stop_after=args.stop_after)
    done = "stopped" if args.stop_after is not None and args.stop_after < cfg.epochs else "finished"
    print(f"{done} after {len(result.metrics)} epoch(s) this run; outputs in {out}")
    return EXIT_OK


def find_checkpoints(path: Path) -> list[Path]:
    """A checkpoint file, the ``*.avck`` files in a directory, or ``*/model.avck`` of run directories."""
    if path.is_file():
        return [path]
    if not path.is_dir():
        raise CheckpointError(f"checkpoint path {path} does not exist")
    if (path / "model.avck").is_file():
        return [path / "model.avck"]
    found = sorted(path.glob("*.avck")) or sorted(path.glob("*/model.avck"))
    if not found:
        raise CheckpointError(f"no checkpoints found under {path}")
    return found


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    source = args.checkpoint or cfg.checkpoint
    if not source:
        raise ConfigError("evaluate needs --checkpoint or the checkpoint config key")
    paths = find_checkpoints(Path(source))
    corpus, meta = read_corpus(cfg.test_corpus_dir)
    out = Path(cfg.out_dir)
    cfg.write(out / RESOLVED_NAME)
    matrices = []
    for p in paths:
        header, tensors = load_checkpoint(p)
        model = load_model(header, tensors, cfg.np_dtype)
        m = evaluate_matrix(model, corpus, cfg.eval_kinds, cfg.eval_snrs, corpus_seed=int(meta["corpus_seed"]),
                            width=cfg.beam_width, include_clean=cfg.eval_clean, threads=cfg.threads,
                            length_norm=cfg.length_norm)
        print(f"evaluated {p}", flush=True)
        matrices.append(m)
    csv_path, txt_path = report(matrices, out, "wer")
    print(txt_path.read_text(encoding="utf-8"), end="")
    print(f"wrote {csv_path} and {txt_path}")
    return EXIT_OK


def parse_spec(text: str) -> FusionSpec:
    stage, sep, block = text.partition("/")
    if not sep:
        raise UsageError(f"--spec expects STAGE/BLOCK, got {text!r}")
    return FusionSpec(stage, block)


def cmd_gradcheck(args) -> int:
    overrides = list(args.set or [])
    cfg = load_config(args.config, overrides).check() if (args.config or overrides) else ExperimentConfig()
    specs = [parse_spec(s) for s in args.spec] if args.spec else None
    results = run_gradcheck(seed=cfg.seed, specs=specs, tol=args.tol,
                            max_entries=None if args.full else args.entries)
    text = format_report(results)
    print(text, end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "gradcheck.txt").write_text(text, encoding="utf-8")
        cfg.write(out / RESOLVED_NAME)
    failed = [str(s) for s, groups in results.items() if not all(g.passed for g in groups)]
    if failed:
        print(f"gradcheck FAILED for {', '.join(failed)}")
        return EXIT_RUNTIME
    print(f"gradcheck passed for {len(results)} variant(s)")
    return EXIT_OK


def cmd_report(args) -> int:
    matrices = []
    for p in args.inputs:
        try:
            text = Path(p).read_text(encoding="utf-8")
        except OSError as exc:
            raise CheckpointError(f"cannot read {p}: {exc}") from exc
        matrices.append(parse_csv(text))
    csv_path, txt_path = report(matrices, args.out, args.stem)
    print(txt_path.read_text(encoding="utf-8"), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="avfusion", description="Audio-visual fusion ASR experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, threads=True):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
        if threads:
            p.add_argument("--threads", type=int, help="cap on worker threads")

    p = sub.add_parser("synth-data", help="write a synthetic audio-visual corpus")
    common(p)
    p.add_argument("--split", choices=("train", "test"), default="train")
    p.add_argument("--out", help="corpus directory (default: corpus_dir or test_corpus_dir)")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train one fusion variant")
    common(p)
    p.add_argument("--resume", metavar="PATH", help="train_state.npz or a run directory to continue from")
    p.add_argument("--stop-after", type=int, metavar="K", help="stop after epoch K-1 (resumable)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="WER over the noise/SNR grid")
    common(p)
    p.add_argument("--checkpoint", help="checkpoint file, or a directory of checkpoints/runs")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference check of all fusion variants")
    common(p, threads=False)
    p.add_argument("--full", action="store_true", help="check every parameter entry (slow)")
    p.add_argument("--entries", type=int, default=SAMPLED_ENTRIES, help="entries sampled per tensor")
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--spec", action="append", metavar="STAGE/BLOCK",
                   help="restrict to one variant, e.g. early/align (repeatable; default all nine)")
    p.add_argument("--out", help="directory for gradcheck.txt")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("report", help="merge WER CSV files into one table")
    p.add_argument("inputs", nargs="+", help="wer.csv files")
    p.add_argument("--out", required=True)
    p.add_argument("--stem", default="wer")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        problems = getattr(exc, "problems", [str(exc)])
        print("configuration error:", file=sys.stderr)
        for msg in problems:
            print(f"  - {msg}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, CheckpointError) as exc:
        print(f"IO error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (AVFusionError, ArithmeticError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
