"""Central finite-difference check of every parameter group of a model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import AVSRModel, Batch, FusionSpec, ModelConfig, collate
from .seeding import derive_rng
from .tensor import backward, no_grad

DEFAULT_H = 1e-5
DEFAULT_TOL = 1e-4
# Denominator floor: gradients that are exactly zero in theory (e.g. key
# biases, which softmax is invariant to) come out of central differences as
# roundoff of order eps_mach * |loss| / h ~ 1e-11.
REL_FLOOR = 1e-5
# entries sampled per parameter tensor in the timed check
SAMPLED_ENTRIES = 24


@dataclass
class GroupResult:
    name: str
    max_rel_error: float
    n_checked: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def numerical_grad(f, x: np.ndarray, h: float = DEFAULT_H, indices=None) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. entries of ``x`` (perturbed in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size) if indices is None else indices:
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def tiny_config(**overrides) -> ModelConfig:
    base = dict(d_model=8, n_heads=2, d_ff=16, n_premix_blocks=1, n_shared_blocks=1,
                n_decoder_blocks=1, vocab_size=6, d_audio_in=8, d_video_in=6)
    base.update(overrides)
    return ModelConfig(**base)


def tiny_batch(cfg: ModelConfig, seed: int = 0, frame_lengths=(4, 3), token_lengths=(3, 2)) -> Batch:
    """Random features and transcripts with unequal lengths, so padding is exercised."""
    rng = derive_rng(seed, "gradcheck-batch")
    items = []
    for i, (t, n) in enumerate(zip(frame_lengths, token_lengths)):
        items.append((rng.standard_normal((t, cfg.d_audio_in)), rng.standard_normal((t, cfg.d_video_in)),
                      [int(x) for x in rng.integers(3, cfg.vocab_size, size=n)], f"g{i}"))
    return collate(items)


def check_model(model: AVSRModel, batch: Batch, label_smoothing: float = 0.1, h: float = DEFAULT_H,
                tol: float = DEFAULT_TOL, max_entries: int | None = None, seed: int = 0) -> list[GroupResult]:
    """Compare backprop gradients with central differences, one result per parameter tensor.

    ``max_entries`` caps the number of (randomly chosen) entries checked per
    tensor; ``None`` checks every entry.
    """
    model.zero_grad()
    backward(model.forward_loss(batch, label_smoothing))
    analytic = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in model.params.items()}

    def loss() -> float:
        with no_grad():
            return float(model.forward_loss(batch, label_smoothing).data)

    rng = derive_rng(seed, "gradcheck-entries")
    results = []
    for name, p in model.params.items():
        idx = None
        if max_entries is not None and p.data.size > max_entries:
            idx = np.sort(rng.choice(p.data.size, size=max_entries, replace=False))
        numeric = numerical_grad(loss, p.data, h, idx)
        a = analytic[name].reshape(-1)
        n = numeric.reshape(-1)
        if idx is not None:
            a, n = a[idx], n[idx]
        err = float(relative_error(a, n).max()) if a.size else 0.0
        results.append(GroupResult(name, err, int(a.size), tol))
    model.zero_grad()
    return results


def run_gradcheck(seed: int = 0, specs=None, tol: float = DEFAULT_TOL, max_entries: int | None = None,
                  config: ModelConfig | None = None) -> dict[FusionSpec, list[GroupResult]]:
    """Check a fresh 64-bit tiny model for each fusion spec."""
    cfg = tiny_config() if config is None else config
    batch = tiny_batch(cfg, seed)
    out = {}
    for spec in FusionSpec.all() if specs is None else specs:
        model = AVSRModel.create(spec, cfg, seed=seed, dtype=np.float64)
        out[spec] = check_model(model, batch, tol=tol, max_entries=max_entries, seed=seed)
    return out


def format_report(results: dict[FusionSpec, list[GroupResult]]) -> str:
    lines = []
    for spec, groups in results.items():
        worst = max((g.max_rel_error for g in groups), default=0.0)
        status = "PASS" if all(g.passed for g in groups) else "FAIL"
        lines.append(f"{status} {spec}  groups={len(groups)}  max_rel_error={worst:.3e}")
        for g in groups:
            flag = "ok  " if g.passed else "FAIL"
            lines.append(f"    {flag} {g.name:<28} {g.max_rel_error:.3e}  ({g.n_checked} entries)")
    return "\n".join(lines) + "\n"
