"""Slow, independent reference implementations used by the tests."""

from __future__ import annotations

import math

import numpy as np


def fd_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar f() w.r.t. every entry of x (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + h
        fp = f()
        x[i] = orig - h
        fm = f()
        x[i] = orig
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b, floor: float = 1e-8) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float((np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)).max())


def matmul_loop(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for r in range(k):
                s += a[i, r] * b[r, j]
            out[i, j] = s
    return out


def softmax_loop(row, allowed=None):
    allowed = [True] * len(row) if allowed is None else list(allowed)
    m = max(x for x, ok in zip(row, allowed) if ok)
    e = [math.exp(x - m) if ok else 0.0 for x, ok in zip(row, allowed)]
    s = sum(e)
    return [x / s for x in e]


def attention_loop(q, k, v, mask=None):
    """Per-query exp-normalise loop; returns (out, weights)."""
    tq, d = q.shape
    tk = k.shape[0]
    w = np.zeros((tq, tk))
    for i in range(tq):
        scores = [sum(q[i, r] * k[j, r] for r in range(d)) / math.sqrt(d) for j in range(tk)]
        w[i] = softmax_loop(scores, None if mask is None else mask[i])
    out = np.zeros((tq, v.shape[1]))
    for i in range(tq):
        for j in range(tk):
            out[i] += w[i, j] * v[j]
    return out, w


def mha_loop(xq, xkv, p: dict, n_heads: int, mask=None):
    """Head-by-head oracle over plain arrays keyed wq, bq, ..., wo, bo."""
    d = xq.shape[1]
    dh = d // n_heads
    q = xq @ p["wq"] + p["bq"]
    k = xkv @ p["wk"] + p["bk"]
    v = xkv @ p["wv"] + p["bv"]
    heads = []
    for h in range(n_heads):
        sl = slice(h * dh, (h + 1) * dh)
        out, _ = attention_loop(q[:, sl], k[:, sl], v[:, sl], mask)
        heads.append(out)
    return np.concatenate(heads, axis=1) @ p["wo"] + p["bo"]


def edit_distance_table(ref, hyp) -> np.ndarray:
    """Full Levenshtein DP table."""
    n, m = len(ref), len(hyp)
    d = np.zeros((n + 1, m + 1), dtype=int)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            d[i, j] = min(d[i - 1, j] + 1, d[i, j - 1] + 1, d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]))
    return d
