import numpy as np
import pytest

from avfusion.attention import Scope, make_padding_mask, multi_head_attention, mha_param_count
from avfusion.errors import AlignmentError, ConfigError
from avfusion.fusion import (
    FusionBlockKind, av_align, av_concat, av_cross, enhance, fuse, fusion_param_count, init_fusion,
)
from avfusion.tensor import Tensor

from oracles import mha_loop

D = 6


def make(kind, seed=0, zero_bias=False, d=D):
    params = {}
    init_fusion(params, "f", FusionBlockKind.parse(kind), d, np.random.default_rng(seed))
    rng = np.random.default_rng(seed + 1)
    for k, v in params.items():
        if k.endswith((".bq", ".bk", ".bv", ".bo", ".b")):
            v.data = np.zeros_like(v.data) if zero_bias else 0.1 * rng.standard_normal(v.shape)
    return params, Scope(params, "f")


def sub(params, prefix):
    return {k[len(prefix) + 1:]: v.data for k, v in params.items() if k.startswith(prefix + ".")}


def streams(t=4, seed=0, d=D):
    rng = np.random.default_rng(seed + 50)
    return rng.standard_normal((t, d)), rng.standard_normal((t, d))


def test_parse_kind():
    assert FusionBlockKind.parse("Align") is FusionBlockKind.ALIGN
    with pytest.raises(ConfigError):
        FusionBlockKind.parse("gated")


# -- concat ------------------------------------------------------------------


def test_concat_selects_audio():
    params, p = make("concat")
    params["f.fc.w"].data = np.vstack([np.eye(D), np.zeros((D, D))])
    params["f.fc.b"].data = np.zeros(D)
    a, v = streams()
    np.testing.assert_array_equal(av_concat(Tensor(a), Tensor(v), p).data, a)


def test_concat_selects_video():
    params, p = make("concat")
    params["f.fc.w"].data = np.vstack([np.zeros((D, D)), np.eye(D)])
    params["f.fc.b"].data = np.zeros(D)
    a, v = streams()
    np.testing.assert_array_equal(av_concat(Tensor(a), Tensor(v), p).data, v)


def test_concat_random_vs_oracle():
    params, p = make("concat")
    a, v = streams()
    w = sub(params, "f.fc")
    np.testing.assert_allclose(av_concat(Tensor(a), Tensor(v), p).data,
                               np.concatenate([a, v], 1) @ w["w"] + w["b"], atol=1e-12)


def test_concat_misaligned_streams():
    _, p = make("concat")
    with pytest.raises(AlignmentError):
        av_concat(Tensor(np.ones((3, D))), Tensor(np.ones((4, D))), p)


# -- align ---------------------------------------------------------------------


def test_align_zero_video_passthrough():
    _, p = make("align", zero_bias=True)
    a, _ = streams()
    v = np.zeros_like(a)
    a_enh, _ = enhance(Tensor(a), Tensor(v), FusionBlockKind.ALIGN, p, 2)
    np.testing.assert_array_equal(a_enh.data, a)
    np.testing.assert_array_equal(av_align(Tensor(a), Tensor(v), p, 2).data,
                                  av_concat(Tensor(a), Tensor(v), p).data)


def test_align_single_video_frame():
    params, p = make("align")
    rng = np.random.default_rng(3)
    a, v = rng.standard_normal((5, D)), rng.standard_normal((1, D))
    w = sub(params, "f.audio_attn")
    attended = multi_head_attention(Tensor(a), Tensor(v), p.sub("audio_attn"), 2).data
    expected = (v @ w["wv"] + w["bv"]) @ w["wo"] + w["bo"]
    np.testing.assert_allclose(attended, np.repeat(expected, 5, axis=0), atol=1e-12)


def test_align_random_vs_attention_oracle():
    params, p = make("align")
    a, v = streams(seed=4)
    a_enh, v_enh = enhance(Tensor(a), Tensor(v), FusionBlockKind.ALIGN, p, 2)
    np.testing.assert_allclose(a_enh.data, a + mha_loop(a, v, sub(params, "f.audio_attn"), 2), atol=1e-12)
    np.testing.assert_array_equal(v_enh.data, v)


# -- cross ---------------------------------------------------------------------


def test_cross_zero_streams_gives_fc_bias():
    params, p = make("cross", zero_bias=True)
    params["f.fc.b"].data = np.arange(D, dtype=float)
    z = np.zeros((3, D))
    np.testing.assert_array_equal(av_cross(Tensor(z), Tensor(z), p, 2).data, np.tile(np.arange(D), (3, 1)))


def test_cross_swap_symmetry():
    params, p = make("cross", seed=5)
    a, v = streams(seed=5)
    out = av_cross(Tensor(a), Tensor(v), p, 2).data
    swapped = {}
    for k, t in params.items():
        k2 = k.replace("audio_attn", "TMP").replace("video_attn", "audio_attn").replace("TMP", "video_attn")
        swapped[k2] = Tensor(t.data.copy())
    w = params["f.fc.w"].data
    swapped["f.fc.w"] = Tensor(np.vstack([w[D:], w[:D]]))
    out2 = av_cross(Tensor(v), Tensor(a), Scope(swapped, "f"), 2).data
    assert np.max(np.abs(out - out2)) < 1e-12


def test_cross_random_vs_oracles():
    params, p = make("cross", seed=6)
    a, v = streams(seed=6)
    a_enh, v_enh = enhance(Tensor(a), Tensor(v), FusionBlockKind.CROSS, p, 2)
    np.testing.assert_allclose(a_enh.data, a + mha_loop(a, v, sub(params, "f.audio_attn"), 2), atol=1e-12)
    np.testing.assert_allclose(v_enh.data, v + mha_loop(v, a, sub(params, "f.video_attn"), 2), atol=1e-12)


def test_cross_uses_key_side_masks():
    params, p = make("cross", seed=7)
    rng = np.random.default_rng(7)
    a, v = rng.standard_normal((1, 4, D)), rng.standard_normal((1, 4, D))
    mask = make_padding_mask([3], 4)
    out = fuse(Tensor(a), Tensor(v), FusionBlockKind.CROSS, p, 2, mask, mask).data
    a2, v2 = a.copy(), v.copy()
    a2[0, 3], v2[0, 3] = 100.0, -100.0  # padded frame content must not leak
    out2 = fuse(Tensor(a2), Tensor(v2), FusionBlockKind.CROSS, p, 2, mask, mask).data
    np.testing.assert_allclose(out[0, :3], out2[0, :3], atol=1e-12)


# -- shapes and counts -------------------------------------------------------------


@pytest.mark.parametrize("kind", ["concat", "align", "cross"])
@pytest.mark.parametrize("t", [1, 3, 8])
def test_output_shape(kind, t):
    _, p = make(kind)
    a, v = streams(t)
    assert fuse(Tensor(a), Tensor(v), FusionBlockKind(kind), p, 2).shape == (t, D)


@pytest.mark.parametrize("d", [6, 64])
def test_param_counts(d):
    counts = {}
    for kind in FusionBlockKind:
        params, _ = make(kind.value, d=d)
        counts[kind] = sum(v.data.size for v in params.values())
        assert counts[kind] == fusion_param_count(kind, d)
    assert counts[FusionBlockKind.ALIGN] == counts[FusionBlockKind.CONCAT] + mha_param_count(d)
    assert counts[FusionBlockKind.CROSS] == counts[FusionBlockKind.CONCAT] + 2 * mha_param_count(d)
