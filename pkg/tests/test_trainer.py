import math
from collections import Counter

import numpy as np
import pytest

from avfusion.checkpoint import load_checkpoint
from avfusion.datapipe.corpus import synth_av_corpus
from avfusion.datapipe.noise import STANDARD_SNRS, condition_space
from avfusion.errors import ConfigError, NumericError, UsageError
from avfusion.loss import label_smoothed_ce, smoothing_floor
from avfusion.model import AVSRModel, FusionSpec, ModelConfig
from avfusion.tensor import Tensor, backward
from avfusion.trainer import TrainConfig, curriculum_order, draw_condition, lr_at, make_batches, train
from avfusion.vocab import Vocab

from oracles import fd_grad, rel_err

SMALL = dict(d_model=16, n_heads=2, d_ff=32, n_premix_blocks=1, n_shared_blocks=1, n_decoder_blocks=1,
             d_audio_in=4 * 20, d_video_in=16)


def small_setup(n=6, stage="early", block="align", seed=0):
    vocab = Vocab("abcd")
    corpus = synth_av_corpus(n, vocab, 4, seed=seed, d_video=16)
    cfg = ModelConfig(**SMALL, vocab_size=vocab.size)
    return corpus, AVSRModel.create(FusionSpec(stage, block), cfg, seed=seed)


# -- label-smoothed cross-entropy ---------------------------------------------------


def test_eps_zero_is_plain_cross_entropy():
    rng = np.random.default_rng(0)
    logits, targets = rng.standard_normal((4, 6)), np.array([0, 3, 5, 2])
    lse = np.log(np.exp(logits).sum(-1))
    expect = np.mean(lse - logits[np.arange(4), targets])
    assert abs(float(label_smoothed_ce(Tensor(logits), targets, 0.0).data) - expect) < 1e-12


@pytest.mark.parametrize("eps", [0.0, 0.1, 0.5])
def test_uniform_logits_give_log_v(eps):
    loss = label_smoothed_ce(Tensor(np.zeros((3, 7))), [1, 2, 3], eps)
    assert float(loss.data) == pytest.approx(math.log(7), abs=1e-12)


def test_random_3x5_matches_loop():
    rng = np.random.default_rng(1)
    logits, targets, eps = rng.standard_normal((3, 5)), [4, 0, 2], 0.1
    total = 0.0
    for row, y in zip(logits, targets):
        lse = math.log(sum(math.exp(z) for z in row))
        for k in range(5):
            w = 1 - eps if k == y else eps / 4
            total -= w * (row[k] - lse)
    assert float(label_smoothed_ce(Tensor(logits), targets, eps).data) == pytest.approx(total / 3, abs=1e-12)


def test_padded_positions_do_not_count():
    rng = np.random.default_rng(2)
    logits = rng.standard_normal((2, 5))
    valid = np.array([True, False])
    a = float(label_smoothed_ce(Tensor(logits), [1, 0], 0.1, valid).data)
    b = float(label_smoothed_ce(Tensor(logits[:1]), [1], 0.1).data)
    assert a == b


def test_loss_gradient_fd():
    rng = np.random.default_rng(3)
    x = Tensor(rng.standard_normal((3, 5)), requires_grad=True)
    backward(label_smoothed_ce(x, [1, 2, 3], 0.1))
    num = fd_grad(lambda: float(label_smoothed_ce(Tensor(x.data), [1, 2, 3], 0.1).data), x.data)
    assert rel_err(x.grad, num) < 1e-6


def test_floor_is_reached_at_smoothed_optimum_not_zero():
    V, eps = 11, 0.1
    target = np.full(V, eps / (V - 1))
    target[4] = 1 - eps
    at_opt = float(label_smoothed_ce(Tensor(np.log(target)[None]), [4], eps).data)
    assert at_opt == pytest.approx(smoothing_floor(V, eps), abs=1e-12)
    assert smoothing_floor(V, eps) > 0.5
    onehot = np.full(V, -30.0)
    onehot[4] = 30.0
    assert float(label_smoothed_ce(Tensor(onehot[None]), [4], eps).data) > at_opt
    assert float(label_smoothed_ce(Tensor(onehot[None]), [4], 0.0).data) < 1e-12


def test_loss_argument_errors():
    with pytest.raises(UsageError):
        label_smoothed_ce(Tensor(np.zeros((2, 3))), [0, 5])
    with pytest.raises(UsageError):
        label_smoothed_ce(Tensor(np.zeros((2, 3))), [0, 1], 1.0)


# -- schedule and ordering -------------------------------------------------------


def test_lr_endpoints_and_midpoint():
    cfg = TrainConfig(epochs=11)
    assert lr_at(0, cfg) == pytest.approx(1e-4, rel=1e-12)
    assert lr_at(10, cfg) == pytest.approx(5e-6, rel=1e-12)
    assert lr_at(5, cfg) == pytest.approx(math.sqrt(1e-4 * 5e-6), rel=1e-12)
    assert lr_at(5, cfg) == pytest.approx(2.236e-5, rel=1e-3)


def test_linear_schedule():
    cfg = TrainConfig(epochs=3, lr_schedule="linear", lr_start=1.0, lr_end=0.5)
    assert [lr_at(e, cfg) for e in range(3)] == [1.0, 0.75, 0.5]


def test_curriculum_sorts_short_first():
    assert curriculum_order([30, 10, 20], ["a", "b", "c"], 0, TrainConfig()) == [1, 2, 0]


def test_after_curriculum_is_permutation_and_deterministic():
    cfg = TrainConfig(cl_epochs=2, seed=5)
    lengths = list(range(20, 0, -1))
    ids = [str(i) for i in range(20)]
    o1 = curriculum_order(lengths, ids, 3, cfg)
    assert sorted(o1) == list(range(20))
    assert o1 == curriculum_order(lengths, ids, 3, cfg)
    assert o1 != curriculum_order(lengths, ids, 4, cfg)


def test_buckets_cover_every_sample_once():
    cfg = TrainConfig(batch_size=3, bucket_window=2, cl_epochs=0)
    lengths = [5, 1, 4, 2, 3, 9, 7]
    batches = make_batches(list(range(7)), lengths, 0, cfg)
    assert sorted(i for b in batches for i in b) == list(range(7))
    assert all(len(b) <= 3 for b in batches)


# -- conditions ----------------------------------------------------------------------


def test_epoch_conditions_uniform_and_hum_free():
    cfg = TrainConfig(seed=3)
    draws = Counter(draw_condition(cfg, 0, f"s{i:05d}") for i in range(20_000))
    space = condition_space(cfg.snr_set, cfg.noise_kinds)
    assert set(draws) == set(space)
    for c in space:
        assert abs(draws[c] / 20_000 - 1 / len(space)) < 0.01
    assert all(c.kind is None or c.kind.value != "hum" for c in draws)


def test_config_rejects_unseen_family_and_bad_values():
    problems = TrainConfig(noise_kinds=("white", "hum"), dropout=1.5, batch_size=0).validate()
    assert len(problems) == 3
    assert any("hum" in p for p in problems)


# -- training loop ---------------------------------------------------------------------


def test_loss_decreases_over_first_epochs_desk_scale():
    vocab = Vocab()
    corpus = synth_av_corpus(32, vocab, 6, seed=1)
    model = AVSRModel.create(FusionSpec("early", "align"), ModelConfig(vocab_size=vocab.size), seed=1)
    cfg = TrainConfig(epochs=5, cl_epochs=2, lr_start=1e-3, lr_end=5e-4, batch_size=4, noise_kinds=(), seed=1)
    losses = [m.mean_loss for m in train(corpus, model, cfg).metrics]
    for prev, cur in zip(losses, losses[1:]):
        assert cur < prev * 1.05
    assert losses[-1] < losses[0]


def test_training_is_deterministic():
    curves = []
    for _ in range(2):
        corpus, model = small_setup()
        res = train(corpus, model, TrainConfig(epochs=2, batch_size=2, seed=4, lr_start=1e-3))
        curves.append(([m.mean_loss for m in res.metrics], {k: v.data.copy() for k, v in model.params.items()}))
    assert curves[0][0] == curves[1][0]
    for k in curves[0][1]:
        np.testing.assert_array_equal(curves[0][1][k], curves[1][1][k])


def test_resume_matches_uninterrupted_run(tmp_path):
    cfg = TrainConfig(epochs=4, cl_epochs=1, batch_size=2, seed=6, lr_start=1e-3)
    corpus, full = small_setup()
    train(corpus, full, cfg, out_dir=tmp_path / "full")
    _, part = small_setup()
    train(corpus, part, cfg, out_dir=tmp_path / "part", stop_after=2)
    assert not (tmp_path / "part" / "model.avck").exists()
    _, resumed = small_setup()
    train(corpus, resumed, cfg, out_dir=tmp_path / "part", resume=tmp_path / "part" / "train_state.npz")

    def rows(run):
        return [line.split("\t")[:3] for line in (tmp_path / run / "metrics.tsv").read_text().splitlines()]

    assert rows("full") == rows("part")
    assert len(rows("full")) == 4
    for k in full.params:
        np.testing.assert_array_equal(full.params[k].data, resumed.params[k].data)


def test_metrics_and_checkpoints_written(tmp_path):
    corpus, model = small_setup()
    train(corpus, model, TrainConfig(epochs=2, batch_size=3), out_dir=tmp_path)
    lines = (tmp_path / "metrics.tsv").read_text().splitlines()
    assert [len(l.split("\t")) for l in lines] == [4, 4]
    assert sorted(p.name for p in (tmp_path / "checkpoints").iterdir()) == ["epoch_000.avck", "epoch_001.avck"]
    header, _ = load_checkpoint(tmp_path / "model.avck")
    assert header["spec"] == {"stage": "early", "block": "align"}


def test_zero_epochs_checkpoint_equals_init(tmp_path):
    corpus, model = small_setup()
    init = {k: v.data.copy() for k, v in model.params.items()}
    train(corpus, model, TrainConfig(epochs=0), out_dir=tmp_path)
    _, arrays = load_checkpoint(tmp_path / "model.avck")
    for k, v in init.items():
        np.testing.assert_array_equal(arrays[k], v.astype(np.float32))


def test_non_finite_loss_is_reported():
    corpus, model = small_setup()
    model.params["dec.out.b"].data[:] = np.nan
    with pytest.raises(NumericError, match="epoch 0"):
        train(corpus, model, TrainConfig(epochs=1, noise_kinds=()))


def test_empty_corpus_rejected():
    _, model = small_setup()
    with pytest.raises(ConfigError):
        train([], model, TrainConfig(epochs=1))


def test_noisy_training_runs():
    corpus, model = small_setup(n=4)
    res = train(corpus, model, TrainConfig(epochs=1, batch_size=2, snr_set=STANDARD_SNRS, seed=2))
    assert len(res.conditions) == 4 and math.isfinite(res.metrics[0].mean_loss)
