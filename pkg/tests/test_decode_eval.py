import itertools
from pathlib import Path

import numpy as np
import pytest

from avfusion.datapipe.corpus import synth_av_corpus
from avfusion.decode import beam_search, decode_features, greedy_decode, model_step_fn
from avfusion.errors import UsageError
from avfusion.evaluation import (
    CLEAN_COL, EvalMatrix, edit_distance, eval_features, eval_mixture, evaluate_matrix, parse_csv,
    render_row, report, to_csv, to_text, wer,
)
from avfusion.gradcheck import tiny_config
from avfusion.model import AVSRModel, FusionSpec
from avfusion.seeding import derive_rng
from avfusion.vocab import Vocab

from oracles import edit_distance_table

GOLDEN = Path(__file__).parent / "golden"


def toy_step(seed, V=8, temp=1.5):
    """Prefix-dependent pseudo-random next-token distribution."""
    def step(prefixes):
        rows = []
        for p in prefixes:
            z = derive_rng(seed, "toy", *p).standard_normal(V) * temp
            rows.append(z - np.log(np.exp(z).sum()))
        return np.array(rows)
    return step


def table_step(table: dict, V: int):
    """Hand-set log-probabilities keyed by the prefix after sos; unlisted prefixes are uniform."""
    def step(prefixes):
        out = []
        for p in prefixes:
            probs = np.asarray(table.get(tuple(p[1:]), np.full(V, 1.0 / V)), dtype=float)
            with np.errstate(divide="ignore"):
                out.append(np.log(probs))
        return np.array(out)
    return step


def brute_force(step, V, T, eos):
    """Best total log-probability over every finished or length-T hypothesis."""
    best = None
    for seq in itertools.product(range(V), repeat=T):
        prefix, score = [], 0.0
        for tok in seq:
            score += float(step([[-1] + prefix])[0][tok])
            if tok == eos:
                break
            prefix.append(tok)
        if best is None or score > best[0] + 1e-12:
            best = (score, prefix)
    return best


def tiny_model(stage="early", block="align", seed=0):
    return AVSRModel.create(FusionSpec(stage, block), tiny_config(), seed=seed)


@pytest.fixture(scope="module")
def tiny_corpus():
    return synth_av_corpus(3, Vocab("abc"), 3, seed=4, d_video=6)


# -- search --------------------------------------------------------------------


@pytest.mark.parametrize("seed", range(30))
def test_width_one_equals_greedy(seed):
    step = toy_step(seed)
    g, b = greedy_decode(step, 8), beam_search(step, 1, 8)
    assert (g.tokens, g.score, g.finished) == (b.tokens, b.score, b.finished)


def test_width_one_equals_greedy_on_model():
    m = tiny_model(seed=1)
    a = np.random.default_rng(1).standard_normal((4, 8))
    v = np.random.default_rng(2).standard_normal((4, 6))
    step = model_step_fn(m, m.encode(a[None], v[None]))
    assert beam_search(step, 1, 6) == greedy_decode(step, 6)


@pytest.mark.parametrize("V,temp,max_len", [(8, 1.5, 8), (5, 3.0, 4), (12, 0.5, 6), (20, 2.5, 5)])
def test_wider_beam_never_scores_below_greedy(V, temp, max_len):
    for seed in range(150):
        step = toy_step(seed * 31 + V, V, temp)
        assert beam_search(step, 6, max_len).score >= greedy_decode(step, max_len).score


def test_beam_finds_better_path_than_greedy_v4_t3():
    V, eos = 4, 3
    table = {
        (): [0.0, 0.55, 0.45, 0.0],   # greedy takes 1, the better path starts with 2
        (1,): [0.3, 0.3, 0.1, 0.3],
        (1, 0): [0.25, 0.25, 0.25, 0.25],
        (1, 1): [0.25, 0.25, 0.25, 0.25],
        (2,): [0.0, 0.0, 0.05, 0.95],
    }
    step = table_step(table, V)
    g = greedy_decode(step, 3, sos=-1, eos=eos, banned=())
    b = beam_search(step, 6, 3, sos=-1, eos=eos, banned=())
    score, tokens = brute_force(step, V, 3, eos)
    assert b.tokens == tokens == [2]
    assert b.score == pytest.approx(score, abs=1e-12)
    assert g.score < b.score


@pytest.mark.parametrize("seed", range(10))
def test_full_width_beam_is_exhaustive(seed):
    V, T, eos = 4, 3, 3
    step = toy_step(seed, V, 2.0)
    b = beam_search(step, V**T, T, sos=-1, eos=eos, banned=())
    score, tokens = brute_force(step, V, T, eos)
    assert b.score == pytest.approx(score, abs=1e-12)
    assert b.tokens == tokens


def test_beam_is_deterministic():
    m = tiny_model(seed=3)
    a = np.random.default_rng(3).standard_normal((5, 8))
    v = np.random.default_rng(4).standard_normal((5, 6))
    assert decode_features(m, a, v, 6, 7) == decode_features(m, a, v, 6, 7)


def test_beam_argument_errors():
    with pytest.raises(UsageError):
        beam_search(toy_step(0), 0, 5)
    with pytest.raises(UsageError):
        greedy_decode(toy_step(0), 0)


# -- WER -----------------------------------------------------------------------------


def test_wer_identical():
    assert wer([1, 2, 3], [1, 2, 3]) == 0.0


def test_wer_empty_hypothesis():
    assert wer([1, 2, 3, 4], []) == 1.0


def test_wer_sub_plus_insert():
    ref, hyp = "a b c d".split(), "a x c d e".split()
    assert wer(ref, hyp) == 0.5
    assert edit_distance(ref, hyp) == edit_distance_table(ref, hyp)[-1, -1] == 2


def test_wer_empty_reference():
    with pytest.raises(UsageError):
        wer([], [1])


# -- evaluation matrix --------------------------------------------------------------------


def test_mixtures_are_model_independent(tiny_corpus):
    s = tiny_corpus[0]
    x = eval_mixture(s, "babble", 5, corpus_seed=9).samples
    np.testing.assert_array_equal(x, eval_mixture(s, "babble", 5, corpus_seed=9).samples)
    assert not np.array_equal(x, eval_mixture(s, "babble", 0, corpus_seed=9).samples)
    np.testing.assert_array_equal(eval_features(s, "hum", CLEAN_COL, 9, 2).audio,
                                  eval_features(s, "babble", CLEAN_COL, 9, 2).audio)


def test_evaluate_matrix_protocol(tiny_corpus):
    m = tiny_model(seed=5)
    mat = evaluate_matrix(m, tiny_corpus, ["babble", "hum"], [10, 0], corpus_seed=9, width=2)
    assert mat.row("early", "align", "babble")[CLEAN_COL] == mat.row("early", "align", "hum")[CLEAN_COL]
    assert mat.columns() == [CLEAN_COL, 10, 0]
    row = mat.row("early", "align", "hum")
    assert mat.noisy_mean("early", "align", "hum") == pytest.approx((row[10] + row[0]) / 2, abs=1e-12)
    again = evaluate_matrix(m, tiny_corpus, ["babble", "hum"], [10, 0], corpus_seed=9, width=2, threads=3)
    assert to_csv(again) == to_csv(mat)


def test_clean_only_grid_is_single_column(tiny_corpus):
    mat = evaluate_matrix(tiny_model(), tiny_corpus, ["babble"], [], corpus_seed=1, width=1)
    assert mat.columns() == [CLEAN_COL]
    header = to_text(mat).splitlines()[1]
    assert [c.strip() for c in header.split(" | ")[2:]] == [CLEAN_COL, "mean on noisy data"]


def test_audio_only_rows_are_labelled():
    from avfusion.evaluation import model_labels
    from avfusion.model import ModelConfig
    cfg = ModelConfig(**{**tiny_config().to_dict(), "audio_only": True})
    assert model_labels(AVSRModel.create(FusionSpec("early", "align"), cfg)) == ("audio", "none")


# -- reports --------------------------------------------------------------------------------


def test_reference_row_renders():
    cols = [CLEAN_COL, 20, 15, 10, 5, 0, -5]
    vals = dict(zip(cols, [0.0644, 0.0697, 0.0734, 0.0909, 0.1407, 0.2437, 0.4816]))
    row = render_row("early", "align", vals, cols)
    assert row[:2] == ["Early-fusion", "AV-align"]
    assert row[2] == "6.44%" and row[-2] == "48.16%" and row[-1] == "18.33%"


def test_noisy_mean_is_arithmetic_mean_of_snr_cells():
    m = EvalMatrix()
    vals = [0.0697, 0.0734, 0.0909, 0.1407, 0.2437, 0.4816]
    m.set("early", "align", "babble", "clean", 0.0644)
    for s, v in zip((20, 15, 10, 5, 0, -5), vals):
        m.set("early", "align", "babble", s, v)
    assert abs(m.noisy_mean("early", "align", "babble") - sum(vals) / 6) < 1e-12


def test_empty_report_is_header_only(tmp_path):
    csv_path, txt_path = report([], tmp_path)
    assert csv_path.read_text() == "stage,block,noise,snr_db,wer\n"
    lines = txt_path.read_text().splitlines()
    assert len(lines) == 1 and lines[0].startswith("Fusion stage | Fusion Block | clean")


def test_csv_round_trip():
    m = EvalMatrix()
    rng = np.random.default_rng(0)
    for spec in FusionSpec.all():
        for noise in ("babble", "hum"):
            for snr in (CLEAN_COL, 20, -5):
                m.set(spec.stage.value, spec.block.value, noise, snr, float(rng.random()))
    assert parse_csv(to_csv(m)).cells == m.cells


def test_golden_fixture(tmp_path):
    m = parse_csv((GOLDEN / "fixture_wer.csv").read_text())
    csv_path, txt_path = report([m], tmp_path)
    assert csv_path.read_bytes() == (GOLDEN / "fixture_wer.csv").read_bytes()
    assert txt_path.read_text() == (GOLDEN / "fixture_wer.txt").read_text()


def test_parse_csv_rejects_bad_header():
    with pytest.raises(UsageError):
        parse_csv("a,b\n")
