import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from megdiff.divergence import (CorpusSplit, category_improvement, extract_sets,
                                hypothesis_cv_splits, merge_annotations, sentence_scores)
from megdiff.exceptions import ValidationError
from megdiff.tensor_io import StimulusSequence, WordEvent


def _stim(sentence_ids):
    return StimulusSequence(tuple(
        WordEvent(i, f"t{i}", 100 * i, 100, int(s)) for i, s in enumerate(sentence_ids)))


def _scores(means):
    n = len(means)
    stim = _stim(np.repeat(np.arange(n), 2))
    mse = np.repeat(np.asarray(means, float), 2)[:, None] * np.ones((1, 3))
    return sentence_scores(mse, stim)


# -- sentence_scores --

def test_all_equal_ties_by_id():
    scores = _scores([1.0] * 5)
    assert [s.sentence_id for s in scores] == [0, 1, 2, 3, 4]
    assert [s.rank for s in scores] == [1, 2, 3, 4, 5]


def test_doubled_sentence_ranks_first():
    means = [1.0, 1.0, 2.0, 1.0]
    assert _scores(means)[0].sentence_id == 2


def test_hand_three_sentences():
    stim = _stim([0, 0, 1, 1, 1, 2])
    mse = np.array([[1.0, 3.0], [2.0, 2.0], [0.0, 1.0], [1.0, 1.0], [4.0, 5.0], [9.0, np.nan]])
    scores = sentence_scores(mse, stim)
    by_id = {s.sentence_id: s for s in scores}
    assert by_id[0].mean_mse == pytest.approx(2.0)
    assert by_id[1].mean_mse == pytest.approx(2.0)
    assert by_id[2].mean_mse == pytest.approx(9.0)
    assert [s.sentence_id for s in scores] == [2, 0, 1]
    assert by_id[0].text == "t0 t1"
    assert by_id[2].n_cells == 1


def test_window_range_and_missing_sentence(caplog):
    stim = _stim([0, 0, 1])
    mse = np.array([[1.0, 5.0], [1.0, 5.0], [np.nan, 2.0]])
    scores = sentence_scores(mse, stim, window_range=(0, 1))
    assert [s.sentence_id for s in scores] == [0]
    assert "excluded" in caplog.text
    with pytest.raises(ValidationError):
        sentence_scores(mse, stim, window_range=(1, 1))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 6))
def test_conservation(seed, n_sent):
    rng = np.random.default_rng(seed)
    lengths = rng.integers(1, 5, size=n_sent)
    stim = _stim(np.repeat(np.arange(n_sent), lengths))
    mse = rng.random((lengths.sum(), 4))
    mse[rng.random(mse.shape) < 0.2] = np.nan
    scores = sentence_scores(mse, stim)
    total = sum(s.mean_mse * s.n_cells for s in scores)
    assert total == pytest.approx(np.nansum(mse), rel=1e-9, abs=1e-12)


# -- extract_sets --

def test_extract_four_top1():
    split = extract_sets(_scores([1.0, 4.0, 0.5, 2.0]), top_n=1)
    assert [s.sentence_id for s in split.D0] == [1]
    assert [s.sentence_id for s in split.D1] == [2]


def test_extract_cardinality():
    rng = np.random.default_rng(0)
    split = extract_sets(_scores(rng.random(250)), top_n=100)
    assert len(split.D0) == len(split.D1) == 100
    assert not {s.sentence_id for s in split.D0} & {s.sentence_id for s in split.D1}


def test_extract_shrinks_with_warning():
    with pytest.warns(UserWarning):
        split = extract_sets(_scores([1.0, 2.0, 3.0]), top_n=5)
    assert len(split.D0) == len(split.D1) == 1
    assert split.provenance["top_n"] == 1 and split.provenance["requested_top_n"] == 5


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.01, 100), min_size=4, max_size=20, unique=True))
def test_extract_order_invariance(means):
    a = extract_sets(_scores(means), top_n=2)
    b = extract_sets(_scores(np.log(means) * 3 + 7), top_n=2)
    assert [s.sentence_id for s in a.D0] == [s.sentence_id for s in b.D0]
    assert [s.sentence_id for s in a.D1] == [s.sentence_id for s in b.D1]


def test_split_roundtrip(tmp_path):
    split = extract_sets(_scores([1.0, 4.0, 0.5, 2.0]), top_n=2, provenance={"run": "x"})
    split.save(tmp_path / "s.json")
    back = CorpusSplit.load(tmp_path / "s.json")
    assert [s.text for s in back.D0] == [s.text for s in split.D0]
    assert back.provenance["run"] == "x"


# -- CV splits --

def _split(n):
    s = _scores(np.arange(2 * n, dtype=float))
    return extract_sets(s, top_n=n)


def test_cv_sizes():
    for (_, _), (v0, v1) in hypothesis_cv_splits(_split(99), 3):
        assert len(v0) == 33 and len(v1) == 33


def test_cv_deterministic_and_partition():
    split = _split(20)
    a = hypothesis_cv_splits(split, 3, seed=4)
    b = hypothesis_cv_splits(split, 3, seed=4)
    ids = lambda xs: [s.sentence_id for s in xs]
    assert [(ids(p0), ids(v0)) for (p0, _), (v0, _) in a] == [(ids(p0), ids(v0)) for (p0, _), (v0, _) in b]
    for corpus, pick in ((split.D0, 0), (split.D1, 1)):
        vals = [ids(v[pick]) for _, v in a]
        flat = sorted(x for v in vals for x in v)
        assert flat == sorted(ids(corpus))
        for (prop, val) in a:
            assert not set(ids(prop[pick])) & set(ids(val[pick]))


def test_cv_errors():
    with pytest.raises(ValidationError):
        hypothesis_cv_splits(_split(2), 3)
    with pytest.raises(ValidationError):
        hypothesis_cv_splits(_split(5), 1)


# -- annotations --

def test_merge_rules():
    assert merge_annotations([[1], [1], [0]])[0]
    assert not merge_annotations([[1], [0], [0]])[0]


def test_merge_hand_case():
    raters = [[1, 0, 1, 0, 1],
              [1, 1, 0, 0, 0],
              [0, 1, 1, 0, 0]]
    np.testing.assert_array_equal(merge_annotations(raters), [True, True, True, False, False])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.permutations(range(4)))
def test_merge_rater_order(seed, perm):
    votes = np.random.default_rng(seed).integers(0, 2, size=(4, 12))
    np.testing.assert_array_equal(merge_annotations(votes[list(perm)]), merge_annotations(votes))


def test_merge_errors():
    with pytest.raises(ValidationError):
        merge_annotations([[1, 0], [1]])
    with pytest.raises(ValidationError):
        merge_annotations([[1, 0]], min_agree=2)


# -- category analysis --

def test_category_zero_delta():
    mask = np.arange(100) % 3 == 0
    rep = category_improvement(np.zeros((100, 4)), mask)
    assert not rep.significant.any()
    assert np.all(rep.p == 1.0)


def test_category_planted_windows():
    rng = np.random.default_rng(1)
    n, t = 2000, 20
    mask = rng.random(n) < 0.3
    delta = rng.standard_normal((n, t))
    delta[np.ix_(mask, [8, 9, 10, 11])] += 2.0
    rep = category_improvement(delta, mask)
    flagged = set(np.flatnonzero(rep.significant))
    assert {8, 9, 10, 11} <= flagged and len(flagged - {8, 9, 10, 11}) <= 1
    assert rep.stars()[8] == "***"


def test_category_polarity_symmetry():
    rng = np.random.default_rng(2)
    delta = rng.standard_normal((60, 3))
    mask = rng.random(60) < 0.5
    a = category_improvement(delta, mask)
    b = category_improvement(delta, ~mask)
    np.testing.assert_allclose(b.t, -a.t, rtol=1e-12)


def test_category_csv_and_errors(tmp_path):
    rng = np.random.default_rng(3)
    rep = category_improvement(rng.standard_normal((20, 2)), np.arange(20) < 5)
    text = rep.to_csv(tmp_path / "c.csv")
    lines = text.splitlines()
    assert lines[0] == "window,mean_in,mean_out,se_in,se_out,t,p,significant"
    assert len(lines) == 3
    assert (tmp_path / "c.csv").read_text() == text
    with pytest.raises(ValidationError):
        category_improvement(np.zeros((5, 2)), np.ones(5, bool))
    with pytest.raises(ValidationError):
        category_improvement(np.zeros((5, 2)), np.ones(4, bool))
