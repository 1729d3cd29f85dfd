import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from megdiff.exceptions import ValidationError
from megdiff.mcq import MCQItem, load_items, mcq_accuracy, mcq_loss, option_score, score_table


def test_equal_scores_loss_is_log_n():
    for n in (2, 3, 4, 7):
        assert mcq_loss([0.3] * n, 0) == pytest.approx(math.log(n), abs=1e-12)


def test_two_option_hand_value():
    assert mcq_loss([1.0, 0.0], 0) == pytest.approx(math.log(1 + math.exp(-1)), abs=1e-12)
    assert mcq_loss([1.0, 0.0], 0) == pytest.approx(0.313262, abs=1e-6)
    assert mcq_loss([1.0, 0.0], 1) == pytest.approx(1.313262, abs=1e-6)


def test_large_scores_stable():
    loss = mcq_loss([1e4, 0.0, -1e4], 0)
    assert loss == 0.0
    assert mcq_loss([1e4, 0.0], 1) == pytest.approx(1e4)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=6), st.floats(-1e3, 1e3), st.data())
def test_shift_invariance(scores, c, data):
    k = data.draw(st.integers(0, len(scores) - 1))
    shifted = [s + c for s in scores]
    assert mcq_loss(shifted, k) == pytest.approx(mcq_loss(scores, k), abs=1e-9)
    assert mcq_loss(scores, k) >= 0


def test_option_score_sum():
    assert option_score([1.5, -0.5, 2.0]) == 3.0
    with pytest.raises(ValidationError):
        option_score([])


def test_accuracy_and_ties(caplog):
    items = [([2.0, 1.0], 0), ([0.0, 3.0], 0), ([1.0, 1.0], 0), ([0.0, 0.0, 5.0], 2)]
    assert mcq_accuracy(items) == 0.5
    assert "tied" in caplog.text


def test_accuracy_all_ties_zero():
    assert mcq_accuracy([([1.0, 1.0], 0), ([2.0, 2.0], 1)]) == 0.0


def test_coin_flip_accuracy():
    rng = np.random.default_rng(0)
    items = [(rng.standard_normal(2), int(rng.integers(2))) for _ in range(4000)]
    assert mcq_accuracy(items) == pytest.approx(0.5, abs=0.03)


def test_item_validation():
    with pytest.raises(ValidationError):
        MCQItem("q", ("a",), 0, ((1.0,),))
    with pytest.raises(ValidationError):
        MCQItem("q", ("a", "b"), 2, ((1.0,), (2.0,)))
    with pytest.raises(ValidationError):
        MCQItem("q", ("a", "b"), 0, ((1.0,), ()))
    with pytest.raises(ValidationError):
        mcq_loss([1.0], 0)
    with pytest.raises(ValidationError):
        mcq_accuracy([])


def test_option_only_scoring():
    item = MCQItem("q", ("a", "b"), 1, ((5.0, 0.1), (1.0, 0.2)), stem_lengths=(1, 1))
    assert item.scores() == [5.1, 1.2]
    assert item.scores(option_only=True) == [0.1, 0.2]
    assert mcq_accuracy([item]) == 0.0
    assert mcq_accuracy([item], option_only=True) == 1.0
    with pytest.raises(ValidationError):
        MCQItem("q", ("a", "b"), 0, ((1.0,), (2.0,))).scores(option_only=True)


def test_load_and_table(tmp_path):
    path = tmp_path / "items.jsonl"
    rows = [{"stem": "q1", "options": ["a", "b"], "correct_index": 0, "logits": [[1.0], [0.0]]},
            {"stem": "q2", "options": ["a", "b", "c"], "correct_index": 2,
             "logits": [[0.0], [0.0], [0.0]], "id": "x"}]
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n\n")
    items = load_items(path)
    assert [it.item_id for it in items] == ["0", "x"]
    lines = score_table(items).splitlines()
    assert lines[0] == "item_id,score_0,score_1,score_2,loss,correct"
    assert lines[1].startswith("0,1,0,,0.3132616875")
    assert lines[1].endswith(",1")
    assert lines[2].endswith(",0")
