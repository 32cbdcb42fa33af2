import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from colt.errors import ContractError, ParameterError
from colt.tailness import (
    TailnessState,
    batch_tailness,
    momentum_update,
    read_scores_csv,
    tailness_from_logits,
    topk_count,
    write_scores_csv,
)

probs = st.lists(st.floats(1e-6, 0.999), min_size=1, max_size=60)


def test_tailness_examples():
    assert tailness_from_logits([0.2, 0.1], 100) == pytest.approx(-0.3, abs=1e-15)
    assert tailness_from_logits([0.2119, 0.2119], 50) == pytest.approx(-0.2119, abs=1e-15)
    assert TailnessState().k_percent == 2.0


def test_topk_count_ceil_and_floor_of_one():
    assert topk_count(510, 2) == 11  # ceil(10.2)
    assert topk_count(3, 2) == 1
    assert topk_count(100, 2) == 2


def test_tailness_errors():
    with pytest.raises(ContractError):
        tailness_from_logits([], 2)
    with pytest.raises(ParameterError):
        tailness_from_logits([0.1], 0)
    with pytest.raises(ParameterError):
        TailnessState(momentum=1.0)


def test_batch_matches_scalar():
    g = np.random.default_rng(0)
    neg = g.random((7, 30)) / 30
    rows = [tailness_from_logits(r, 10) for r in neg]
    np.testing.assert_allclose(batch_tailness(neg, 10), rows, atol=1e-15)
    with pytest.raises(ContractError):
        batch_tailness(np.empty((3, 0)))


@given(probs, st.floats(0.5, 100.0))
def test_larger_selected_logit_lowers_score(p, k):
    p = np.array(p)
    s = tailness_from_logits(p, k)
    n_top = topk_count(len(p), k)
    j = int(np.argsort(-p, kind="stable")[0])  # always among the selected
    bumped = p.copy()
    bumped[j] += 1e-3
    assert tailness_from_logits(bumped, k) < s
    assert n_top >= 1 and s <= 0


def test_momentum_examples():
    st0 = TailnessState(momentum=0.9, scores={1: -0.5})
    out = momentum_update(st0, {1: -0.3, 2: -0.7})
    assert out.scores[1] == pytest.approx(-0.48, abs=1e-15)
    assert out.scores[2] == -0.7  # first observation is taken as is
    assert out.epoch == 1 and st0.scores == {1: -0.5}
    memoryless = momentum_update(TailnessState(momentum=0.0, scores={1: -0.5}), {1: -0.3})
    assert memoryless.scores[1] == -0.3


@given(st.floats(0, 0.999), st.floats(-1, 0), st.floats(-1, 0))
def test_momentum_is_convex_combination(m, old, fresh):
    out = momentum_update(TailnessState(momentum=m, scores={0: old}), {0: fresh}).scores[0]
    lo, hi = min(old, fresh), max(old, fresh)
    assert lo - 1e-15 <= out <= hi + 1e-15
    same = momentum_update(TailnessState(momentum=m, scores={0: old}), {0: old}).scores[0]
    assert same == pytest.approx(old, abs=1e-15)


def test_score_array_missing_id():
    with pytest.raises(ContractError, match="7"):
        TailnessState(scores={1: -0.1}).score_array([1, 7])


def test_scores_csv_roundtrip(tmp_path):
    state = TailnessState(scores={3: -0.125, 1: -0.5, 2: -1 / 3})
    path = tmp_path / "t.csv"
    write_scores_csv(path, state, {1: 0, 3: 4})
    scores, labels = read_scores_csv(path)
    assert scores == state.scores
    assert labels == {1: 0, 2: -1, 3: 4}
    assert path.read_text().splitlines()[0] == "sample_id,class_id,score"
