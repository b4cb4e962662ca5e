import numpy as np
import pytest
from hypothesis import given, strategies as st

from uqscore.core import (PredictionRecord, ProbVector, ScoreSeries, gap_delta, mis_indicator,
                          varphi_of)
from uqscore.errors import InvalidParameter


@pytest.mark.parametrize("y, y_hat, expected", [(0, 0, 0), (0, 1, 1), (1, 1, 0), (1, 0, 1)])
def test_mis_indicator(y, y_hat, expected):
    assert mis_indicator(y, y_hat) == expected


@pytest.mark.parametrize("probs, y, expected", [((0.7, 0.3), 0, 0.3), ((0.5, 0.5), 1, 0.5), ((1.0, 0.0), 1, 1.0)])
def test_gap_delta(probs, y, expected):
    assert gap_delta(ProbVector(*probs), y) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("probs, b, expected", [((0.7, 0.3), 0, 0.3), ((0.7, 0.3), 1, 0.7), ((0.5, 0.5), 0, 0.5)])
def test_varphi_of(probs, b, expected):
    assert varphi_of(ProbVector(*probs), b) == pytest.approx(expected, abs=1e-15)


def test_labels_are_validated():
    with pytest.raises(InvalidParameter):
        mis_indicator(2, 0)
    with pytest.raises(InvalidParameter):
        gap_delta(ProbVector(0.5, 0.5), -1)


def test_probvector_normalization():
    assert ProbVector(0.3, 0.7).as_tuple() == (0.3, 0.7)
    pv = ProbVector(0.3 + 5e-10, 0.7)
    assert abs(pv.p0 + pv.p1 - 1.0) < 1e-15
    with pytest.raises(InvalidParameter):
        ProbVector(0.7, 0.2)
    with pytest.raises(InvalidParameter):
        ProbVector(float("nan"), 0.5)


def test_argmax_tie_goes_to_label_zero():
    assert ProbVector(0.5, 0.5).argmax == 0
    rec = PredictionRecord.from_arrays("a", [[0.2, 0.8], [0.8, 0.2]])
    assert rec.y_hat == 0


def test_record_requires_members():
    with pytest.raises(InvalidParameter):
        PredictionRecord("a", ())


prob = st.floats(0.0, 1.0, allow_nan=False)


@given(st.lists(prob, min_size=1, max_size=12))
def test_record_mean_is_left_to_right_mean(p1s):
    rec = PredictionRecord.from_arrays("x", [[1 - p, p] for p in p1s])
    s0 = s1 = 0.0
    for m in rec.members:
        s0 += m.p0
        s1 += m.p1
    assert rec.mean_prob.p0 == s0 / len(p1s)
    assert rec.mean_prob.p1 == s1 / len(p1s)
    assert abs(rec.mean_prob.p0 + rec.mean_prob.p1 - 1.0) <= 1e-12
    assert rec.y_hat == (1 if rec.mean_prob.p1 > rec.mean_prob.p0 else 0)


@given(prob, st.integers(0, 1))
def test_mis_iff_delta_above_half(p1, y):
    rec = PredictionRecord.from_arrays("x", [[1 - p1, p1]])
    if rec.mean_prob.p0 == rec.mean_prob.p1:
        return
    delta = gap_delta(rec.mean_prob, y)
    assert (mis_indicator(y, rec.y_hat) == 1) == (delta > 0.5)


@given(prob, st.integers(0, 1))
def test_bayes_agreement_iff_varphi_below_half(p1, b):
    pv = ProbVector(1 - p1, p1)
    if pv.p0 == pv.p1:
        return
    assert (pv.argmax == b) == (varphi_of(pv, b) < 0.5)


def test_score_series_validation():
    s = ScoreSeries.from_values("s", [0.1, 0.2])
    assert s.ids == ("0", "1")
    with pytest.raises(InvalidParameter):
        ScoreSeries.from_values("s", [0.1, np.inf])
    with pytest.raises(InvalidParameter):
        ScoreSeries("s", ("a", "a"), np.array([0.1, 0.2]))
