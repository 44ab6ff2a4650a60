import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glaucoscreen.metrics import (
    ConfusionCounts,
    MetricsReport,
    UndefinedMetricError,
    average_precision,
    confusion_counts,
    metrics_summary,
    roc_auc,
    threshold_metrics,
)
from oracles import concordance, random_binary_case, step_sum_ap


# -- confusion counts -----------------------------------------------------------


def test_counts_two_samples():
    assert confusion_counts([1, 0], [0.9, 0.1], 0.5) == ConfusionCounts(tp=1, fp=0, tn=1, fn=0)


def test_counts_all_below_threshold():
    c = confusion_counts([1, 0, 1], [0.1, 0.2, 0.3], 0.5)
    assert c.tp == 0 and c.fp == 0


def test_counts_hand_tally():
    assert confusion_counts([1, 1, 0, 0], [0.6, 0.4, 0.6, 0.4], 0.5) == ConfusionCounts(tp=1, fp=1, tn=1, fn=1)


def test_counts_threshold_inclusive():
    assert confusion_counts([1], [0.5], 0.5).tp == 1


@pytest.mark.parametrize("labels, scores", [([], []), ([1, 0], [0.5]), ([2], [0.5])])
def test_counts_invalid(labels, scores):
    with pytest.raises(ValueError):
        confusion_counts(labels, scores)


def test_counts_matrix_layout():
    np.testing.assert_array_equal(ConfusionCounts(tp=4, fp=3, tn=2, fn=1).as_matrix(), [[2, 3], [1, 4]])


@settings(max_examples=200, deadline=None)
@given(
    data=st.lists(st.tuples(st.integers(0, 1), st.floats(0, 1)), min_size=1, max_size=60),
    threshold=st.floats(0, 1),
)
def test_counts_invariants(data, threshold):
    labels = [d[0] for d in data]
    scores = [d[1] for d in data]
    c = confusion_counts(labels, scores, threshold)
    assert c.total == len(labels)
    assert c.tp + c.fn == sum(labels)
    m = threshold_metrics(c)
    assert m["acc"] == (c.tp + c.tn) / c.total
    if c.tp + c.fn:
        assert m["sen"] == c.tp / (c.tp + c.fn)
    if c.tn + c.fp:
        assert m["spe"] == c.tn / (c.tn + c.fp)


# -- roc auc -----------------------------------------------------------------------


def test_auc_perfect():
    assert roc_auc([0, 0, 1, 1], [0.1, 0.2, 0.8, 0.9]) == 1.0


def test_auc_inverted():
    assert roc_auc([1, 1, 0, 0], [0.1, 0.2, 0.8, 0.9]) == 0.0


def test_auc_tie():
    assert roc_auc([1, 0], [0.5, 0.5]) == 0.5


@pytest.mark.parametrize("labels", [[1, 1], [0, 0, 0]])
def test_auc_single_class(labels):
    with pytest.raises(UndefinedMetricError):
        roc_auc(labels, [0.5] * len(labels))


@pytest.mark.parametrize("ties", [False, True])
def test_auc_equals_pairwise_concordance(ties):
    rng = np.random.default_rng(17 + ties)
    for _ in range(200):
        y, s = random_binary_case(rng, ties=ties)
        assert abs(roc_auc(y, s) - concordance(y, s)) <= 1e-12


# -- average precision --------------------------------------------------------------


def test_ap_perfect():
    assert average_precision([1, 1, 0, 0], [0.9, 0.8, 0.2, 0.1]) == 1.0


def test_ap_positive_second():
    assert average_precision([0, 1], [0.9, 0.1]) == 0.5


def test_ap_single_positive_first():
    assert average_precision([1, 0, 0, 0], [0.9, 0.5, 0.4, 0.1]) == 1.0


def test_ap_ties_are_pessimistic():
    assert average_precision([1, 0], [0.5, 0.5]) == 0.5


def test_ap_no_positive():
    with pytest.raises(UndefinedMetricError):
        average_precision([0, 0], [0.1, 0.2])


@pytest.mark.parametrize("ties", [False, True])
def test_ap_equals_step_sum_oracle(ties):
    rng = np.random.default_rng(29 + ties)
    for _ in range(200):
        y, s = random_binary_case(rng, ties=ties)
        assert average_precision(y, s) == pytest.approx(step_sum_ap(y, s), abs=1e-12)


def test_metrics_invariant_under_monotone_transform():
    rng = np.random.default_rng(31)
    transforms = [lambda s: s**3, lambda s: np.exp(4 * s) - 1, lambda s: 1 / (1 + np.exp(-10 * (s - 0.3)))]
    for _ in range(100):
        y, s = random_binary_case(rng, ties=bool(rng.integers(0, 2)))
        s = np.asarray(s)
        for f in transforms:
            assert roc_auc(y, f(s)) == roc_auc(y, s)
            assert average_precision(y, f(s)) == pytest.approx(average_precision(y, s), abs=1e-15)


# -- summary ------------------------------------------------------------------------


def test_summary_perfect():
    r = metrics_summary([0, 1, 0, 1], [0.1, 0.9, 0.2, 0.8])
    assert (r.ap, r.auc, r.acc, r.f1, r.sen, r.spe) == (1.0, 1.0, 1.0, 1.0, 1.0, 1.0)


def test_summary_constant_zero_scores():
    r = metrics_summary([0, 1, 0, 1], [0.0] * 4, 0.5)
    assert r.acc == 0.5 and r.sen == 0.0 and r.spe == 1.0 and r.f1 == 0.0
    assert r.auc == 0.5


def test_summary_f1_matches_definition():
    r = metrics_summary([1, 1, 1, 0, 0], [0.9, 0.7, 0.2, 0.6, 0.1])
    prec, sen = 2 / 3, 2 / 3
    assert r.f1 == pytest.approx(2 * prec * sen / (prec + sen), abs=1e-15)


def test_report_columns_and_json_round_trip():
    r = metrics_summary([0, 1, 1, 0], [0.3, 0.6, 0.4, 0.1])
    assert MetricsReport.COLUMNS == ("ap", "auc", "acc", "f1", "sen", "spe")
    assert len(r.row().split(" | ")) == 6
    back = MetricsReport.from_dict(json.loads(r.to_json()))
    assert back == r
