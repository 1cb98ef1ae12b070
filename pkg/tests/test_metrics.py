import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from noisykd.errors import InvalidInputError
from noisykd.metrics import accuracy, confusion_matrix, label_agreement, matthews_corr, precision_recall


def test_accuracy_examples():
    assert accuracy([2, 0, 1], [2, 0, 1]) == 1.0
    assert accuracy([0, 0, 0, 0], [0, 1, 0, 1]) == 0.5
    assert accuracy([1, 2, 0], [0, 1, 2]) == 0.0


def test_accuracy_errors():
    with pytest.raises(InvalidInputError):
        accuracy([0, 1], [0])
    with pytest.raises(InvalidInputError):
        accuracy([], [])


def test_mcc_perfect_and_constant():
    assert matthews_corr([0, 1, 1, 0], [0, 1, 1, 0]) == pytest.approx(1.0)
    assert matthews_corr([1, 1, 1, 1], [0, 1, 1, 0]) == 0.0


def test_mcc_binary_counts():
    # TP=3, TN=4, FP=1, FN=2 -> (12 - 2) / sqrt(4 * 5 * 5 * 6)
    gold = [1] * 3 + [0] * 4 + [0] * 1 + [1] * 2
    pred = [1] * 3 + [0] * 4 + [1] * 1 + [0] * 2
    assert matthews_corr(pred, gold) == pytest.approx(10 / math.sqrt(600), abs=1e-9)


def test_mcc_length_mismatch():
    with pytest.raises(InvalidInputError):
        matthews_corr([0, 1], [0])


labels3 = st.lists(st.integers(0, 3), min_size=2, max_size=60)


@given(st.data())
def test_mcc_permutation_invariant(data):
    gold = data.draw(labels3)
    pred = data.draw(st.lists(st.integers(0, 3), min_size=len(gold), max_size=len(gold)))
    perm = np.array(data.draw(st.permutations(range(4))))
    assert matthews_corr(perm[pred], perm[gold]) == pytest.approx(matthews_corr(pred, gold), abs=1e-12)


@given(labels3)
def test_mcc_self(x):
    if len(set(x)) >= 2:
        assert matthews_corr(x, x) == pytest.approx(1.0)


@given(st.data())
def test_accuracy_is_trace_over_n(data):
    gold = data.draw(labels3)
    pred = data.draw(st.lists(st.integers(0, 3), min_size=len(gold), max_size=len(gold)))
    cm = confusion_matrix(pred, gold, 4)
    assert cm.sum() == len(gold)
    assert accuracy(pred, gold) == pytest.approx(np.trace(cm) / len(gold))


def test_mcc_matches_binary_formula_on_random_data():
    rng = np.random.default_rng(0)
    for _ in range(50):
        gold, pred = rng.integers(0, 2, (2, 40))
        tp = np.sum((pred == 1) & (gold == 1))
        tn = np.sum((pred == 0) & (gold == 0))
        fp = np.sum((pred == 1) & (gold == 0))
        fn = np.sum((pred == 0) & (gold == 1))
        den = math.sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn))
        expect = 0.0 if den == 0 else (tp * tn - fp * fn) / den
        assert matthews_corr(pred, gold) == pytest.approx(expect, abs=1e-12)


def test_label_agreement():
    assert label_agreement([0, 1, 2], [0, 1, 2]) == 1.0
    assert label_agreement([0, 1, 0], [1, 0, 1]) == 0.0
    with pytest.raises(InvalidInputError):
        label_agreement([0], [0, 1])


def test_agreement_after_quarter_noise():
    from noisykd.data import generate_synthetic, inject_noise

    ds = inject_noise(generate_synthetic("blobs", 400, 2, 2, 1.0, seed=0), 0.25, seed=0)
    assert label_agreement(ds.observed_labels, ds.true_labels) == 0.75


def test_precision_recall():
    assert precision_recall([True, True, False, False], [True, False, True, False]) == (0.5, 0.5)
    assert precision_recall([False, False], [True, False]) == (None, 0.0)
