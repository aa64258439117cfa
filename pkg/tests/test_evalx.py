import itertools
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adeqa.errors import InconsistentTrace, KTooLarge, KTooSmall
from adeqa.evalx import (
    CascadeTally, ConfusionCounts, MatchCriterion, OutcomeCategory as OC, cascade_confusion,
    categorize_sentence, prf_scores, span_match, stratified_kfold,
)


def test_prf_hand():
    s = prf_scores(ConfusionCounts(3, 1, 2))
    assert s.precision == 0.75 and s.recall == 0.6
    assert s.f1 == pytest.approx(2 * 0.75 * 0.6 / (0.75 + 0.6), abs=1e-15)
    assert s.f1 == pytest.approx(0.6667, abs=1e-4)


def test_prf_perfect_and_zero():
    assert prf_scores(ConfusionCounts(5, 0, 0)) == prf_scores(ConfusionCounts(1, 0, 0))
    assert tuple(vars(prf_scores(ConfusionCounts(5, 0, 0))).values()) == (1.0, 1.0, 1.0)
    assert tuple(vars(prf_scores(ConfusionCounts(0, 0, 0))).values()) == (0.0, 0.0, 0.0)


@given(st.integers(0, 10**6), st.integers(0, 10**6), st.integers(0, 10**6))
def test_prf_direct_formula(tp, fp, fn):
    s = prf_scores(ConfusionCounts(tp, fp, fn))
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    assert abs(s.precision - p) <= 1e-12 and abs(s.recall - r) <= 1e-12 and abs(s.f1 - f) <= 1e-12


def test_span_match():
    assert span_match((32, 36), [(32, 36)], "exact") and span_match((32, 36), [(32, 36)], "overlap")
    assert not span_match((30, 36), [(32, 36)], MatchCriterion.EXACT)
    assert span_match((30, 36), [(32, 36)], MatchCriterion.OVERLAP)
    assert not span_match((30, 36), [], "overlap")
    assert not span_match((30, 32), [(32, 36)], "overlap")


@given(st.integers(0, 30), st.integers(1, 10), st.integers(0, 30), st.integers(1, 10))
def test_overlap_interval_oracle(a, la, b, lb):
    shared = set(range(a, a + la)) & set(range(b, b + lb))
    assert span_match((a, a + la), [(b, b + lb)], "overlap") == bool(shared)


def test_categorize_examples():
    assert categorize_sentence(True, False) is OC.POS_NO_DRUG
    assert categorize_sentence(True, True, True, True) is OC.POS_ANSWERED_CORRECT
    assert categorize_sentence(False, True, True) is OC.NEG_ANSWERED


def test_categorize_lattice_exhaustive():
    expected = {
        (True, False, None, None): OC.POS_NO_DRUG,
        (True, True, False, None): OC.POS_FILTERED,
        (True, True, True, True): OC.POS_ANSWERED_CORRECT,
        (True, True, True, False): OC.POS_ANSWERED_WRONG,
        (False, False, None, None): OC.NEG_NO_DRUG,
        (False, True, False, None): OC.NEG_FILTERED,
        (False, True, True, None): OC.NEG_ANSWERED,
        (False, True, True, False): OC.NEG_ANSWERED,
    }
    seen = set()
    for trace in itertools.product([True, False], [True, False], [True, False, None], [True, False, None]):
        if trace in expected:
            cat = categorize_sentence(*trace)
            assert cat is expected[trace]
            seen.add(cat)
        elif trace == (False, False, False, None) or trace == (True, False, False, None):
            # Classifier never ran; an explicit False is tolerated as "did not pass".
            assert categorize_sentence(*trace) in (OC.POS_NO_DRUG, OC.NEG_NO_DRUG)
        else:
            with pytest.raises(InconsistentTrace):
                categorize_sentence(*trace)
    assert seen == set(OC)


def test_cascade_hand_case():
    tally = CascadeTally({OC.NEG_NO_DRUG: 2, OC.NEG_FILTERED: 1, OC.POS_ANSWERED_CORRECT: 3, OC.POS_NO_DRUG: 1,
                          OC.POS_FILTERED: 1, OC.POS_ANSWERED_WRONG: 1, OC.NEG_ANSWERED: 1})
    c = cascade_confusion(tally)
    assert (c.tp, c.fn, c.fp) == (6, 2, 2)
    s = prf_scores(c)
    assert s.precision == s.recall == s.f1 == 0.75


def test_cascade_all_correct():
    c = cascade_confusion(CascadeTally({OC.NEG_NO_DRUG: 4, OC.NEG_FILTERED: 2, OC.POS_ANSWERED_CORRECT: 7}))
    assert c.fp == c.fn == 0
    assert tuple(vars(prf_scores(c)).values()) == (1.0, 1.0, 1.0)


def random_trace(rng):
    positive = rng.random() < 0.5
    drug = rng.random() < 0.7
    passed = (rng.random() < 0.6) if drug else None
    answered = (rng.random() < 0.5) if (drug and passed and positive) else None
    return positive, drug, passed, answered


def brute_force(traces):
    """Recount TP/FN/FP straight from the trace flags."""
    tp = fn = fp = 0
    for positive, drug, passed, answered in traces:
        if not positive:
            if drug and passed:
                fp += 1
            else:
                tp += 1
        elif not drug or not passed:
            fn += 1
        elif answered:
            tp += 1
        else:
            fp += 1
    return tp, fn, fp


def test_cascade_matches_brute_force():
    rng = random.Random(0)
    traces = [random_trace(rng) for _ in range(1000)]
    tally = CascadeTally.from_categories(categorize_sentence(*t) for t in traces)
    c = cascade_confusion(tally)
    assert (c.tp, c.fn, c.fp) == brute_force(traces)
    assert c.tp + c.fn + c.fp == len(traces) == tally.total


def test_tally_addition_associative():
    rng = random.Random(1)
    parts = [CascadeTally.from_categories(categorize_sentence(*random_trace(rng)) for _ in range(50)) for _ in range(3)]
    assert (parts[0] + parts[1]) + parts[2] == parts[0] + (parts[1] + parts[2])
    assert ((parts[0] + parts[1]) + parts[2]).total == 150


def test_tally_category_notation():
    assert set(CascadeTally().as_dict()) == {"S_pos[-D]", "S_pos[+D,-C]", "S_pos[+D,+C,+A]", "S_pos[+D,+C,-A]",
                                             "S_neg[-D]", "S_neg[+D,-C]", "S_neg[+D,+C,-A]"}


def check_folds(labels, fa):
    labels = np.asarray(labels)
    assert sorted(np.concatenate([fa.test_indices(i) for i in range(fa.k)])) == list(range(len(labels)))
    for cls in set(labels.tolist()):
        total = int((labels == cls).sum())
        for i in range(fa.k):
            n = int((labels[fa.test_indices(i)] == cls).sum())
            assert abs(n - total / fa.k) < 1


def test_kfold_3976_positives():
    labels = [1] * 3976 + [0] * 5955
    fa = stratified_kfold(labels, 10, seed=0)
    counts = {int((np.asarray(labels)[fa.test_indices(i)] == 1).sum()) for i in range(10)}
    assert counts <= {397, 398}
    check_folds(labels, fa)


def test_kfold_divisible():
    labels = [1, 1, 1, 1, 0, 0, 0, 0]
    fa = stratified_kfold(labels, 2, seed=5)
    for i in range(2):
        got = [labels[j] for j in fa.test_indices(i)]
        assert sorted(got) == [0, 0, 1, 1]


def test_kfold_errors():
    with pytest.raises(KTooLarge):
        stratified_kfold([1, 1, 0, 0, 0], 3, seed=0)
    with pytest.raises(KTooSmall):
        stratified_kfold([1, 0], 1, seed=0)


def test_kfold_deterministic():
    labels = [i % 3 for i in range(40)]
    assert np.array_equal(stratified_kfold(labels, 4, 9).folds, stratified_kfold(labels, 4, 9).folds)


@pytest.mark.parametrize("seed", range(100))
def test_kfold_random_datasets(seed):
    rng = random.Random(seed)
    k = rng.randint(2, 10)
    labels = []
    for cls in range(rng.randint(1, 4)):
        labels += [cls] * rng.randint(k, 60)
    rng.shuffle(labels)
    fa = stratified_kfold(labels, k, seed)
    check_folds(labels, fa)
    for tr, te in fa:
        assert set(tr).isdisjoint(te) and len(tr) + len(te) == len(labels)
