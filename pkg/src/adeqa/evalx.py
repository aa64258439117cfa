"""Metrics, cascade accounting and stratified fold assignment.

End-to-end scoring follows the cascade rule: every test sentence lands in
exactly one of seven outcome categories, and the categories map onto
TP/FN/FP as::

    TP = S_neg[-D] + S_neg[+D,-C] + S_pos[+D,+C,+A]
    FN = S_pos[-D] + S_pos[+D,-C]
    FP = S_pos[+D,+C,-A] + S_neg[+D,+C,-A]

There is no TN cell: a correctly removed negative counts as a true positive.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InconsistentTrace, KTooLarge, KTooSmall


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    def __add__(self, other):
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


@dataclass(frozen=True)
class PrfScores:
    precision: float
    recall: float
    f1: float

    def as_dict(self):
        return {"p": self.precision, "r": self.recall, "f1": self.f1}


def prf_scores(c: ConfusionCounts) -> PrfScores:
    """Precision, recall and F1; any zero denominator gives 0."""
    p = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    r = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return PrfScores(p, r, f1)


class MatchCriterion(str, Enum):
    EXACT = "exact"
    OVERLAP = "overlap"


def span_match(pred, golds: Iterable, criterion=MatchCriterion.EXACT) -> bool:
    criterion = MatchCriterion(criterion)
    pb, pe = pred
    for gb, ge in golds:
        if criterion is MatchCriterion.EXACT:
            if (pb, pe) == (gb, ge):
                return True
        elif pb < ge and gb < pe:
            return True
    return False


class OutcomeCategory(str, Enum):
    POS_NO_DRUG = "S_pos[-D]"
    POS_FILTERED = "S_pos[+D,-C]"
    POS_ANSWERED_CORRECT = "S_pos[+D,+C,+A]"
    POS_ANSWERED_WRONG = "S_pos[+D,+C,-A]"
    NEG_NO_DRUG = "S_neg[-D]"
    NEG_FILTERED = "S_neg[+D,-C]"
    NEG_ANSWERED = "S_neg[+D,+C,-A]"


TP_CATEGORIES = (OutcomeCategory.NEG_NO_DRUG, OutcomeCategory.NEG_FILTERED, OutcomeCategory.POS_ANSWERED_CORRECT)
FN_CATEGORIES = (OutcomeCategory.POS_NO_DRUG, OutcomeCategory.POS_FILTERED)
FP_CATEGORIES = (OutcomeCategory.POS_ANSWERED_WRONG, OutcomeCategory.NEG_ANSWERED)


def categorize_sentence(positive: bool, drug_found: bool, passed_classifier: bool | None = None, answered_correct: bool | None = None) -> OutcomeCategory:
    """Place one sentence trace in the cascade lattice.

    ``passed_classifier`` is meaningful only when a drug was found, and
    ``answered_correct`` only when the sentence reached QA.  A negative that
    reaches QA is always wrong; its verdict may be omitted but not ``True``.
    """
    if not drug_found:
        if passed_classifier or answered_correct is not None:
            raise InconsistentTrace("sentence without a drug cannot reach later stages")
        return OutcomeCategory.POS_NO_DRUG if positive else OutcomeCategory.NEG_NO_DRUG
    if passed_classifier is None:
        raise InconsistentTrace("drug found but classifier verdict missing")
    if not passed_classifier:
        if answered_correct is not None:
            raise InconsistentTrace("filtered sentence cannot carry a QA verdict")
        return OutcomeCategory.POS_FILTERED if positive else OutcomeCategory.NEG_FILTERED
    if not positive:
        if answered_correct:
            raise InconsistentTrace("a negative sentence has no gold answer to match")
        return OutcomeCategory.NEG_ANSWERED
    if answered_correct is None:
        raise InconsistentTrace("positive sentence reached QA without a verdict")
    return OutcomeCategory.POS_ANSWERED_CORRECT if answered_correct else OutcomeCategory.POS_ANSWERED_WRONG


class CascadeTally:
    """Per-category sentence counts; tallies add associatively."""

    def __init__(self, counts: Mapping | None = None):
        self.counts = {c: 0 for c in OutcomeCategory}
        for key, n in (counts or {}).items():
            cat = OutcomeCategory(key)
            if n < 0:
                raise ValueError(f"negative count for {cat.value}")
            self.counts[cat] = int(n)

    @classmethod
    def from_categories(cls, cats: Iterable[OutcomeCategory]):
        return cls(Counter(cats))

    def add(self, cat: OutcomeCategory, n: int = 1):
        self.counts[OutcomeCategory(cat)] += n

    def __add__(self, other):
        return CascadeTally({c: self.counts[c] + other.counts[c] for c in OutcomeCategory})

    def __eq__(self, other):
        return isinstance(other, CascadeTally) and self.counts == other.counts

    def __getitem__(self, cat):
        return self.counts[OutcomeCategory(cat)]

    @property
    def total(self):
        return sum(self.counts.values())

    def as_dict(self):
        return {c.value: self.counts[c] for c in OutcomeCategory}

    def __repr__(self):
        return f"CascadeTally({self.as_dict()})"


def cascade_confusion(tally: CascadeTally) -> ConfusionCounts:
    return ConfusionCounts(
        tp=sum(tally[c] for c in TP_CATEGORIES),
        fp=sum(tally[c] for c in FP_CATEGORIES),
        fn=sum(tally[c] for c in FN_CATEGORIES),
    )


@dataclass(frozen=True)
class FoldAssignment:
    folds: np.ndarray
    k: int
    seed: int

    def test_indices(self, i):
        return np.flatnonzero(self.folds == i)

    def train_indices(self, i):
        return np.flatnonzero(self.folds != i)

    def __iter__(self):
        for i in range(self.k):
            yield self.train_indices(i), self.test_indices(i)


def stratified_kfold(labels: Sequence, k: int, seed: int) -> FoldAssignment:
    """Assign each example to one of ``k`` folds, preserving class shares.

    Within each class the examples are shuffled and dealt round-robin; the
    dealing offset carries over between classes so total fold sizes also
    differ by at most one.
    """
    if k < 2:
        raise KTooSmall(f"k must be >= 2, got {k}")
    labels = list(labels)
    classes = sorted(set(labels), key=str)
    rng = np.random.default_rng(seed)
    folds = np.full(len(labels), -1, dtype=np.int64)
    offset = 0
    for cls in classes:
        idx = np.array([i for i, y in enumerate(labels) if y == cls], dtype=np.int64)
        if len(idx) < k:
            raise KTooLarge(f"class {cls!r} has {len(idx)} examples, fewer than k={k}")
        rng.shuffle(idx)
        folds[idx] = (offset + np.arange(len(idx))) % k
        offset = (offset + len(idx)) % k
    return FoldAssignment(folds, k, seed)
