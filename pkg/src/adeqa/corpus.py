"""Reading, validating, deduplicating and splitting the ADE corpus.

Positive records are pipe-delimited with document-level offsets::

    id|sentence|AE|AE_begin|AE_end|drug|drug_begin|drug_end

Negative records are ``<id> NEG <sentence>``.  Document offsets are kept for
reference only; sentence-level spans come from a case-sensitive substring
search where the first occurrence wins.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence, Union

from .errors import (
    DataError,
    FieldCountError,
    FormatError,
    OffsetParseError,
    SplitSizeError,
    SurfaceNotFound,
)

log = logging.getLogger(__name__)

Span = tuple[int, int]


class Label(str, Enum):
    POSITIVE = "Positive"
    NEGATIVE = "Negative"


@dataclass(frozen=True)
class AnnotationPair:
    drug_surface: str
    drug_doc_span: Span
    ae_surface: str
    ae_doc_span: Span
    drug_sent_span: Span | None = None
    ae_sent_span: Span | None = None

    @property
    def resolved(self):
        return self.drug_sent_span is not None and self.ae_sent_span is not None


@dataclass(frozen=True)
class LabeledSentence:
    doc_id: str
    text: str
    label: Label
    pairs: tuple[AnnotationPair, ...] = ()

    def __post_init__(self):
        if not self.text:
            raise FormatError("sentence text is empty")
        if self.label is Label.POSITIVE and not self.pairs:
            raise FormatError("positive sentence without annotation pairs")
        if self.label is Label.NEGATIVE and self.pairs:
            raise FormatError("negative sentence carries annotation pairs")

    @property
    def is_positive(self):
        return self.label is Label.POSITIVE


@dataclass
class CorpusStats:
    pos: int = 0
    neg: int = 0
    dedup_dropped: int = 0
    offset_misses: int = 0
    label_conflicts: int = 0

    def summary(self):
        return (
            f"pos={self.pos} neg={self.neg} "
            f"dedup_dropped={self.dedup_dropped} offset_misses={self.offset_misses}"
        )


@dataclass
class Corpus:
    sentences: list[LabeledSentence]
    provenance: tuple[str, ...] = ()
    stats: CorpusStats = field(default_factory=CorpusStats)

    def __len__(self):
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)

    @property
    def positives(self):
        return [s for s in self.sentences if s.is_positive]

    @property
    def negatives(self):
        return [s for s in self.sentences if not s.is_positive]


@dataclass
class DatasetSplit:
    train: list[LabeledSentence]
    test: list[LabeledSentence]
    seed: int


def parse_positive_record(line: str) -> tuple[str, str, AnnotationPair]:
    fields = line.rstrip("\r\n").split("|")
    if len(fields) != 8:
        raise FieldCountError(f"expected 8 pipe-separated fields, got {len(fields)}")
    doc_id, sentence, ae, ae_b, ae_e, drug, drug_b, drug_e = fields
    try:
        ae_span = (int(ae_b), int(ae_e))
        drug_span = (int(drug_b), int(drug_e))
    except ValueError as exc:
        raise OffsetParseError(f"non-integer offset: {exc}") from None
    for surface, (b, e) in ((ae, ae_span), (drug, drug_span)):
        if not b < e:
            raise OffsetParseError(f"offsets for {surface!r} are not increasing: {b}, {e}")
    return doc_id, sentence, AnnotationPair(drug, drug_span, ae, ae_span)


def parse_negative_record(line: str) -> tuple[str, str]:
    head, marker, sentence = line.rstrip("\r\n").partition(" NEG ")
    doc_id = head.strip()
    if not marker or not doc_id or " " in doc_id:
        raise FormatError("expected '<id> NEG <sentence>'")
    sentence = sentence.strip()
    if not sentence:
        raise FormatError("empty sentence after NEG marker")
    return doc_id, sentence


def resolve_offsets(sentence: str, pair: AnnotationPair) -> AnnotationPair:
    spans = []
    for surface in (pair.drug_surface, pair.ae_surface):
        b = sentence.find(surface) if surface else -1
        if b < 0:
            raise SurfaceNotFound(f"{surface!r} does not occur in sentence")
        spans.append((b, b + len(surface)))
    return replace(pair, drug_sent_span=spans[0], ae_sent_span=spans[1])


def _doc_offsets_miss(sentence, pair):
    # Document-level offsets rarely index the sentence; count how often.
    return any(
        sentence[b:e] != surface
        for surface, (b, e) in ((pair.drug_surface, pair.drug_doc_span), (pair.ae_surface, pair.ae_doc_span))
    )


def _read_lines(path):
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if line.strip():
                yield n, line


def load_corpus(pos_path, neg_path, *, strict: bool = True) -> Corpus:
    """Load both corpus files into a deduplicated :class:`Corpus`.

    Any malformed record aborts with a :class:`DataError` naming file and
    line.  With ``strict=False`` a pair whose surface is missing from its
    sentence is dropped (and counted as an offset miss) instead.
    """
    stats = CorpusStats()
    pos_order: list[str] = []
    pos_ids: dict[str, str] = {}
    pos_pairs: dict[str, list[AnnotationPair]] = {}
    for n, line in _read_lines(pos_path):
        try:
            doc_id, text, pair = parse_positive_record(line)
            if _doc_offsets_miss(text, pair):
                stats.offset_misses += 1
            try:
                pair = resolve_offsets(text, pair)
            except SurfaceNotFound:
                if strict:
                    raise
                stats.dedup_dropped += 1
                continue
        except DataError as exc:
            raise type(exc)(f"{pos_path}:{n}: {exc}") from None
        if text in pos_pairs:
            stats.dedup_dropped += 1
            if pair not in pos_pairs[text]:
                pos_pairs[text].append(pair)
        else:
            pos_order.append(text)
            pos_ids[text] = doc_id
            pos_pairs[text] = [pair]

    neg: dict[str, str] = {}
    for n, line in _read_lines(neg_path):
        try:
            doc_id, text = parse_negative_record(line)
        except DataError as exc:
            raise type(exc)(f"{neg_path}:{n}: {exc}") from None
        if text in pos_pairs:
            stats.label_conflicts += 1
            stats.dedup_dropped += 1
        elif text in neg:
            stats.dedup_dropped += 1
        else:
            neg[text] = doc_id

    if stats.label_conflicts:
        log.warning("%d sentences appear in both files; kept as Positive", stats.label_conflicts)
    sentences = [LabeledSentence(pos_ids[t], t, Label.POSITIVE, tuple(pos_pairs[t])) for t in pos_order]
    sentences += [LabeledSentence(i, t, Label.NEGATIVE) for t, i in neg.items()]
    stats.pos, stats.neg = len(pos_order), len(neg)
    log.info(stats.summary())
    return Corpus(sentences, (str(pos_path), str(neg_path)), stats)


def format_positive_records(sentence: LabeledSentence) -> list[str]:
    out = []
    for p in sentence.pairs:
        ae_b, ae_e = p.ae_doc_span
        d_b, d_e = p.drug_doc_span
        out.append(f"{sentence.doc_id}|{sentence.text}|{p.ae_surface}|{ae_b}|{ae_e}|{p.drug_surface}|{d_b}|{d_e}")
    return out


def format_negative_record(sentence: LabeledSentence) -> str:
    return f"{sentence.doc_id} NEG {sentence.text}"


def write_corpus(sentences: Iterable[LabeledSentence], pos_path, neg_path):
    pos_lines, neg_lines = [], []
    for s in sentences:
        if s.is_positive:
            pos_lines.extend(format_positive_records(s))
        else:
            neg_lines.append(format_negative_record(s))
    Path(pos_path).write_text("".join(l + "\n" for l in pos_lines), encoding="utf-8")
    Path(neg_path).write_text("".join(l + "\n" for l in neg_lines), encoding="utf-8")


Size = Union[int, float, Mapping[Label, int]]


def _resolve_size(size, n):
    if isinstance(size, float):
        if not 0.0 < size < 1.0:
            raise SplitSizeError(f"fraction must lie in (0, 1), got {size}")
        return int(round(size * n))
    if size < 0:
        raise SplitSizeError(f"negative count {size}")
    return int(size)


def make_splits(sentences: Sequence[LabeledSentence] | Corpus, test_size: Size, seed: int, train_size: Size | None = None) -> DatasetSplit:
    """Random train/test split.

    Sizes are a fraction, an absolute count, or a per-label count mapping
    (``{Label.POSITIVE: 610, Label.NEGATIVE: 662}``).  Without ``train_size``
    every sentence not drawn for test goes to train.  When ``train_size`` is
    given, the train set is drawn from the remainder and leftovers are
    discarded.
    """
    pool = list(sentences.sentences if isinstance(sentences, Corpus) else sentences)
    rng = random.Random(seed)
    if isinstance(test_size, Mapping):
        if train_size is not None and not isinstance(train_size, Mapping):
            raise SplitSizeError("per-label test_size requires per-label train_size")
        train, test = [], []
        for label in Label:
            group = [s for s in pool if s.label is label]
            n_test = test_size.get(label, 0)
            n_train = len(group) - n_test if train_size is None else train_size.get(label, 0)
            if n_test + n_train > len(group) or n_train < 0:
                raise SplitSizeError(f"{label.value}: requested {n_test} test + {n_train} train, only {len(group)} available")
            idx = rng.sample(range(len(group)), n_test + n_train)
            test += [group[i] for i in idx[:n_test]]
            train += [group[i] for i in idx[n_test:]]
        return DatasetSplit(train, test, seed)

    n_test = _resolve_size(test_size, len(pool))
    n_train = len(pool) - n_test if train_size is None else _resolve_size(train_size, len(pool))
    if n_test + n_train > len(pool) or n_train < 0:
        raise SplitSizeError(f"requested {n_test} test + {n_train} train, only {len(pool)} available")
    idx = rng.sample(range(len(pool)), n_test + n_train)
    return DatasetSplit([pool[i] for i in idx[n_test:]], [pool[i] for i in idx[:n_test]], seed)


# --- synthetic fixtures -------------------------------------------------

DRUGS = (
    "ibuprofen", "prednisone", "methotrexate", "warfarin", "amiodarone", "lithium",
    "carbamazepine", "vancomycin", "cisplatin", "clozapine", "isoniazid", "metformin",
    "lamotrigine", "phenytoin", "allopurinol", "cyclosporine", "tacrolimus", "rifampin",
    "heparin", "digoxin", "valproate", "olanzapine", "minocycline", "azathioprine",
)
AES = (
    "rash", "hepatitis", "nausea", "seizures", "neutropenia", "pancreatitis",
    "severe headache", "acute renal failure", "hypotension", "agranulocytosis",
    "lactic acidosis", "interstitial pneumonitis", "thrombocytopenia", "hyponatremia",
    "toxic epidermal necrolysis", "bradycardia", "angioedema", "myopathy",
)
CONDITIONS = (
    "rheumatoid arthritis", "epilepsy", "atrial fibrillation", "bipolar disorder",
    "tuberculosis", "type 2 diabetes", "psoriasis", "gout", "asthma", "lupus",
    "schizophrenia", "renal transplantation", "endocarditis", "lymphoma",
)
SUBJECTS = ("A {age}-year-old man", "A {age}-year-old woman", "The patient", "A {age}-year-old girl", "An elderly patient")

POS_TEMPLATES = (
    "{subject} developed {ae} after taking {drug}.",
    "{subject} receiving {drug} presented with {ae}.",
    "We report {ae} induced by {drug} in a patient with {cond}.",
    "{ae} occurred during treatment with {drug}.",
    "Treatment with {drug} was complicated by {ae}.",
    "{subject} on {drug} for {cond} experienced {ae}.",
)
NEG_DRUG_TEMPLATES = (
    "{subject} with {cond} was treated with {drug}.",
    "{drug} was started at a low dose for {cond}.",
    "Serum levels of {drug} were measured weekly.",
    "{subject} continued {drug} without complications.",
)
NEG_PLAIN_TEMPLATES = (
    "{subject} had a history of {cond}.",
    "No thrombus was observed on the follow-up scan of {subject_l}.",
    "Laboratory studies were normal in {subject_l} with {cond}.",
    "{subject} was admitted for evaluation of {cond}.",
)


def _fill(template, rng, **known):
    subject = rng.choice(SUBJECTS).format(age=rng.randint(18, 90))
    values = {
        "subject": subject,
        "subject_l": subject[0].lower() + subject[1:],
        "cond": rng.choice(CONDITIONS),
        **known,
    }
    text = template.format(**values)
    return text[0].upper() + text[1:]


def generate_synthetic_corpus(n_pos: int, n_neg: int, seed: int) -> Corpus:
    """Templated corpus with known drug/AE spans; deterministic by ``seed``.

    Roughly half of the negatives mention a drug so the relevance stage has
    something to filter.
    """
    if n_pos < 0 or n_neg < 0:
        raise ValueError("counts must be non-negative")
    rng = random.Random(seed)
    seen: set[str] = set()
    sentences: list[LabeledSentence] = []

    def unique(make):
        for attempt in range(1000):
            text, extra = make()
            if text not in seen:
                seen.add(text)
                return text, extra
        raise RuntimeError("synthetic template space exhausted")

    def make_pos():
        drug, ae = rng.choice(DRUGS), rng.choice(AES)
        return _fill(rng.choice(POS_TEMPLATES), rng, drug=drug, ae=ae), (drug, ae)

    for i in range(n_pos):
        text, (drug, ae) = unique(make_pos)
        # Templates may capitalise the leading slot.
        drug_s = drug if drug in text else drug.capitalize()
        ae_s = ae if ae in text else ae[0].upper() + ae[1:]
        raw = AnnotationPair(drug_s, (text.find(drug_s), text.find(drug_s) + len(drug_s)), ae_s, (text.find(ae_s), text.find(ae_s) + len(ae_s)))
        sentences.append(LabeledSentence(f"syn{seed}-p{i}", text, Label.POSITIVE, (resolve_offsets(text, raw),)))

    def make_neg():
        if rng.random() < 0.5:
            return _fill(rng.choice(NEG_DRUG_TEMPLATES), rng, drug=rng.choice(DRUGS)), None
        return _fill(rng.choice(NEG_PLAIN_TEMPLATES), rng), None

    for i in range(n_neg):
        text, _ = unique(make_neg)
        sentences.append(LabeledSentence(f"syn{seed}-n{i}", text, Label.NEGATIVE))

    stats = CorpusStats(pos=n_pos, neg=n_neg)
    return Corpus(sentences, (f"synthetic:{n_pos},{n_neg},{seed}",), stats)
