"""End-to-end cascade: training, persistence, per-sentence runs and reports."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .corpus import Corpus, Label, LabeledSentence
from .errors import AdeError, CorruptBundle, ShapeMismatch, SingleClassFold, StageError, VersionMismatch
from .evalx import (
    CascadeTally,
    ConfusionCounts,
    MatchCriterion,
    OutcomeCategory,
    PrfScores,
    cascade_confusion,
    categorize_sentence,
    prf_scores,
    span_match,
    stratified_kfold,
)
from .nerstage import DrugLexicon, DrugMention, LexiconRecognizer, build_lexicon
from .neuralcore import ParameterSet
from .relevance import RelevanceConfig, RelevanceEnsemble, RelevanceModel, classify_relevant, encode, relevance_prob, train_relevance_fold
from .spanqa import (
    QaConfig,
    QaEnsemble,
    QaModel,
    SpanPrediction,
    answer_char_span,
    build_qa_sequence,
    decode_span,
    qa_examples,
    qa_forward,
    train_qa_fold,
)
from .textproc import Vocabulary, build_vocab

log = logging.getLogger(__name__)

BUNDLE_FORMAT = "bundle-v1"
MULTI_PAIR_RULES = ("any", "all")


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    relevance_k: int = 10
    qa_k: int = 5
    relevance_epochs: int = 60
    qa_epochs: int = 80
    relevance_lr: float = 0.01
    qa_lr: float = 0.005
    relevance_batch: int = 8
    qa_batch: int = 4
    label_smoothing: float = 0.1
    threshold: float = 0.5
    max_answer_len: int = 10
    match: str = "exact"
    multi_pair_rule: str = "any"
    dim: int = 32
    hidden: int = 16
    max_positions: int = 128
    min_count: int = 1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        problems = []
        if self.relevance_k < 1 or self.qa_k < 1:
            problems.append("fold counts must be >= 1")
        if min(self.relevance_epochs, self.qa_epochs) < 1:
            problems.append("epochs must be >= 1")
        if min(self.relevance_lr, self.qa_lr) <= 0:
            problems.append("learning rates must be positive")
        if min(self.relevance_batch, self.qa_batch, self.dim, self.hidden, self.max_positions, self.min_count, self.max_answer_len) < 1:
            problems.append("batch sizes, dimensions, min_count and max_answer_len must be >= 1")
        if not 0.0 <= self.label_smoothing < 1.0:
            problems.append("label_smoothing must lie in [0, 1)")
        if not 0.0 <= self.threshold <= 1.0:
            problems.append("threshold must lie in [0, 1]")
        if self.match not in ("exact", "overlap"):
            problems.append("match must be 'exact' or 'overlap'")
        if self.multi_pair_rule not in MULTI_PAIR_RULES:
            problems.append(f"multi_pair_rule must be one of {MULTI_PAIR_RULES}")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0 and self.adam_eps > 0):
            problems.append("Adam betas must lie in [0, 1) and eps be positive")
        if problems:
            raise ValueError("; ".join(problems))

    @classmethod
    def published(cls, **overrides):
        """Hyperparameters as published: 10/5 folds, 3 QA epochs, lr 3e-5, smoothing 0.1."""
        base = dict(relevance_k=10, qa_k=5, qa_epochs=3, relevance_lr=3e-5, qa_lr=3e-5, label_smoothing=0.1)
        base.update(overrides)
        return cls(**base)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def relevance_config(self):
        return RelevanceConfig(self.dim, self.hidden, self.relevance_epochs, self.relevance_lr, self.relevance_batch,
                               adam_beta1=self.adam_beta1, adam_beta2=self.adam_beta2, adam_eps=self.adam_eps)

    def qa_config(self):
        return QaConfig(self.dim, self.max_positions, self.qa_epochs, self.qa_lr, self.qa_batch, self.label_smoothing,
                        adam_beta1=self.adam_beta1, adam_beta2=self.adam_beta2, adam_eps=self.adam_eps)


@dataclass
class TrainedBundle:
    vocab: Vocabulary
    lexicon: DrugLexicon
    relevance: RelevanceEnsemble
    qa: QaEnsemble
    config: PipelineConfig
    training: dict = field(default_factory=dict)
    version: str = BUNDLE_FORMAT

    def check(self):
        v = len(self.vocab)
        for m in self.relevance.models:
            if m.vocab_size != v or m.params["emb"].shape[1] != self.config.dim:
                raise ShapeMismatch(f"relevance model embedding {m.params['emb'].shape} does not match vocab {v} x dim {self.config.dim}")
        for m in self.qa.models:
            if m.vocab_size != v or m.dim != self.config.dim:
                raise ShapeMismatch(f"QA model embedding {m.params['tok'].shape} does not match vocab {v} x dim {self.config.dim}")
        return self


# --- training -----------------------------------------------------------

def _train_relevance_job(args):
    fold, sentences, vocab, cfg, seed = args
    return fold, train_relevance_fold(sentences, vocab, cfg, seed)


def _train_qa_job(args):
    fold, seqs, vocab_size, cfg, seed = args
    return fold, train_qa_fold(seqs, vocab_size, cfg, seed)


def _run_jobs(fn, jobs, n_workers):
    if n_workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as ex:
            results = list(ex.map(fn, jobs))
    else:
        results = [fn(j) for j in jobs]
    return [m for _, m in sorted(results, key=lambda r: r[0])]


def _fold_splits(labels, k, seed):
    if k == 1:
        return [(list(range(len(labels))), [])]
    folds = stratified_kfold(labels, k, seed)
    return [(list(tr), list(te)) for tr, te in folds]


def _relevance_metrics(models, vocab, sentences, threshold):
    tp = fp = fn = 0
    for s in sentences:
        passed = classify_relevant(relevance_prob(RelevanceEnsemble(models, threshold), s, vocab), threshold)
        tp += passed and s.is_positive
        fp += passed and not s.is_positive
        fn += (not passed) and s.is_positive
    c = ConfusionCounts(tp, fp, fn)
    return {"counts": dataclasses.asdict(c), **prf_scores(c).as_dict()}


def qa_recall(ensemble: QaEnsemble, vocab: Vocabulary, sentences) -> dict:
    """Recall with the gold drug given as the question, exact and overlap."""
    hits = {"exact": 0, "overlap": 0}
    n = 0
    for s in sentences:
        for pair in s.pairs:
            seq = build_qa_sequence(pair.drug_surface, s.text, vocab)
            pred = ensemble.predict(seq, s.text)
            n += 1
            for crit in hits:
                hits[crit] += span_match(pred.char_span, [pair.ae_sent_span], crit)
    return {"pairs": n, **{f"recall_{c}": (h / n if n else 0.0) for c, h in hits.items()}}


def train_pipeline(corpus: Corpus | Sequence[LabeledSentence], config: PipelineConfig = PipelineConfig(), jobs: int = 1) -> TrainedBundle:
    """Train vocabulary, lexicon and both fold ensembles on ``corpus``.

    Everything is derived from the sentences passed in, so pass only the
    training portion.  Fold ``i`` of either stage trains with ``seed + i``.
    """
    sentences = list(corpus.sentences if isinstance(corpus, Corpus) else corpus)
    vocab = build_vocab(sentences, config.min_count)
    try:
        lexicon = build_lexicon(sentences)
    except AdeError as exc:
        raise StageError("ner", exc) from exc

    training = {}
    try:
        labels = [s.label.value for s in sentences]
        if len(set(labels)) < 2:
            raise SingleClassFold(f"training data holds only {labels[0] if labels else 'no'} sentences")
        splits = _fold_splits(labels, config.relevance_k, config.seed)
        rcfg = config.relevance_config()
        rel_jobs = [(i, [sentences[j] for j in tr], vocab, rcfg, config.seed + i) for i, (tr, _) in enumerate(splits)]
        rel_models = _run_jobs(_train_relevance_job, rel_jobs, jobs)
    except AdeError as exc:
        raise StageError("relevance", exc) from exc
    rel_folds = []
    for i, ((_, te), m) in enumerate(zip(splits, rel_models)):
        entry = {"fold": i, "seed": config.seed + i, "loss_trace": m.loss_trace}
        if te:
            entry["validation"] = _relevance_metrics([m], vocab, [sentences[j] for j in te], config.threshold)
        rel_folds.append(entry)
    training["relevance"] = {"folds": rel_folds}

    try:
        positives = [s for s in sentences if s.is_positive]
        seqs, skipped = qa_examples(positives, vocab)
        if skipped:
            log.warning("skipped %d QA examples with unmappable answers", skipped)
        splits = _fold_splits([1] * len(seqs), config.qa_k, config.seed)
        qcfg = config.qa_config()
        qa_jobs = [(i, [seqs[j] for j in tr], len(vocab), qcfg, config.seed + i) for i, (tr, _) in enumerate(splits)]
        qa_models = _run_jobs(_train_qa_job, qa_jobs, jobs)
    except AdeError as exc:
        raise StageError("qa", exc) from exc
    qa_folds = []
    for i, ((_, te), m) in enumerate(zip(splits, qa_models)):
        entry = {"fold": i, "seed": config.seed + i, "loss_trace": m.loss_trace}
        if te:
            hits = 0
            for j in te:
                pred = decode_span(qa_forward(m, seqs[j]), config.max_answer_len)
                hits += (pred.start, pred.end) == seqs[j].gold
            entry["validation"] = {"examples": len(te), "token_exact_recall": hits / len(te)}
        qa_folds.append(entry)
    training["qa"] = {"folds": qa_folds, "examples": len(seqs), "skipped": skipped}

    bundle = TrainedBundle(
        vocab=vocab,
        lexicon=lexicon,
        relevance=RelevanceEnsemble(rel_models, config.threshold),
        qa=QaEnsemble(qa_models, config.max_answer_len),
        config=config,
        training=training,
    )
    return bundle.check()


# --- inference ------------------------------------------------------------

@dataclass
class SentenceTrace:
    sentence_id: str
    text: str
    mentions: list[DrugMention]
    relevance_prob: float | None = None
    predictions: list[tuple[DrugMention, SpanPrediction]] = field(default_factory=list)
    eliminated_at: str | None = None
    category: dict | None = None

    @property
    def drug_found(self):
        return bool(self.mentions)

    @property
    def passed_classifier(self):
        return self.relevance_prob is not None and self.eliminated_at is None

    def to_dict(self):
        d = {
            "sentence_id": self.sentence_id,
            "text": self.text,
            "mentions": [{"drug": m.surface, "span": list(m.char_span)} for m in self.mentions],
            "relevance_prob": self.relevance_prob,
            "eliminated_at": self.eliminated_at,
            "predictions": [prediction_record(self.sentence_id, m, p) for m, p in self.predictions],
        }
        if self.category is not None:
            d["category"] = {k: v.value for k, v in self.category.items()}
        return d


def prediction_record(sentence_id, mention: DrugMention, pred: SpanPrediction) -> dict:
    return {
        "sentence_id": sentence_id,
        "drug": mention.surface,
        "pred_start_char": pred.char_span[0],
        "pred_end_char": pred.char_span[1],
        "answer_text": pred.answer_text,
        "score": pred.score,
    }


def run_sentence(bundle: TrainedBundle, sentence, sentence_id: str | None = None, recognizer=None) -> SentenceTrace:
    """Push one sentence through the cascade, stopping at the first elimination."""
    text = sentence if isinstance(sentence, str) else sentence.text
    if sentence_id is None:
        sentence_id = getattr(sentence, "doc_id", "")
    recognizer = recognizer or LexiconRecognizer(bundle.lexicon)
    trace = SentenceTrace(sentence_id, text, recognizer.recognize(text))
    if not trace.mentions:
        trace.eliminated_at = "ner"
        return trace
    trace.relevance_prob = relevance_prob(bundle.relevance, text, bundle.vocab)
    if not classify_relevant(trace.relevance_prob, bundle.relevance.threshold):
        trace.eliminated_at = "relevance"
        return trace
    for mention in trace.mentions:
        seq = build_qa_sequence(mention, text, bundle.vocab)
        trace.predictions.append((mention, bundle.qa.predict(seq, text)))
    return trace


def answer_verdict(trace: SentenceTrace, sentence: LabeledSentence, criterion, rule: str = "any") -> bool:
    """Whether QA answered a positive sentence correctly.

    ``any``: some recognized gold drug got one of its gold AE spans.
    ``all``: every gold drug was recognized and got one of its gold spans.
    """
    gold: dict[str, list] = {}
    for pair in sentence.pairs:
        gold.setdefault(pair.drug_surface.lower(), []).append(pair.ae_sent_span)
    correct = set()
    for mention, pred in trace.predictions:
        key = mention.surface.lower()
        if key in gold and span_match(pred.char_span, gold[key], criterion):
            correct.add(key)
    if rule == "all":
        return bool(gold) and correct == set(gold)
    return bool(correct)


def categorize_trace(trace: SentenceTrace, sentence: LabeledSentence, criterion, rule: str = "any") -> OutcomeCategory:
    reached_qa = trace.drug_found and trace.passed_classifier
    verdict = None
    if reached_qa and sentence.is_positive:
        verdict = answer_verdict(trace, sentence, criterion, rule)
    return categorize_sentence(
        sentence.is_positive,
        trace.drug_found,
        trace.passed_classifier if trace.drug_found else None,
        verdict,
    )


# --- reports --------------------------------------------------------------

@dataclass
class RunReport:
    config: dict
    stage_metrics: dict
    tallies: dict[str, CascadeTally]
    scores: dict[str, PrfScores]
    traces: list[dict] | None = None

    def to_dict(self):
        d = {
            "config": self.config,
            "stage_metrics": self.stage_metrics,
            "cascade_tally": {c: t.as_dict() for c, t in self.tallies.items()},
            "end_to_end": {c: s.as_dict() for c, s in self.scores.items()},
        }
        if self.traces is not None:
            d["traces"] = self.traces
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def confusion(self, criterion):
        return cascade_confusion(self.tallies[criterion])

    def check_consistency(self, n_sentences: int | None = None):
        """Recompute scores from the tallies; raise if anything disagrees."""
        for crit, tally in self.tallies.items():
            c = cascade_confusion(tally)
            if prf_scores(c) != self.scores[crit]:
                raise ShapeMismatch(f"{crit} scores do not follow from the tally")
            if n_sentences is not None and c.tp + c.fn + c.fp != n_sentences:
                raise ShapeMismatch(f"{crit} tally covers {c.tp + c.fn + c.fp} sentences, expected {n_sentences}")
        return self


def _criteria(match):
    if match == "both":
        return ["exact", "overlap"]
    return [MatchCriterion(match).value]


_WORKER = {}


def _init_worker(bundle, recognizer):
    _WORKER["bundle"], _WORKER["recognizer"] = bundle, recognizer


def _trace_worker(sentence):
    return run_sentence(_WORKER["bundle"], sentence, recognizer=_WORKER["recognizer"])


def run_all(bundle, sentences, recognizer=None, jobs: int = 1) -> list[SentenceTrace]:
    """Traces for many sentences, optionally sharded over worker processes."""
    if jobs > 1 and len(sentences) > 1:
        with ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=(bundle, recognizer)) as ex:
            return list(ex.map(_trace_worker, sentences, chunksize=max(1, len(sentences) // (4 * jobs))))
    return [run_sentence(bundle, s, recognizer=recognizer) for s in sentences]


def evaluate_end_to_end(bundle: TrainedBundle, sentences: Sequence[LabeledSentence], match: str = "both",
                        verbose: bool = False, test_source: str = "", recognizer=None, jobs: int = 1) -> RunReport:
    """Run every labelled sentence through the cascade and score it."""
    criteria = _criteria(match)
    cfg = bundle.config
    tallies = {c: CascadeTally() for c in criteria}
    traces = []
    ner = {"pos_with_drug": 0, "neg_with_drug": 0, "gold_drugs": 0, "gold_drugs_found": 0}
    sentences = list(sentences)
    for s, trace in zip(sentences, run_all(bundle, sentences, recognizer, jobs)):
        found = {m.surface.lower() for m in trace.mentions}
        if s.is_positive:
            ner["pos_with_drug"] += trace.drug_found
            for pair in s.pairs:
                ner["gold_drugs"] += 1
                ner["gold_drugs_found"] += pair.drug_surface.lower() in found
        else:
            ner["neg_with_drug"] += trace.drug_found
        trace.category = {c: categorize_trace(trace, s, c, cfg.multi_pair_rule) for c in criteria}
        for c in criteria:
            tallies[c].add(trace.category[c])
        if verbose:
            traces.append(trace.to_dict())
    ner["drug_recall"] = ner["gold_drugs_found"] / ner["gold_drugs"] if ner["gold_drugs"] else 0.0

    positives = [s for s in sentences if s.is_positive]
    stage_metrics = {
        "ner": ner,
        "relevance": _relevance_metrics(bundle.relevance.models, bundle.vocab, sentences, bundle.relevance.threshold),
        "qa": qa_recall(bundle.qa, bundle.vocab, positives),
    }
    config = cfg.to_dict()
    config["eval"] = {
        "match": match,
        "test_source": test_source,
        "n_pos": len(positives),
        "n_neg": len(sentences) - len(positives),
    }
    scores = {c: prf_scores(cascade_confusion(t)) for c, t in tallies.items()}
    report = RunReport(config, stage_metrics, tallies, scores, traces if verbose else None)
    return report.check_consistency(len(sentences))


# --- persistence -----------------------------------------------------------

def _payload(bundle: TrainedBundle) -> dict:
    return {
        "config": bundle.config.to_dict(),
        "vocab": list(bundle.vocab.tokens[4:]),
        "vocab_min_count": bundle.vocab.min_count,
        "lexicon": sorted(bundle.lexicon.entries),
        "relevance": {
            "threshold": bundle.relevance.threshold,
            "models": [{"params": m.params.to_dict(), "loss_trace": m.loss_trace} for m in bundle.relevance.models],
        },
        "qa": {
            "max_answer_len": bundle.qa.max_answer_len,
            "models": [{"params": m.params.to_dict(), "loss_trace": m.loss_trace} for m in bundle.qa.models],
        },
        "training": bundle.training,
    }


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


def dumps_bundle(bundle: TrainedBundle) -> str:
    payload = _payload(bundle)
    doc = {"format": BUNDLE_FORMAT, "checksum": "sha256:" + hashlib.sha256(_canonical(payload)).hexdigest(), "payload": payload}
    return json.dumps(doc, sort_keys=True, indent=1, allow_nan=False) + "\n"


def save_bundle(bundle: TrainedBundle, path) -> None:
    Path(path).write_text(dumps_bundle(bundle), encoding="utf-8")


def loads_bundle(text: str) -> TrainedBundle:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptBundle(f"bundle is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or "format" not in doc:
        raise CorruptBundle("bundle has no format tag")
    if doc["format"] != BUNDLE_FORMAT:
        raise VersionMismatch(f"bundle format {doc['format']!r} is not supported; expected {BUNDLE_FORMAT!r}")
    payload = doc.get("payload")
    if payload is None or doc.get("checksum") != "sha256:" + hashlib.sha256(_canonical(payload)).hexdigest():
        raise CorruptBundle("bundle checksum mismatch")
    try:
        config = PipelineConfig.from_dict(payload["config"])
        vocab = Vocabulary(payload["vocab"], payload["vocab_min_count"])
        lexicon = DrugLexicon(payload["lexicon"], source="bundle")
        rel = RelevanceEnsemble(
            [RelevanceModel(ParameterSet.from_dict(m["params"]), m["loss_trace"]) for m in payload["relevance"]["models"]],
            payload["relevance"]["threshold"],
        )
        qa = QaEnsemble(
            [QaModel(ParameterSet.from_dict(m["params"]), m["loss_trace"]) for m in payload["qa"]["models"]],
            payload["qa"]["max_answer_len"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ShapeMismatch):
            raise
        raise CorruptBundle(f"bundle payload is malformed: {exc!r}") from None
    return TrainedBundle(vocab, lexicon, rel, qa, config, payload.get("training", {})).check()


def load_bundle(path) -> TrainedBundle:
    return loads_bundle(Path(path).read_text(encoding="utf-8"))
