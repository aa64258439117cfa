"""Stage 3: extractive span QA with the drug as the question.

Sequence layout is ``[BOS] question... [SEP] context...``.  The encoder sums
token, segment and position embeddings, runs one residual self-attention
block and a per-position tanh layer; a shared per-position linear map (a
width-1 convolution) turns every position into a start and an end logit.
Softmax runs over context positions only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .errors import EmptyFold, GoldMasked, GoldSpanUnmappable, IndexOutOfRange, MaskMismatch, NoTokenOverlap, NoValidSpan, ShapeMismatch
from .neuralcore import (
    AdamState,
    ParameterSet,
    adam_step,
    attention_block_backward,
    attention_block_forward,
    label_smoothed_ce,
    smoothed_ce_from_logits,
)
from .textproc import BOS, SEP, Vocabulary, char_span_to_token_span, tokenize

SEGMENT_A, SEGMENT_B = 0, 1


@dataclass(frozen=True)
class QaConfig:
    dim: int = 32
    max_positions: int = 128
    epochs: int = 80
    lr: float = 0.005
    batch_size: int = 4
    label_smoothing: float = 0.1
    init_scale: float = 0.1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8


@dataclass(frozen=True)
class QaSequence:
    ids: np.ndarray
    segments: np.ndarray
    offsets: tuple  # char span per position; None outside the context
    question: str
    context_start: int
    gold: tuple[int, int] | None = None

    def __post_init__(self):
        if len(self.ids) != len(self.segments) or len(self.ids) != len(self.offsets):
            raise ShapeMismatch("ids, segments and offsets differ in length")
        if self.gold is not None:
            s, e = self.gold
            if not (self.context_start <= s <= e < len(self.ids)):
                raise GoldMasked(f"gold span {self.gold} lies outside the context")

    @property
    def mask(self) -> np.ndarray:
        return self.segments == SEGMENT_B

    def __len__(self):
        return len(self.ids)


def build_qa_sequence(drug, sentence: str, vocab: Vocabulary, gold_span=None) -> QaSequence:
    """Encode (drug question, sentence context) and map a gold AE char span.

    ``drug`` is a surface string or anything with a ``surface`` attribute;
    ``gold_span`` is a sentence-level char span or an annotation pair.
    """
    question = drug if isinstance(drug, str) else drug.surface
    q = tokenize(question)
    ctx = tokenize(sentence)
    ids = [BOS, *vocab.ids(q), SEP, *vocab.ids(ctx)]
    context_start = len(q) + 2
    segments = [SEGMENT_A] * context_start + [SEGMENT_B] * len(ctx)
    offsets = (None,) * context_start + tuple((t.char_begin, t.char_end) for t in ctx.tokens)
    gold = None
    if gold_span is not None:
        span = getattr(gold_span, "ae_sent_span", gold_span)
        try:
            tb, te = char_span_to_token_span(ctx, span)
        except NoTokenOverlap:
            raise GoldSpanUnmappable(f"answer span {span} maps to no context token") from None
        gold = (tb + context_start, te + context_start)
    return QaSequence(np.array(ids, dtype=np.int64), np.array(segments, dtype=np.int64), offsets, question, context_start, gold)


@dataclass(frozen=True)
class SpanDistribution:
    start: np.ndarray
    end: np.ndarray
    mask: np.ndarray


@dataclass(frozen=True)
class SpanPrediction:
    start: int
    end: int
    score: float
    char_span: tuple[int, int] | None = None
    answer_text: str | None = None


def masked_softmax(logits, mask):
    out = np.zeros_like(logits, dtype=np.float64)
    z = logits[mask]
    z = z - z.max()
    e = np.exp(z)
    out[mask] = e / e.sum()
    return out


class QaModel:
    PARAM_NAMES = ("tok", "seg", "pos", "attn.wq", "attn.wk", "attn.wv", "ff.w", "ff.b", "head.w", "head.b")

    def __init__(self, params: ParameterSet, loss_trace: Sequence[float] = ()):
        self.params = params
        self.loss_trace = list(loss_trace)
        d = params["tok"].shape[1]
        if params["head.w"].shape != (d, 2) or params["head.b"].shape != (2,):
            raise ShapeMismatch("QA head must map the encoder dimension to 2 logits")
        for name in ("seg", "pos"):
            if params[name].shape[1] != d:
                raise ShapeMismatch(f"{name} embedding width differs from {d}")

    @classmethod
    def init(cls, vocab_size: int, config: QaConfig, rng: np.random.Generator):
        d, s = config.dim, config.init_scale
        w = 1.0 / np.sqrt(d)
        return cls(ParameterSet({
            "tok": rng.normal(0.0, s, (vocab_size, d)),
            "seg": rng.normal(0.0, s, (2, d)),
            "pos": rng.normal(0.0, s, (config.max_positions, d)),
            "attn.wq": rng.normal(0.0, w, (d, d)),
            "attn.wk": rng.normal(0.0, w, (d, d)),
            "attn.wv": rng.normal(0.0, w, (d, d)),
            "ff.w": rng.normal(0.0, w, (d, d)),
            "ff.b": np.zeros(d),
            "head.w": rng.normal(0.0, w, (d, 2)),
            "head.b": np.zeros(2),
        }))

    @property
    def vocab_size(self):
        return self.params["tok"].shape[0]

    @property
    def dim(self):
        return self.params["tok"].shape[1]

    def _positions(self, n):
        return np.minimum(np.arange(n), self.params["pos"].shape[0] - 1)

    def logits(self, seq: QaSequence, with_cache: bool = False):
        p = self.params
        if seq.ids.max(initial=0) >= self.vocab_size:
            raise ShapeMismatch(f"token id {seq.ids.max()} outside embedding table of {self.vocab_size}")
        pos = self._positions(len(seq))
        X = p["tok"][seq.ids] + p["seg"][seq.segments] + p["pos"][pos]
        Y, attn_cache = attention_block_forward(X, p, "attn.")
        H = np.tanh(Y @ p["ff.w"] + p["ff.b"])
        L = H @ p["head.w"] + p["head.b"]
        if with_cache:
            return L, (pos, Y, H, attn_cache)
        return L

    def loss_and_grad(self, seq: QaSequence, eps: float, scale: float = 1.0) -> float:
        """Mean smoothed CE of start and end; gradients accumulate into params."""
        if seq.gold is None:
            raise GoldMasked("training sequence has no gold span")
        p, g = self.params, self.params.grads
        mask = seq.mask
        L, (pos, Y, H, attn_cache) = self.logits(seq, with_cache=True)
        dL = np.zeros_like(L)
        loss = 0.0
        for col, gold in ((0, seq.gold[0]), (1, seq.gold[1])):
            target = gold - seq.context_start
            l, dz = smoothed_ce_from_logits(L[mask, col], target, eps)
            loss += 0.5 * l
            dL[mask, col] = 0.5 * scale * dz
        g["head.w"] += H.T @ dL
        g["head.b"] += dL.sum(axis=0)
        dpre = (dL @ p["head.w"].T) * (1.0 - H * H)
        g["ff.w"] += Y.T @ dpre
        g["ff.b"] += dpre.sum(axis=0)
        dY = dpre @ p["ff.w"].T
        dX = attention_block_backward(dY, attn_cache, p, "attn.")
        kernels.scatter_add_rows(g["tok"], seq.ids, dX)
        kernels.scatter_add_rows(g["seg"], seq.segments, dX)
        kernels.scatter_add_rows(g["pos"], pos, dX)
        return loss


def qa_forward(model: QaModel, seq: QaSequence) -> SpanDistribution:
    L = model.logits(seq)
    mask = seq.mask
    return SpanDistribution(masked_softmax(L[:, 0], mask), masked_softmax(L[:, 1], mask), mask)


def qa_loss(dist: SpanDistribution, gold, eps: float) -> float:
    """Mean of the smoothed CE on start and on end, K = unmasked positions."""
    s, e = gold
    if not (dist.mask[s] and dist.mask[e]):
        raise GoldMasked(f"gold span {gold} falls on a masked position")
    idx = np.flatnonzero(dist.mask)
    k = len(idx)
    ls = label_smoothed_ce(dist.start[idx], int(np.searchsorted(idx, s)), eps, k)
    le = label_smoothed_ce(dist.end[idx], int(np.searchsorted(idx, e)), eps, k)
    return 0.5 * (ls + le)


def train_qa_fold(sequences: Sequence[QaSequence], vocab_size: int, config: QaConfig = QaConfig(), seed: int = 0) -> QaModel:
    if not sequences:
        raise EmptyFold("QA fold has no training examples")
    for seq in sequences:
        if seq.gold is None:
            raise GoldMasked("QA training example without a gold span")
    rng = np.random.default_rng(seed)
    model = QaModel.init(vocab_size, config, rng)
    state = AdamState(config.adam_beta1, config.adam_beta2, config.adam_eps)
    for _ in range(config.epochs):
        order = rng.permutation(len(sequences))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            model.params.zero_grad()
            for i in batch:
                epoch_loss += model.loss_and_grad(sequences[i], config.label_smoothing, scale=1.0 / len(batch))
            adam_step(model.params, state, config.lr)
        model.loss_trace.append(epoch_loss / len(sequences))
    return model


def ensemble_distributions(dists: Sequence[SpanDistribution]) -> SpanDistribution:
    """Elementwise mean of member distributions.

    Values are sorted along the member axis before summing, so the result
    does not depend on member order.
    """
    if not dists:
        raise ValueError("no distributions to ensemble")
    mask = dists[0].mask
    for d in dists[1:]:
        if d.mask.shape != mask.shape or not np.array_equal(d.mask, mask):
            raise MaskMismatch("distributions cover different positions")
    n = len(dists)
    start = np.sort(np.stack([d.start for d in dists]), axis=0).sum(axis=0) / n
    end = np.sort(np.stack([d.end for d in dists]), axis=0).sum(axis=0) / n
    return SpanDistribution(start, end, mask.copy())


def decode_span(dist: SpanDistribution, max_answer_len: int = 10) -> SpanPrediction:
    """Pair ``s <= e < s + max_answer_len`` maximising ``P_start(s) * P_end(e)``."""
    if max_answer_len < 1:
        raise ValueError("max_answer_len must be >= 1")
    s, e, score = kernels.decode_span(dist.start, dist.end, np.asarray(dist.mask, dtype=np.uint8), max_answer_len)
    if s < 0:
        raise NoValidSpan("no unmasked start/end pair")
    return SpanPrediction(int(s), int(e), float(score))


def extract_answer_text(sentence: str, pred: SpanPrediction, offsets) -> str:
    """Sentence substring covered by the predicted positions."""
    if isinstance(offsets, QaSequence):
        offsets = offsets.offsets
    if not (0 <= pred.start <= pred.end < len(offsets)) or offsets[pred.start] is None or offsets[pred.end] is None:
        raise IndexOutOfRange(f"prediction ({pred.start}, {pred.end}) outside the context offsets")
    return sentence[offsets[pred.start][0]:offsets[pred.end][1]]


def answer_char_span(pred: SpanPrediction, seq: QaSequence) -> tuple[int, int]:
    if not (0 <= pred.start <= pred.end < len(seq)) or seq.offsets[pred.start] is None or seq.offsets[pred.end] is None:
        raise IndexOutOfRange(f"prediction ({pred.start}, {pred.end}) outside the context offsets")
    return seq.offsets[pred.start][0], seq.offsets[pred.end][1]


class QaEnsemble:
    def __init__(self, models: Sequence[QaModel], max_answer_len: int = 10):
        if not models:
            raise ValueError("ensemble needs at least one model")
        self.models = list(models)
        self.max_answer_len = max_answer_len

    def __len__(self):
        return len(self.models)

    def distribution(self, seq: QaSequence) -> SpanDistribution:
        return ensemble_distributions([qa_forward(m, seq) for m in self.models])

    def predict(self, seq: QaSequence, sentence: str) -> SpanPrediction:
        pred = decode_span(self.distribution(seq), self.max_answer_len)
        span = answer_char_span(pred, seq)
        return SpanPrediction(pred.start, pred.end, pred.score, span, sentence[span[0]:span[1]])


def qa_examples(sentences, vocab: Vocabulary):
    """One training sequence per gold pair; returns ``(sequences, n_skipped)``."""
    out, skipped = [], 0
    for s in sentences:
        for pair in s.pairs:
            try:
                out.append(build_qa_sequence(pair.drug_surface, s.text, vocab, pair))
            except GoldSpanUnmappable:
                skipped += 1
    return out, skipped
