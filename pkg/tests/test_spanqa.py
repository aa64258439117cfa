import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adeqa.corpus import generate_synthetic_corpus
from adeqa.errors import EmptyFold, GoldMasked, GoldSpanUnmappable, IndexOutOfRange, MaskMismatch, NoValidSpan
from adeqa.neuralcore import ParameterSet, finite_diff_grad_check
from adeqa.spanqa import (
    QaConfig, QaEnsemble, QaModel, SpanDistribution, SpanPrediction, build_qa_sequence, decode_span,
    ensemble_distributions, extract_answer_text, qa_examples, qa_forward, qa_loss, train_qa_fold,
)
from adeqa.textproc import BOS, SEP, build_vocab, char_span_to_token_span, token_span_to_char_span, tokenize

from .conftest import SENTENCE


@pytest.fixture(scope="module")
def vocab():
    return build_vocab([SENTENCE])


def test_build_sequence_layout_and_gold(vocab):
    seq = build_qa_sequence("ibuprofen", SENTENCE, vocab, (32, 36))
    q = len(tokenize("ibuprofen"))
    assert seq.ids[0] == BOS and seq.ids[q + 1] == SEP and seq.context_start == q + 2
    assert seq.gold == (q + 2 + 5, q + 2 + 5)
    tb, te = seq.gold[0] - seq.context_start, seq.gold[1] - seq.context_start
    assert token_span_to_char_span(tokenize(SENTENCE), (tb, te)) == (32, 36)
    assert list(seq.mask) == [False] * (q + 2) + [True] * 7


def test_build_sequence_without_gold(vocab):
    assert build_qa_sequence("ibuprofen", SENTENCE, vocab).gold is None


def test_gold_unmappable(vocab):
    with pytest.raises(GoldSpanUnmappable):
        build_qa_sequence("ibuprofen", SENTENCE, vocab, (2, 3))


def tiny_model(vocab_size, seed=0, d=8, zero_head=False):
    m = QaModel.init(vocab_size, QaConfig(dim=d, max_positions=32), np.random.default_rng(seed))
    if zero_head:
        m.params["head.w"][:] = 0
        m.params["head.b"][:] = 0
    return m


def test_zero_head_uniform(vocab):
    seq = build_qa_sequence("ibuprofen", SENTENCE, vocab)
    d = qa_forward(tiny_model(len(vocab), zero_head=True), seq)
    assert np.allclose(d.start[seq.mask], 1 / 7, atol=1e-15) and np.allclose(d.end[seq.mask], 1 / 7, atol=1e-15)
    assert np.all(d.start[~seq.mask] == 0) and np.all(d.end[~seq.mask] == 0)


def test_distributions_normalized_random_models(small_corpus):
    v = build_vocab(small_corpus.sentences)
    for seed in range(20):
        m = tiny_model(len(v), seed)
        s = small_corpus.sentences[seed]
        seq = build_qa_sequence("warfarin", s.text, v)
        d = qa_forward(m, seq)
        assert abs(d.start.sum() - 1) <= 1e-9 and abs(d.end.sum() - 1) <= 1e-9
        assert np.all(d.start[~seq.mask] == 0.0) and np.all(d.end[~seq.mask] == 0.0)


def test_qa_loss_values():
    mask = np.array([False, True, True, True])
    perfect = SpanDistribution(np.array([0, 1.0, 0, 0]), np.array([0, 0, 1.0, 0]), mask)
    assert qa_loss(perfect, (1, 2), 0.0) == pytest.approx(0.0, abs=1e-12)
    uniform = SpanDistribution(np.array([0, 1 / 3, 1 / 3, 1 / 3]), np.array([0, 1 / 3, 1 / 3, 1 / 3]), mask)
    for gold in [(1, 1), (1, 3), (2, 3)]:
        assert qa_loss(uniform, gold, 0.1) == pytest.approx(np.log(3), abs=1e-12)
    with pytest.raises(GoldMasked):
        qa_loss(uniform, (0, 2), 0.1)


def test_training_loss_matches_qa_loss(vocab):
    m = tiny_model(len(vocab), 4)
    seq = build_qa_sequence("ibuprofen", SENTENCE, vocab, (22, 36))
    assert m.loss_and_grad(seq, 0.1) == pytest.approx(qa_loss(qa_forward(m, seq), seq.gold, 0.1), abs=1e-12)


def test_qa_grad_check_five_examples(small_corpus, backend):
    v = build_vocab(small_corpus.sentences)
    seqs, _ = qa_examples(small_corpus.positives[:5], v)
    assert len(seqs) == 5
    m = tiny_model(len(v), 7, d=6)
    for seq in seqs:
        def loss_and_grad():
            m.params.zero_grad()
            return m.loss_and_grad(seq, 0.1)

        assert finite_diff_grad_check(loss_and_grad, m.params) < 1e-4


def test_head_is_width_one_convolution(vocab):
    m = tiny_model(len(vocab), 2)
    seq = build_qa_sequence("ibuprofen", SENTENCE, vocab)
    L, (_, _, H, _) = m.logits(seq, with_cache=True)
    W, b = m.params["head.w"], m.params["head.b"]
    # conv1d, kernel size 1: out[c, t] = b[c] + sum_i W[i, c] * H[t + 0, i]
    conv = np.array([[b[c] + sum(W[i, c] * H[t, i] for i in range(H.shape[1])) for c in range(2)] for t in range(H.shape[0])])
    assert np.allclose(L, conv, atol=1e-13)


def test_overfit_thirty_pairs():
    c = generate_synthetic_corpus(30, 0, 5)
    v = build_vocab(c.sentences)
    seqs, skipped = qa_examples(c.sentences, v)
    assert skipped == 0 and len(seqs) == 30
    m = train_qa_fold(seqs, len(v), QaConfig(epochs=80), seed=0)
    exact = sum((lambda p: (p.start, p.end) == s.gold)(decode_span(qa_forward(m, s), 10)) for s in seqs)
    assert exact / len(seqs) >= 0.9


def test_train_deterministic_and_empty(small_corpus):
    v = build_vocab(small_corpus.sentences)
    seqs, _ = qa_examples(small_corpus.positives[:6], v)
    cfg = QaConfig(dim=8, epochs=2, max_positions=32)
    a, b = train_qa_fold(seqs, len(v), cfg, seed=1), train_qa_fold(seqs, len(v), cfg, seed=1)
    for k in a.params:
        assert np.array_equal(a.params[k], b.params[k])
    with pytest.raises(EmptyFold):
        train_qa_fold([], len(v), cfg)


def test_ensemble_distributions():
    mask = np.array([True, True])
    a = SpanDistribution(np.array([1.0, 0.0]), np.array([0.0, 1.0]), mask)
    b = SpanDistribution(np.array([0.0, 1.0]), np.array([1.0, 0.0]), mask)
    out = ensemble_distributions([a, b])
    assert np.array_equal(out.start, [0.5, 0.5]) and np.array_equal(out.end, [0.5, 0.5])
    same = ensemble_distributions([a, a, a])
    assert np.array_equal(same.start, a.start) and np.array_equal(same.end, a.end)
    with pytest.raises(MaskMismatch):
        ensemble_distributions([a, SpanDistribution(a.start, a.end, np.array([False, True]))])


def _random_dist(rng, n):
    mask = rng.random(n) < 0.7
    mask[rng.integers(n)] = True
    def one():
        x = np.where(mask, rng.random(n), 0.0)
        return x / x.sum()
    return SpanDistribution(one(), one(), mask)


def test_ensemble_normalized_and_permutation_invariant():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(1, 20))
        base = _random_dist(rng, n)
        dists = [SpanDistribution(_random_dist(rng, n).start * 0 + _random_dist(rng, n).start, base.end, base.mask)
                 for _ in range(int(rng.integers(1, 6)))]
        dists = [SpanDistribution(np.where(base.mask, d.start, 0) / np.where(base.mask, d.start, 0).sum(), d.end, base.mask)
                 if np.where(base.mask, d.start, 0).sum() > 0 else base for d in dists]
        out = ensemble_distributions(dists)
        assert abs(out.start.sum() - 1) <= 1e-9 and abs(out.end.sum() - 1) <= 1e-9
        perm = ensemble_distributions([dists[i] for i in rng.permutation(len(dists))])
        assert np.array_equal(out.start, perm.start) and np.array_equal(out.end, perm.end)


def test_decode_brute_force_example():
    start, end = [0.1, 0.7, 0.2], [0.6, 0.1, 0.3]
    pairs = {(s, e): start[s] * end[e] for s in range(3) for e in range(s, 3)}
    assert len(pairs) == 6
    best = max(pairs, key=lambda k: (pairs[k], -k[0], -k[1]))
    dist = SpanDistribution(np.array(start), np.array(end), np.ones(3, dtype=bool))
    pred = decode_span(dist, 10)
    assert (pred.start, pred.end) == best == (1, 2)
    assert pred.score == pytest.approx(0.21, abs=1e-15)


def test_decode_single_token():
    dist = SpanDistribution(np.array([0, 0, 1.0]), np.array([0, 0, 1.0]), np.array([False, False, True]))
    assert (decode_span(dist).start, decode_span(dist).end) == (2, 2)


def test_decode_no_valid_span():
    with pytest.raises(NoValidSpan):
        decode_span(SpanDistribution(np.ones(2), np.ones(2), np.zeros(2, dtype=bool)))


def brute_decode(start, end, mask, max_len):
    best = None
    for s, e in itertools.product(range(len(start)), repeat=2):
        if mask[s] and mask[e] and s <= e < s + max_len:
            key = (start[s] * end[e], -s, -e)
            if best is None or key > best:
                best = key
    return -best[1], -best[2]


def test_decode_equals_brute_force(backend):
    rng = np.random.default_rng(42)
    for _ in range(1000):
        n = int(rng.integers(1, 25))
        d = _random_dist(rng, n)
        if rng.random() < 0.2:  # force ties
            d = SpanDistribution(np.round(d.start, 1), np.round(d.end, 1), d.mask)
        L = int(rng.integers(1, 12))
        p = decode_span(d, L)
        assert (p.start, p.end) == brute_decode(d.start, d.end, d.mask, L)
        assert p.start <= p.end < p.start + L and d.mask[p.start] and d.mask[p.end]


def test_extract_answer(vocab):
    seq = build_qa_sequence("ibuprofen", SENTENCE, vocab)
    c0 = seq.context_start
    assert extract_answer_text(SENTENCE, SpanPrediction(c0 + 5, c0 + 5, 1.0), seq) == "rash"
    assert extract_answer_text(SENTENCE, SpanPrediction(c0, len(seq) - 1, 1.0), seq.offsets) == SENTENCE
    with pytest.raises(IndexOutOfRange):
        extract_answer_text(SENTENCE, SpanPrediction(c0, len(seq), 1.0), seq)
    with pytest.raises(IndexOutOfRange):
        extract_answer_text(SENTENCE, SpanPrediction(0, 3, 1.0), seq)


def test_ensemble_predict_renders_text(small_corpus):
    v = build_vocab(small_corpus.sentences)
    ens = QaEnsemble([tiny_model(len(v), 1), tiny_model(len(v), 2)], max_answer_len=4)
    s = small_corpus.positives[0]
    seq = build_qa_sequence(s.pairs[0].drug_surface, s.text, v)
    pred = ens.predict(seq, s.text)
    assert pred.answer_text == s.text[slice(*pred.char_span)]
    assert pred.end - pred.start < 4
