"""Stage 2: sentence relevance classifier and its fold ensemble.

The encoder mean-pools token embeddings, applies one tanh hidden layer and a
sigmoid output.  It stands in for a recurrent encoder; anything exposing
``prob(ids)`` can be dropped into :class:`RelevanceEnsemble`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .errors import ShapeMismatch, SingleClassFold
from .neuralcore import AdamState, ParameterSet, adam_step, binary_cross_entropy, sigmoid
from .textproc import Vocabulary, tokenize


@dataclass(frozen=True)
class RelevanceConfig:
    dim: int = 32
    hidden: int = 16
    epochs: int = 60
    lr: float = 0.01
    batch_size: int = 8
    init_scale: float = 0.1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8


class RelevanceModel:
    def __init__(self, params: ParameterSet, loss_trace: Sequence[float] = ()):
        self.params = params
        self.loss_trace = list(loss_trace)
        v, d = params["emb"].shape
        if params["w1"].shape[0] != d or params["w2"].shape != (params["w1"].shape[1], 1):
            raise ShapeMismatch("relevance parameter shapes are inconsistent")

    @classmethod
    def init(cls, vocab_size: int, config: RelevanceConfig, rng: np.random.Generator):
        s = config.init_scale
        return cls(ParameterSet({
            "emb": rng.normal(0.0, s, (vocab_size, config.dim)),
            "w1": rng.normal(0.0, 1.0 / np.sqrt(config.dim), (config.dim, config.hidden)),
            "b1": np.zeros(config.hidden),
            "w2": rng.normal(0.0, 1.0 / np.sqrt(config.hidden), (config.hidden, 1)),
            "b2": np.zeros(1),
        }))

    @property
    def vocab_size(self):
        return self.params["emb"].shape[0]

    def _forward(self, ids):
        p = self.params
        ids = np.asarray(ids, dtype=np.int64)
        pooled = p["emb"][ids].mean(axis=0) if len(ids) else np.zeros(p["emb"].shape[1])
        hidden = np.tanh(pooled @ p["w1"] + p["b1"])
        z = hidden @ p["w2"][:, 0] + p["b2"][0]
        return float(sigmoid(z)), (ids, pooled, hidden)

    def prob(self, ids) -> float:
        return self._forward(ids)[0]

    def loss_and_grad(self, batch, scale: float = 1.0) -> float:
        """Mean BCE over ``batch`` of ``(ids, label)``; gradients accumulate."""
        p, g = self.params, self.params.grads
        total = 0.0
        w = scale / len(batch)
        for ids, y in batch:
            prob, (ids, pooled, hidden) = self._forward(ids)
            total += binary_cross_entropy(prob, y)
            dz = (prob - y) * w
            g["b2"][0] += dz
            g["w2"][:, 0] += dz * hidden
            dpre = dz * p["w2"][:, 0] * (1.0 - hidden * hidden)
            g["b1"] += dpre
            g["w1"] += np.outer(pooled, dpre)
            if len(ids):
                dpooled = p["w1"] @ dpre / len(ids)
                kernels.scatter_add_rows(g["emb"], ids, np.broadcast_to(dpooled, (len(ids), dpooled.size)))
        return total / len(batch)


def encode(sentence, vocab: Vocabulary) -> list[int]:
    text = sentence if isinstance(sentence, str) else sentence.text
    return vocab.ids(tokenize(text))


def train_relevance_fold(train_fold, vocab: Vocabulary, config: RelevanceConfig = RelevanceConfig(), seed: int = 0) -> RelevanceModel:
    """Train one classifier on labelled sentences with Adam and BCE.

    Deterministic for a given ``seed``; the per-epoch mean loss is kept in
    ``model.loss_trace``.
    """
    data = [(encode(s, vocab), 1.0 if s.is_positive else 0.0) for s in train_fold]
    if len({y for _, y in data}) < 2:
        raise SingleClassFold(f"relevance fold of {len(data)} sentences has a single class")
    rng = np.random.default_rng(seed)
    model = RelevanceModel.init(len(vocab), config, rng)
    state = AdamState(config.adam_beta1, config.adam_beta2, config.adam_eps)
    for _ in range(config.epochs):
        order = rng.permutation(len(data))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [data[i] for i in order[start:start + config.batch_size]]
            model.params.zero_grad()
            epoch_loss += model.loss_and_grad(batch) * len(batch)
            adam_step(model.params, state, config.lr)
        model.loss_trace.append(epoch_loss / len(data))
    return model


class RelevanceEnsemble:
    def __init__(self, models: Sequence, threshold: float = 0.5):
        if not models:
            raise ValueError("ensemble needs at least one model")
        if not 0.0 <= threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")
        self.models = list(models)
        self.threshold = threshold

    def __len__(self):
        return len(self.models)


def relevance_prob(ensemble: RelevanceEnsemble, sentence, vocab: Vocabulary | None = None) -> float:
    """Arithmetic mean of member probabilities for one sentence.

    ``sentence`` is raw text (needs ``vocab``) or a precomputed id list.
    """
    ids = encode(sentence, vocab) if vocab is not None else sentence
    probs = [m.prob(ids) for m in ensemble.models]
    # fsum is exactly rounded, so member order cannot change the result.
    return float(min(1.0, max(0.0, math.fsum(probs) / len(probs))))


def classify_relevant(prob: float, threshold: float = 0.5) -> bool:
    """``True`` passes the sentence on to QA; the boundary passes."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    return prob >= threshold
