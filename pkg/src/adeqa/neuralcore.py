"""Numeric core: softmax, losses, Adam, a residual attention block, grad checks.

Everything runs in float64.  Parameters live in a :class:`ParameterSet`, a
name -> array mapping with a gradient buffer of the same shape per entry.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import kernels
from .errors import DomainError, NonFiniteGradient, ShapeMismatch

PROB_FLOOR = 1e-12


def softmax(scores) -> np.ndarray:
    z = np.asarray(scores, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(scores) -> np.ndarray:
    z = np.asarray(scores, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def smoothed_targets(target: int, eps: float, k: int) -> np.ndarray:
    if not 0.0 <= eps < 1.0:
        raise DomainError(f"label smoothing must be in [0, 1), got {eps}")
    q = np.full(k, eps / k)
    q[target] += 1.0 - eps
    return q


def label_smoothed_ce(probs, target: int, eps: float, k: int | None = None, with_grad: bool = False):
    """Cross-entropy of ``probs`` against ``(1 - eps) * onehot + eps / k``.

    With ``with_grad=True`` also returns the gradient with respect to the
    logits that produced ``probs`` through a softmax, which is ``probs - q``.
    """
    p = np.asarray(probs, dtype=np.float64)
    k = p.shape[0] if k is None else k
    if k != p.shape[0]:
        raise ShapeMismatch(f"K={k} but {p.shape[0]} probabilities given")
    q = smoothed_targets(target, eps, k)
    if np.any((p <= 0.0) & (q > 0.0)):
        raise DomainError("zero probability where the smoothed target is positive")
    loss = float(-(q * np.log(np.maximum(p, PROB_FLOOR))).sum())
    if with_grad:
        return loss, p - q
    return loss


def smoothed_ce_from_logits(logits, target: int, eps: float):
    """Loss and logit gradient computed through log-softmax (no underflow)."""
    logits = np.asarray(logits, dtype=np.float64)
    q = smoothed_targets(target, eps, logits.shape[0])
    logp = log_softmax(logits)
    return float(-(q * logp).sum()), np.exp(logp) - q


def binary_cross_entropy(p, label) -> float:
    p = float(np.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR))
    return -(label * np.log(p) + (1 - label) * np.log(1.0 - p))


class ParameterSet:
    """Named float64 parameters with matching gradient buffers."""

    def __init__(self, arrays: dict[str, np.ndarray] | None = None):
        self.values: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        for name, arr in (arrays or {}).items():
            self.add(name, arr)

    def add(self, name, array):
        arr = np.array(array, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"parameter {name!r} has non-finite values")
        self.values[name] = arr
        self.grads[name] = np.zeros_like(arr)

    def __getitem__(self, name):
        return self.values[name]

    def __contains__(self, name):
        return name in self.values

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)

    def names(self):
        return list(self.values)

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0.0)

    def size(self):
        return sum(v.size for v in self.values.values())

    def copy(self):
        out = ParameterSet()
        for name, v in self.values.items():
            out.add(name, v)
        return out

    def to_dict(self):
        return {name: {"shape": list(v.shape), "data": v.ravel().tolist()} for name, v in self.values.items()}

    @classmethod
    def from_dict(cls, d):
        out = cls()
        for name, entry in d.items():
            out.add(name, np.array(entry["data"], dtype=np.float64).reshape(entry["shape"]))
        return out


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ParameterSet, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, applied in place."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    for name, g in params.grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {name!r}")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for name, g in params.grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        params.values[name] -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def _check_attention_shapes(X, Wq, Wk, Wv):
    if X.ndim != 2:
        raise ShapeMismatch(f"attention input must be 2-D, got shape {X.shape}")
    d = X.shape[1]
    for name, W in (("W_q", Wq), ("W_k", Wk), ("W_v", Wv)):
        if W.shape != (d, d):
            raise ShapeMismatch(f"{name} has shape {W.shape}, expected {(d, d)}")


def attention_block(X, params, prefix: str = "attn.") -> np.ndarray:
    """``X + softmax(Q K^T / sqrt(d)) V`` with Q, K, V projections from ``params``."""
    Y, _ = attention_block_forward(X, params, prefix)
    return Y


def attention_block_forward(X, params, prefix: str = "attn."):
    X = np.asarray(X, dtype=np.float64)
    Wq, Wk, Wv = (params[prefix + n] for n in ("wq", "wk", "wv"))
    _check_attention_shapes(X, Wq, Wk, Wv)
    Y, Q, K, V, A = kernels.attention_forward(X, Wq, Wk, Wv)
    return Y, (X, Q, K, V, A)


def attention_block_backward(dY, cache, params, prefix: str = "attn."):
    """Accumulate weight gradients into ``params.grads``; return ``dX``."""
    X, Q, K, V, A = cache
    Wq, Wk, Wv = (params[prefix + n] for n in ("wq", "wk", "wv"))
    dX, dWq, dWk, dWv = kernels.attention_backward(dY, X, Wq, Wk, Wv, Q, K, V, A)
    params.grads[prefix + "wq"] += dWq
    params.grads[prefix + "wk"] += dWk
    params.grads[prefix + "wv"] += dWv
    return dX


def finite_diff_grad_check(
    loss_and_grad: Callable[[], float],
    params: ParameterSet,
    eps_fd: float = 1e-5,
    floor: float = 1e-6,
    names=None,
) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``loss_and_grad`` must zero and fill ``params.grads`` and return the loss
    for the current parameter values.  Relative error per coordinate is
    ``|a - n| / max(|a|, |n|, floor)``; ``floor`` keeps coordinates whose true
    gradient is zero from dividing round-off noise by zero.
    """
    loss_and_grad()
    analytic = {n: g.copy() for n, g in params.grads.items()}
    worst = 0.0
    for name in names or params.names():
        value = params.values[name]
        flat = value.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps_fd
            up = loss_and_grad()
            flat[i] = orig - eps_fd
            down = loss_and_grad()
            flat[i] = orig
            numeric = (up - down) / (2.0 * eps_fd)
            denom = max(abs(a_flat[i]), abs(numeric), floor)
            worst = max(worst, abs(a_flat[i] - numeric) / denom)
    loss_and_grad()
    return worst
