"""Pure numpy versions of the hot kernels.

Signatures and return conventions match the compiled module exactly.
"""

import numpy as np


def attention_forward(X, Wq, Wk, Wv):
    """Single-head residual self-attention.

    Returns ``(Y, Q, K, V, A)`` with ``Y = X + softmax(Q K^T / sqrt(d)) V``.
    """
    d = X.shape[1]
    Q = X @ Wq
    K = X @ Wk
    V = X @ Wv
    S = (Q @ K.T) / np.sqrt(d)
    S -= S.max(axis=1, keepdims=True)
    A = np.exp(S)
    A /= A.sum(axis=1, keepdims=True)
    Y = X + A @ V
    return Y, Q, K, V, A


def attention_backward(dY, X, Wq, Wk, Wv, Q, K, V, A):
    """Gradients ``(dX, dWq, dWk, dWv)`` for :func:`attention_forward`."""
    d = X.shape[1]
    dA = dY @ V.T
    dV = A.T @ dY
    dS = A * (dA - (dA * A).sum(axis=1, keepdims=True))
    dS /= np.sqrt(d)
    dQ = dS @ K
    dK = dS.T @ Q
    dWq = X.T @ dQ
    dWk = X.T @ dK
    dWv = X.T @ dV
    dX = dY + dQ @ Wq.T + dK @ Wk.T + dV @ Wv.T
    return dX, dWq, dWk, dWv


def decode_span(start, end, mask, max_len):
    """Best ``(s, e, score)`` maximising ``start[s] * end[e]``.

    Only unmasked ``s <= e < s + max_len`` are considered; ties go to the
    smaller ``s`` then the smaller ``e``.  Returns ``(-1, -1, -1.0)`` when no
    pair is valid.
    """
    n = start.shape[0]
    best_s, best_e, best = -1, -1, -1.0
    for s in range(n):
        if not mask[s]:
            continue
        ps = start[s]
        for e in range(s, min(n, s + max_len)):
            if mask[e]:
                score = ps * end[e]
                if score > best:
                    best_s, best_e, best = s, e, score
    return best_s, best_e, float(best)


def scatter_add_rows(table, ids, rows):
    """``table[ids[i]] += rows[i]`` with repeated ids accumulated."""
    np.add.at(table, ids, rows)
