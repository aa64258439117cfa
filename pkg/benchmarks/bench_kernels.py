"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N] [--seq-len L] [--dim D]

Prints one row per kernel: best-of-N wall time for each backend and the
speedup.  The last row times one QA training epoch end to end.
"""

import argparse
import time

import numpy as np

from adeqa import kernels
from adeqa.corpus import generate_synthetic_corpus
from adeqa.kernels import _pykernels
from adeqa.spanqa import QaConfig, qa_examples, train_qa_fold
from adeqa.textproc import build_vocab

try:
    from adeqa.kernels import _ckernels
except ImportError:
    _ckernels = None

NAMES = ("attention_forward", "attention_backward", "decode_span", "scatter_add_rows")


def best_of(fn, repeat, inner):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn()
        best = min(best, (time.perf_counter() - t0) / inner)
    return best


def use(impl):
    for name in NAMES:
        setattr(kernels, name, getattr(impl, name))


def cases(L, d, rng):
    X = rng.normal(size=(L, d))
    Wq, Wk, Wv = (rng.normal(scale=d ** -0.5, size=(d, d)) for _ in range(3))
    start, end = rng.dirichlet(np.ones(L)), rng.dirichlet(np.ones(L))
    mask = np.ones(L, dtype=bool)
    mask[: L // 4] = False
    table = np.zeros((500, d))
    ids = rng.integers(0, 500, size=L)
    rows = rng.normal(size=(L, d))
    corpus = generate_synthetic_corpus(20, 0, 1)
    vocab = build_vocab(corpus.sentences)
    seqs, _ = qa_examples(corpus.sentences, vocab)
    cfg = QaConfig(dim=d, epochs=1)

    def k():
        return kernels

    return {
        "attention_forward": lambda: k().attention_forward(X, Wq, Wk, Wv),
        "attention_backward": lambda: k().attention_backward(X, X, Wq, Wk, Wv, *k().attention_forward(X, Wq, Wk, Wv)[1:]),
        "decode_span": lambda: k().decode_span(start, end, mask, 10),
        "scatter_add_rows": lambda: k().scatter_add_rows(table, ids, rows),
        "qa_epoch (20 examples)": lambda: train_qa_fold(seqs, len(vocab), cfg, seed=0),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seq-len", type=int, default=40)
    ap.add_argument("--dim", type=int, default=32)
    args = ap.parse_args(argv)
    if _ckernels is None:
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation` first")
    rng = np.random.default_rng(0)
    bench = cases(args.seq_len, args.dim, rng)
    print(f"seq_len={args.seq_len} dim={args.dim} repeat={args.repeat}")
    print(f"{'kernel':<26}{'cython (us)':>14}{'numpy (us)':>14}{'speedup':>10}")
    original = {n: getattr(kernels, n) for n in NAMES}
    try:
        for name, fn in bench.items():
            inner = 2 if name.startswith("qa_epoch") else 200
            times = {}
            for label, impl in (("cython", _ckernels), ("numpy", _pykernels)):
                use(impl)
                fn()
                times[label] = best_of(fn, args.repeat, inner) * 1e6
            print(f"{name:<26}{times['cython']:>14.1f}{times['numpy']:>14.1f}{times['numpy'] / times['cython']:>9.2f}x")
    finally:
        for n, f in original.items():
            setattr(kernels, n, f)


if __name__ == "__main__":
    main()
