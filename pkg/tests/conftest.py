import sys

import pytest

from adeqa.corpus import generate_synthetic_corpus
from adeqa.pipeline import PipelineConfig, train_pipeline

SENTENCE = "He took ibuprofen and developed rash."
POS_LINE = "1|He took ibuprofen and developed rash.|rash|32|36|ibuprofen|8|17"


@pytest.fixture(scope="session")
def small_corpus():
    return generate_synthetic_corpus(20, 20, 11)


@pytest.fixture(scope="session")
def small_config():
    return PipelineConfig(seed=3, relevance_k=2, qa_k=2, relevance_epochs=40, qa_epochs=60, dim=16, hidden=8)


@pytest.fixture(scope="session")
def small_bundle(small_corpus, small_config):
    return train_pipeline(small_corpus, small_config)


from adeqa import kernels as _kernels
from adeqa.kernels import _pykernels

try:
    from adeqa.kernels import _ckernels
except ImportError:
    _ckernels = None

KERNEL_NAMES = ("attention_forward", "attention_backward", "decode_span", "scatter_add_rows")


@pytest.fixture(params=["cython", "python"])
def backend(request, monkeypatch):
    """Run a test once per kernel implementation."""
    impl = _ckernels if request.param == "cython" else _pykernels
    if impl is None:
        pytest.skip("compiled kernels not built")
    for name in KERNEL_NAMES:
        monkeypatch.setattr(_kernels, name, getattr(impl, name))
    return request.param


def pytest_terminal_summary(terminalreporter):
    acc = sys.modules.get("tests.test_acceptance")
    if acc is None or not acc.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in acc.RESULTS:
        terminalreporter.write_line(line)
