import numpy as np
import pytest

from pedretrieval import Gallery

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_gallery(rng, n, d, labels=None, quantize=None):
    x = rng.normal(size=(n, d))
    if quantize:
        x = np.round(x * quantize) / quantize
    x = x.astype(np.float32).astype(np.float64)
    return Gallery(np.arange(n), x, labels)


def line_gallery(values, ids=None):
    values = np.asarray(values, dtype=float).reshape(-1, 1)
    ids = np.arange(len(values)) if ids is None else ids
    return Gallery(ids, values)
