import numpy as np
import pytest


@pytest.fixture
def gen():
    return np.random.default_rng(12345)


def onehot_probs(conf_correct):
    """Two-class probability rows whose max is ``conf`` and whose argmax is
    right (label 0) or wrong (label 1)."""
    probs, labels = [], []
    for conf, ok in conf_correct:
        probs.append([conf, 1.0 - conf])
        labels.append(0 if ok else 1)
    return np.array(probs), np.array(labels)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("tests.test_acceptance")
    lines = getattr(mod, "VERDICTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
