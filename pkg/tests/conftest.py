"""Shared fixtures: procedural corpora and a seeded generator."""
import numpy as np
import pytest

from helpers import corpus_dir
from nlcodec.data import load_image_corpus


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def train_corpus():
    return load_image_corpus(corpus_dir("train", seed=1))


@pytest.fixture(scope="session")
def heldout_corpus():
    return load_image_corpus(corpus_dir("heldout", seed=2))


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def criterion():
    """Record one pass/fail line per acceptance criterion; assertion follows the record."""
    def record(name: str, passed: bool, detail: str) -> bool:
        line = f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
