import numpy as np
import pytest

from diarkit.synth import CorpusSpec, synth_corpus

_ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def acceptance_log():
    """Record one pass/fail line per acceptance criterion; printed at session end."""
    def record(name: str, passed: bool, detail: str = ""):
        _ACCEPTANCE.append((name, bool(passed), detail))
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Eight 10-second synthetic recordings."""
    out = tmp_path_factory.mktemp("corpus")
    return synth_corpus(CorpusSpec(n_files=8, duration=10.0, seed=7), out)
