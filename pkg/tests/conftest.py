import sys

import numpy as np
import pytest

from ellcone.cli import corpus_dir, env_seed


@pytest.fixture
def rng():
    return np.random.default_rng(env_seed())


@pytest.fixture(scope="session")
def corpus():
    return corpus_dir()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
