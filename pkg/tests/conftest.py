import os

import numpy as np
import pytest

from pareto_fair.core import Dataset


@pytest.fixture
def toy_dataset():
    """Two features, two groups, 200 rows, labels depend on the first feature."""
    rng = np.random.default_rng(7)
    n = 200
    X = rng.normal(size=(n, 2))
    g = (np.arange(n) % 4 == 0).astype(int)
    y = (X[:, 0] + 0.3 * rng.normal(size=n) > 0).astype(int)
    return Dataset(X, y, [(int(v),) for v in g], ("x0", "x1"), ("grp",))


@pytest.fixture
def numba_off(monkeypatch):
    monkeypatch.setenv("PARETO_FAIR_NUMBA", "0")
    yield
    monkeypatch.delenv("PARETO_FAIR_NUMBA", raising=False)


@pytest.fixture
def data_dir(tmp_path, monkeypatch):
    d = tmp_path / "data"
    d.mkdir()
    monkeypatch.setenv("PARETO_FAIR_DATA_DIR", str(d))
    return d


REPO_DATA = os.path.join(os.path.dirname(os.path.dirname(__file__)), "data")


ACCEPTANCE = {}


def record(n, ok, detail=""):
    """Store one acceptance outcome; printed in the terminal summary."""
    ACCEPTANCE[n] = (bool(ok), detail)
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
