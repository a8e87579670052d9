import numpy as np
import pytest

from opensiam import SplitSpec, generate_synthetic, init_net, make_split


@pytest.fixture
def store():
    return generate_synthetic(k=8, samples_per_id=6, dim=5, spread=0.2, rng_seed=3)


@pytest.fixture
def split(store):
    return make_split(store, SplitSpec.absolute(4), 0.5, rng_seed=9)


@pytest.fixture
def small_net():
    return init_net((5, 4, 4, 3), rng_seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def write_text(path, text):
    path.write_text(text, encoding="utf-8")
    return path


# acceptance criteria register their verdicts here; printed at session end
ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
