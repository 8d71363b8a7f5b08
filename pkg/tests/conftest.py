import numpy as np
import pytest

from ssal.imaging import synth_dataset
from ssal.net import NetConfig


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tiny_net():
    return NetConfig(base_channels=8, depth=2)


@pytest.fixture(scope="session")
def tiny_data():
    return synth_dataset(24, (16, 16), seed=5)


TINY_OVERRIDES = [
    "data.n=40", "data.size=[16,16]", "split.pool_size=30", "split.test_size=10",
    "C=6", "batch=3", "T=2", "k=2", "g=1", "restarts=1",
    "net.base_channels=4", "net.depth=2", "ssl.epochs=1", "ssl.batch_size=8",
    "seg.base_epochs=1", "seg.iter_epochs=1", "seg.batch_size=8", "deterministic=true",
]


@pytest.fixture
def tiny_cfg():
    from ssal.config import load_config

    return load_config(None, TINY_OVERRIDES)


ACCEPTANCE: dict[int, str] = {}


class _Verdict:
    def __init__(self, number: int, title: str):
        self.number, self.title, self.detail = number, title, ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        detail = self.detail if exc_type is None else f"{exc_type.__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
        line = f"criterion {self.number:>2} {status}  {self.title}" + (f"  ({detail})" if detail else "")
        ACCEPTANCE[self.number] = line
        print(line)
        return False


@pytest.fixture
def verdict():
    return _Verdict


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
