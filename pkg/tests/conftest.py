import sys
from pathlib import Path

import pytest

# helper modules (zoo, exprgen) live next to the tests
sys.path.insert(0, str(Path(__file__).parent))

import zoo  # noqa: E402
from mmattack.encoders.corpus import synthesize_corpus  # noqa: E402
from mmattack.encoders.model import ALIGNED, FUSED, ModelConfig, new_model  # noqa: E402
from mmattack.encoders.train import stream  # noqa: E402


@pytest.fixture(scope="session")
def corpus():
    return synthesize_corpus(11, 60)


@pytest.fixture(scope="session")
def fresh_fused():
    return new_model(FUSED, ModelConfig(), stream(5, "init.fused"))


@pytest.fixture(scope="session")
def fresh_aligned():
    return new_model(ALIGNED, ModelConfig(), stream(5, "init.aligned"))


# trained seed-0 models; cached on disk by tests/zoo.py


@pytest.fixture(scope="session")
def trained_fused():
    return zoo.trained(FUSED, 0)[0]


@pytest.fixture(scope="session")
def trained_aligned():
    return zoo.trained(ALIGNED, 0)[0]


@pytest.fixture(scope="session")
def zoo_corpus():
    return zoo.corpus(0)


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def acceptance(request):
    """Record one acceptance line: ``acceptance(n, title, passed, detail, seconds)``."""
    lines = request.config.stash[_ACCEPTANCE]

    def record(n, title, passed, detail, seconds):
        verdict = "PASS" if passed else "FAIL"
        tag = f"criterion {n}" if n != "info" else "info"
        line = f"[{verdict}] {tag}: {title} | {detail} | {seconds:.1f}s"
        print(line)
        lines.append(line)

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance")
        for line in lines:
            terminalreporter.write_line(line)
