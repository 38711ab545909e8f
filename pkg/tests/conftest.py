import numpy as np
import pytest
from hypothesis import settings

from risbeam.codebook import build_codebooks
from risbeam.config import GainModel, SystemConfig

settings.register_profile("risbeam", deadline=None, max_examples=60)
settings.load_profile("risbeam")


@pytest.fixture
def small_cfg():
    # Nr=4 (2x2), M=4 (2x2), Nt=2
    return SystemConfig(Ns=2, NB=2, Ms=2, MB=2, Nt=2, K=2)


@pytest.fixture
def gm():
    return GainModel()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_codebooks(cfg, sizes=(2, 2, 2)):
    return build_codebooks(cfg, sizes)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
