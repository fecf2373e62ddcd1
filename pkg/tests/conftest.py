import numpy as np
import pytest

from mvdeepid.synth import augment, build_dataset

# (criterion number, line) pairs appended by test_acceptance.record()
ACCEPTANCE_LINES: list[tuple[int, str]] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def raw_small():
    return build_dataset(4, dataset_seed=7)


@pytest.fixture(scope="session")
def aug_small(raw_small):
    return augment(raw_small)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
