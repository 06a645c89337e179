import numpy as np
import pytest

from drmpg.distortion import DistortionFn, Family
from drmpg.mdp import chain_mdp
from drmpg.oracle import enumerate_episodes

CHAIN_GAMMA = 0.9

# one configuration per family, at the default parameter
ALL_G = [DistortionFn(f) for f in Family]
TABLE_G = [g for g in ALL_G if g.family is not Family.IDENTITY]


@pytest.fixture(scope="session")
def chain():
    return chain_mdp()


@pytest.fixture(scope="session")
def chain_atlas(chain):
    return enumerate_episodes(chain, CHAIN_GAMMA)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one summary line per acceptance criterion, shown at the end of the session
ACCEPTANCE_LINES: dict[int, str] = {}


def record_acceptance(k: int, passed: bool, detail: str) -> None:
    line = f"criterion {k:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[k] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
