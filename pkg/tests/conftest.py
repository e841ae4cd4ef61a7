import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from bitstorm import oracle as O
from bitstorm.model import FIXTURES, build_model, golden_run, lower, preset

# acceptance lines collected by test_acceptance, echoed in the terminal summary
ACCEPTANCE_LINES = []

# exhaustive-run configuration shared by several acceptance criteria
EXACT_PROMPT = [3]
EXACT_STEPS = 1


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def dot8():
    p = FIXTURES["dot8"]()
    return p, golden_run(p)


@pytest.fixture(scope="session")
def dot4():
    p = FIXTURES["dot4"]()
    return p, golden_run(p)


@pytest.fixture(scope="session")
def dot8_exact(dot8):
    return O.exact_single(*dot8)


@pytest.fixture(scope="session")
def gpt2_model():
    return build_model(preset("nano-gpt2"))


@pytest.fixture(scope="session")
def gpt2(gpt2_model):
    """nano-gpt2 with prompt [3,1,4] and two generated tokens."""
    p = lower(gpt2_model, [3, 1, 4], 2)
    return p, golden_run(p)


@pytest.fixture(scope="session")
def gpt2_small(gpt2_model):
    """The shorter run used for exhaustive enumeration."""
    p = lower(gpt2_model, EXACT_PROMPT, EXACT_STEPS)
    return p, golden_run(p)


@pytest.fixture(scope="session")
def gpt2_exact(gpt2_small):
    """Exhaustive VALUE/RANDOM table of the short nano-gpt2 run (about ten minutes).

    Setting BITSTORM_EXACT_CACHE to a file path reuses a previously saved
    table when its program digest matches; it is recomputed otherwise.
    """
    program, golden = gpt2_small
    path = os.environ.get("BITSTORM_EXACT_CACHE")
    if path and os.path.exists(path):
        cached = O.ExactResult.load(path)
        if cached.program_digest == program.digest:
            return cached
    ex = O.exact_single(program, golden)
    if path:
        ex.save(path)
    return ex
