import numpy as np
import pytest
from hypothesis import settings

from naaqa.scenegen import compose_scene
from naaqa.soundbank import build_bank

settings.register_profile("naaqa", deadline=None, max_examples=40)
settings.load_profile("naaqa")


@pytest.fixture(scope="session")
def train_bank():
    return build_bank("train", 0)


@pytest.fixture(scope="session")
def scenes(train_bank):
    return [compose_scene(train_bank, 1000 + k, scene_id=f"t_{k:03d}") for k in range(40)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE = []


@pytest.fixture
def criterion(request):
    def record(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2}: {detail}"
        ACCEPTANCE.append((number, line))
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
