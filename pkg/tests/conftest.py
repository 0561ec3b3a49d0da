import numpy as np
import pytest

from pltf.evaluation import make_holdout
from pltf.model import Observation, build_cp, build_tucker


def random_instance(rng, kind="cp", max_dim=4, max_rank=3, missing=0.0, seed=0):
    """Random small model with Poisson data drawn from a random intensity."""
    dims = tuple(int(d) for d in rng.integers(2, max_dim + 1, size=3))
    if kind == "cp":
        model = build_cp(*dims, int(rng.integers(1, max_rank + 1)))
    else:
        core = tuple(int(d) for d in rng.integers(1, max_rank + 1, size=3))
        model = build_tucker(*dims, *core)
    X = rng.poisson(rng.gamma(1.0, 3.0, size=dims)).astype(float)
    M = make_holdout(dims, missing, seed).train_mask
    return model, Observation(X, M)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
