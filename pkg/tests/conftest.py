from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from multiling.synthetic import SyntheticWorld, pretraining_documents, write_task_suite
from multiling.tokenizer import TokenizerHandle, build_vocab

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def finite_difference(f, x: np.ndarray, idx, h: float = 1e-5) -> float:
    old = x[idx]
    x[idx] = old + h
    up = f()
    x[idx] = old - h
    down = f()
    x[idx] = old
    return (up - down) / (2 * h)


def rel_err(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


@pytest.fixture(scope="session")
def world():
    return SyntheticWorld(0)


@pytest.fixture(scope="session")
def small_docs(world):
    return pretraining_documents(32, seed=0, world=world)


@pytest.fixture(scope="session")
def small_tok(small_docs):
    return TokenizerHandle(build_vocab([d.text for d in small_docs], 96))


@pytest.fixture(scope="session")
def task_dir(tmp_path_factory, world):
    out = tmp_path_factory.mktemp("tasks")
    write_task_suite(out, seed=0, n_train=20, n_test=10, world=world, epochs=10)
    return out


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    if module is not None and module.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in module.RESULTS:
            terminalreporter.write_line(line)
