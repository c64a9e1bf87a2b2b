import functools

import pytest
import torch

from voidkit.optimizer import protect
from voidkit.victims import build_surrogate_bundle, synthetic_face

torch.set_num_threads(1)


@functools.lru_cache(maxsize=None)
def default_bundle():
    return build_surrogate_bundle()


@functools.lru_cache(maxsize=None)
def default_run(seed: int):
    """Protect ``synthetic_face(seed)`` at defaults; shared across test modules."""
    return protect(synthetic_face(seed), default_bundle(), seed=seed)


@pytest.fixture(scope="session")
def bundle():
    return default_bundle()


@pytest.fixture(scope="session")
def face():
    return synthetic_face(0)


@pytest.fixture(scope="session")
def target():
    return synthetic_face(500)


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
