import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from vecmatch.data import Dataset

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_dataset(seed=0, sizes=(60, 80, 100), p=2, shift=0.5, outcome=False):
    rng = np.random.default_rng(seed)
    blocks, arms = [], []
    for t, n in enumerate(sizes, start=1):
        mu = np.zeros(p)
        mu[(t - 1) % p] = shift * (t - 1)
        blocks.append(rng.standard_normal((n, p)) + mu)
        arms.append(np.full(n, t))
    x = np.vstack(blocks)
    t = np.concatenate(arms)
    y = x.sum(axis=1) + t + rng.normal(size=len(t)) if outcome else None
    return Dataset(covariates=x, treatment=t, outcome=y)


@pytest.fixture
def three_arm():
    return make_dataset()


# one line per acceptance criterion, printed after the run
ACCEPTANCE: list[str] = []


def record(criterion, ok: bool, detail: str) -> bool:
    ACCEPTANCE.append(f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: s.split(":")[0]):
            terminalreporter.write_line(line)
