import warnings
from functools import lru_cache

import numpy as np
import pytest

from siomed import Dataset, DgpConfig, generate


@lru_cache(maxsize=None)
def dgp_sample(dgp_id=1, n=1000, omega=0.6, seed=0):
    return generate(DgpConfig(dgp_id, n, omega, seed))


@pytest.fixture(autouse=True)
def _quiet_overflow():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


def complete_sample(n, seed, t_prob=0.5, m_shift=1.0):
    """R == 1 data with a randomized treatment independent of X."""
    rng = np.random.default_rng(seed)
    x = np.column_stack([rng.uniform(size=n), rng.uniform(size=n), rng.binomial(1, 0.5, n)])
    t = rng.binomial(1, t_prob, n).astype(float)
    m = x[:, 0] - x[:, 1] + m_shift * t + rng.normal(size=n)
    y = 1 + x[:, 0] + t + m + rng.normal(size=n)
    z = x[:, 0] + rng.normal(scale=0.5, size=n)
    return Dataset.build(np.ones(n), t, m, y, x, z, missable=[True, False, False])


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("tests.test_acceptance")
    if mod is None:
        return
    lines = [v for k, v in sorted(mod.RESULTS.items()) if k.startswith("line ")]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
