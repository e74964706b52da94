import numpy as np
import pytest

from fedfnn.fnn import LabeledDataset, RuleBank

# filled by tests/test_acceptance.py, printed after the run
ACCEPTANCE_RESULTS: dict[int, tuple[str, str]] = {}


def random_bank(rng, K, D, C, sigma_range=(0.5, 1.5), theta_scale=1.0, m_scale=1.0):
    return RuleBank(
        ids=np.arange(K),
        m=rng.uniform(-m_scale, m_scale, (K, D)),
        sigma=rng.uniform(*sigma_range, (K, D)),
        theta=theta_scale * rng.standard_normal((K, D + 1, C)),
    )


def random_mask(rng, K, p=0.5):
    s = (rng.random(K) < p).astype(np.int8)
    if not s.any():
        s[rng.integers(K)] = 1
    return s


def random_dataset(rng, N, D, C):
    return LabeledDataset(rng.uniform(-1, 1, (N, D)), rng.integers(0, C, N), C)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        status, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {detail}")
