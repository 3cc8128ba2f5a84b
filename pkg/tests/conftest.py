import numpy as np
import pytest

from subgroup_fusion.core import GroupedDataset, standardize_by_group


def make_data(seed, K=3, p=10, n_k=20, standardize=True, shared=False):
    """Random grouped regression data; optionally one shared sparse beta."""
    rng = np.random.default_rng(seed)
    sizes = [n_k] * K if np.isscalar(n_k) else list(n_k)
    beta = rng.standard_normal(p) * (rng.random(p) < 0.4)
    groups = []
    for k, n in enumerate(sizes):
        X = rng.standard_normal((n, p)) + rng.normal(0, 0.5, p)
        b = beta if shared else rng.standard_normal(p) * (rng.random(p) < 0.4)
        groups.append((f"g{k}", X, X @ b + 0.5 * rng.standard_normal(n)))
    data = GroupedDataset(groups)
    if standardize:
        data, _ = standardize_by_group(data)
    return data


@pytest.fixture
def small_data():
    return make_data(0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
