import numpy as np
import pytest

from cfair.dataset import EmbeddingDataset


def random_dataset(rng, n_groups=2, ids=(2, 6), imgs=(1, 5), d=8, spread=0.6):
    """Small random dataset: every group gets between ids[0] and ids[1] identities."""
    emb, ident, attr = [], [], []
    k = 0
    for a in range(n_groups):
        for _ in range(rng.integers(ids[0], ids[1] + 1)):
            center = rng.standard_normal(d)
            for _ in range(rng.integers(imgs[0], imgs[1] + 1)):
                emb.append(center + spread * (a + 1) * rng.standard_normal(d))
                ident.append(k)
            attr.append(a)
            k += 1
    return EmbeddingDataset(np.array(emb), np.array(ident), np.array(attr),
                            [f"g{a}" for a in range(n_groups)])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_ds(rng):
    return random_dataset(rng)


def pytest_terminal_summary(terminalreporter):
    """Print the acceptance suite's one-line verdicts after the run."""
    import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
