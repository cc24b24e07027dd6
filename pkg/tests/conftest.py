import time

import numpy as np
import pytest

from dred.features import gen_synthetic_features
from dred.latent import reference_transform
from dred.training import TrainConfig, synthetic_corpus, train_tables


@pytest.fixture(scope="session")
def transform():
    return reference_transform()


@pytest.fixture(scope="session")
def corpus():
    return synthetic_corpus(120)


@pytest.fixture(scope="session")
def trained(corpus):
    """Tables trained with the default configuration, plus wall time in seconds."""
    t0 = time.perf_counter()
    table, points = train_tables(TrainConfig(), corpus)
    return table, points, time.perf_counter() - t0


@pytest.fixture(scope="session")
def table(trained):
    return trained[0]


@pytest.fixture(scope="session")
def probe(transform):
    """Held-out sequences, disjoint from the training corpus seeds."""
    return [gen_synthetic_features(700000 + i, 400) for i in range(5)]


@pytest.fixture(scope="session")
def probe_latents(transform, probe):
    return np.concatenate([transform.analyze(s.frames)[0] for s in probe])


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
