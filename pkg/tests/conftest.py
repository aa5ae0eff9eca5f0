import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from qrul.data import load_subset, write_synthetic_fd  # noqa: E402


@pytest.fixture(scope="session")
def synthetic_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("synthetic_fd")
    write_synthetic_fd(d, n_train=20, n_test=20, seed=3)
    return d


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("small_fd")
    write_synthetic_fd(d, n_train=5, n_test=5, seed=11)
    return load_subset(d, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
