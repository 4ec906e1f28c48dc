import numpy as np
import pytest

from rulforge.dataset import SynthConfig, generate_synthetic, write_subset


@pytest.fixture(scope="session")
def small_bundle():
    """A quick synthetic bundle for tests that just need plausible data."""
    return generate_synthetic(
        SynthConfig(n_train=10, n_test=4, min_len=60, max_len=110, seed=7)
    )


@pytest.fixture(scope="session")
def small_data_root(tmp_path_factory, small_bundle):
    root = tmp_path_factory.mktemp("synth_data")
    write_subset(small_bundle, root)
    return root


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
