import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def fixture_samples():
    from vton.data import synth_fixture

    return [synth_fixture(seed, 64, 64) for seed in range(4)]


@pytest.fixture(scope="session")
def fixture_dataset(tmp_path_factory):
    from vton.data import write_fixture_dataset

    root = tmp_path_factory.mktemp("fixtures")
    write_fixture_dataset(root / "train", 4, 0, resolution=(64, 64))
    write_fixture_dataset(root / "test", 4, 0, resolution=(64, 64))
    return root


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
