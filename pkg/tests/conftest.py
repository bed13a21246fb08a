import numpy as np
import pytest
import torch

from focusmap.dataset import load_dataset, write_synthetic_dataset
from focusmap.imaging import SyntheticSpec


@pytest.fixture(autouse=True)
def _float64():
    previous = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(previous)


@pytest.fixture(scope="session")
def small_data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("small_data")
    write_synthetic_dataset(root, SyntheticSpec(seed=3), 24)
    return root


@pytest.fixture(scope="session")
def small_data(small_data_dir):
    return load_dataset(small_data_dir)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
