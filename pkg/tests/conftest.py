import numpy as np
import pytest
import torch

from wipgest import synthgen

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def small_dataset():
    """Three subjects on the default script."""
    return synthgen.generate_dataset(3, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
