import numpy as np
import pytest
import torch


@pytest.fixture(autouse=True)
def _deterministic():
    """Single-thread, seeded torch for bit-exact comparisons."""
    torch.set_num_threads(1)
    torch.manual_seed(0)
    np.random.seed(0)
    yield
