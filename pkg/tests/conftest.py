import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def random_spd(dim: int, rng: np.random.Generator, ridge: float = 1.0) -> np.ndarray:
    """A comfortably positive-definite random matrix."""
    m = rng.standard_normal((dim, dim))
    return m @ m.T + ridge * np.eye(dim)
