import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(987654321)


def fair_bits(n: int, seed: int) -> np.ndarray:
    """Ideal Bernoulli(0.5) oracle, independent of the package RNG layer."""
    g = np.random.default_rng(seed)
    return (g.random(n) < 0.5).astype(np.uint8)


def biased_bits(n: int, p1: float, seed: int) -> np.ndarray:
    g = np.random.default_rng(seed)
    return (g.random(n) < p1).astype(np.uint8)
