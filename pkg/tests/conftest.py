import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from triageq import build_experiment


@pytest.fixture(scope="session")
def exp_workflows():
    """Validated workflows of the four bundled scenarios, keyed by id."""
    return {i: build_experiment(i).workflow() for i in (1, 2, 3, 4)}


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
