import numpy as np
import pytest

from scalelab import AcquisitionSpec, simulate_snapshot
from scalelab.camera import synthetic_reference

SEED = 20080809


@pytest.fixture(scope="session")
def reference_2048():
    """The acceptance corpus reference scene (8-bit intensity range)."""
    return synthetic_reference(2048, 2048, SEED)


@pytest.fixture(scope="session")
def snapshot_204(reference_2048):
    """Aliasing-free acquisition used by the sampling studies (c=1.1, S=10)."""
    return simulate_snapshot(reference_2048,
                             AcquisitionSpec(c=1.1, s_factor=10.0, seed=SEED))


@pytest.fixture(scope="session")
def reference_512():
    """Smaller reference for unit-level camera tests."""
    return synthetic_reference(512, 512, SEED + 1)


@pytest.fixture
def rng():
    return np.random.default_rng(SEED)
