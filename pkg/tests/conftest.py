import numpy as np
import pytest

from routhkit import ThreeBodyParams, build_three_body


@pytest.fixture(scope="session")
def setup123():
    """Default worked example: inertia (1, 2, 3), potential cos(phi)+cos(psi)."""
    return build_three_body(ThreeBodyParams(1.0, 2.0, 3.0))


@pytest.fixture()
def rng():
    return np.random.default_rng(42)
