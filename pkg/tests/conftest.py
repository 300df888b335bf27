import numpy as np
import pytest

from gomix.model import GomParams


@pytest.fixture
def two_profile_params():
    """Small well-separated model used across the estimation tests."""
    return GomParams(
        lam=np.array([[0.9, 0.7, 0.5, 0.2], [0.1, 0.3, 0.6, 0.8]]),
        alpha0=0.8,
        xi=np.array([0.6, 0.4]),
    )


@pytest.fixture
def mirror_params():
    """The two-item model whose marginal (1,1) probability integrates to 0.343."""
    return GomParams(
        lam=np.array([[0.9, 0.9], [0.1, 0.1]]),
        alpha0=2.0,
        xi=np.array([0.5, 0.5]),
    )
