import numpy as np
import pytest

from roughvol import ModelParams


@pytest.fixture
def params():
    """The workhorse parameter set used across the suite."""
    return ModelParams(
        x0=0.2, kappa1=0.3, kappa2=-1.0, sigma=1.0, rho=0.7, alpha=0.75, T=1.0
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
