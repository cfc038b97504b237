"""Shared fixtures: a stock desk config, a smaller one, and cached channels."""

import numpy as np
import pytest

from wpmec.config import SystemConfig
from wpmec.model import build_scenario, synth_channels


@pytest.fixture(scope="session")
def desk():
    return SystemConfig()


@pytest.fixture(scope="session")
def tiny():
    """Cut-down instance for tests that exercise the optimizer loops.

    The small power cap keeps the conic subproblems well scaled and quick;
    these tests probe mechanics, not operating-point trends.
    """
    return SystemConfig(num_elements=4, num_wds=2, tau2_grid=3,
                        p_max_w=10.0, cluster_x_m=6.0)


@pytest.fixture(scope="session")
def tiny_channels(tiny):
    return synth_channels(build_scenario(tiny, 0))


@pytest.fixture(scope="session")
def desk_channels(desk):
    return synth_channels(build_scenario(desk, 0))


def rand_complex(rng: np.random.Generator, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
