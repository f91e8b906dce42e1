import math

import numpy as np
import pytest
from loguru import logger

from cfn_lab.grid import FieldState, build_mesh


@pytest.fixture(autouse=True)
def quiet_logs():
    logger.remove()
    yield


@pytest.fixture
def periodic_mesh():
    return build_mesh(0.0, 2.0 * math.pi, 16)


@pytest.fixture
def sine_state(periodic_mesh):
    x = periodic_mesh.centers()[0]
    return FieldState(periodic_mesh, (np.sin(x) + 0.5)[None])


@pytest.fixture(scope="session")
def burgers_dataset():
    from cfn_lab.data_manager import generate_dataset

    return generate_dataset("burgers1d", n=16, dt=0.01, L=6, n_traj=3, seed=1, workers=1)


@pytest.fixture(scope="session")
def dam_break_dataset():
    from cfn_lab.data_manager import generate_dataset

    return generate_dataset("shallow_water", n=16, dt=0.005, L=4, n_traj=2, seed=2, workers=1)
