import numpy as np
import pytest

from sdgames.grids import StateGrid
from sdgames.model import make_spec
from sdgames.pollution import PollutionParams, build_spec
from sdgames.solver import build_tables


@pytest.fixture(scope="session")
def ou_spec():
    return make_spec(
        "ou_quadratic", {"kappa": 1.0, "sigma0": 1.0}, box=np.array([[-3.0, 3.0]])
    )


@pytest.fixture(scope="session")
def ou_grid(ou_spec):
    return StateGrid.from_box(ou_spec.box, 601)


@pytest.fixture(scope="session")
def ou_tables(ou_spec, ou_grid):
    return build_tables(ou_spec, ou_grid)


@pytest.fixture(scope="session")
def pollution_params():
    return PollutionParams(gamma=4.0, a=1.0, b=2.0, d=1.0, sigma0=0.5)


@pytest.fixture(scope="session")
def pollution_spec(pollution_params):
    return build_spec(pollution_params)


@pytest.fixture(scope="session")
def pollution_grid(pollution_spec):
    return StateGrid.from_box(pollution_spec.box, 1201)


@pytest.fixture(scope="session")
def pollution_tables(pollution_spec, pollution_grid):
    return build_tables(pollution_spec, pollution_grid)


@pytest.fixture(scope="session")
def uv_game_spec():
    # 2x2 matrix game without a pure saddle point: f = u*v on {-1,1}^2,
    # control-free dissipative drift
    return make_spec(
        "affine",
        {
            "state_dim": 1,
            "C": [[-1.0]],
            "sigma0": 0.3,
            "f_uv": 1.0,
            "u_values": [[-1.0], [1.0]],
            "v_values": [[-1.0], [1.0]],
        },
        name="uv_game",
        box=np.array([[-2.0, 2.0]]),
    )
