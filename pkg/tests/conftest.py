import numpy as np
import pytest

from tes_sched.config import load_config
from tes_sched.harness import bundled_config_path
from tes_sched.tes import TesModel, TesState, apply_cold_energy, uniform_state


@pytest.fixture(scope="session")
def model() -> TesModel:
    return TesModel()


@pytest.fixture(scope="session")
def case_cfg():
    return load_config(bundled_config_path())


def front_state(model: TesModel, charged: float, melted: float, T_int: float) -> TesState:
    """Charge an empty tank by ``charged`` and then melt ``melted`` (fractions of capacity)."""
    cap = model.latent_capacity
    x = uniform_state(0.0, T_int, model)
    x = apply_cold_energy(x, charged * cap, model.layers, model.pcm).state
    x = apply_cold_energy(x, -melted * cap, model.layers, model.pcm).state
    return TesState(x.h_layers, T_int)


def random_layers(rng: np.random.Generator, model: TesModel, spread: float = 3e4) -> np.ndarray:
    """Layer enthalpies scattered across the latent band and both sensible sides."""
    pcm = model.pcm
    return rng.uniform(pcm.h_lat_minus - spread, pcm.h_lat_plus + spread, model.tank.n_lay)
