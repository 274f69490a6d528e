"""Reconstruction of the layer enthalpies from the measured fluid temperature."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .tes import TankGeometry, TesModel, TesState, apply_cold_energy, charge_ratio, uniform_state


@dataclass(frozen=True)
class Measurement:
    T_int: float  # K
    T_surr: float  # K
    timestamp: float = 0.0  # s

    def __post_init__(self):
        if not (math.isfinite(self.T_int) and math.isfinite(self.T_surr)):
            raise ValueError("measurement must be finite")


@dataclass(frozen=True)
class EstimatedState:
    state: TesState
    gamma: float
    dU_tes: float = 0.0  # J, last estimated transfer (all cylinders)
    residual: float = 0.0  # J per cylinder that did not fit the layers
    measurement: Measurement = None

    @property
    def saturated(self) -> bool:
        return self.residual != 0.0


def initial_estimate(gamma0: float, m: Measurement, model: TesModel) -> EstimatedState:
    """Uniform layers at charge ratio ``gamma0`` with the measured fluid temperature."""
    state = uniform_state(gamma0, m.T_int, model)
    return EstimatedState(state, charge_ratio(state, model.layers, model.pcm), measurement=m)


def tustin_losses(T_int_prev: float, T_int_now: float, T_surr: float, dt: float,
                  tank: TankGeometry) -> float:
    """Heat gained from the surroundings over ``dt``, trapezoidal in T_int."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return tank.alpha_surr * tank.tank_area * (T_surr - 0.5 * (T_int_prev + T_int_now)) * dt


def estimate_transferred_energy(m: Measurement, prev: Measurement, q_tes_prev: float,
                                q_tes_sec_prev: float, dt: float, model: TesModel) -> float:
    """Heat released by all PCM cylinders into the fluid over the last step, J.

    Positive while the PCM is being charged, so it maps directly to the
    layer update's cold energy once divided by the number of cylinders.
    """
    losses = tustin_losses(prev.T_int, m.T_int, prev.T_surr, dt, model.tank)
    return (model.fluid_capacity * (m.T_int - prev.T_int)
            + (q_tes_prev - q_tes_sec_prev) * dt - losses)


def update_state(prev: EstimatedState, dU_tes: float, m: Measurement,
                 model: TesModel) -> EstimatedState:
    """Move ``dU_tes`` into the layers and overwrite T_int with the measurement."""
    upd = apply_cold_energy(prev.state, dU_tes / model.tank.n_pcm, model.layers, model.pcm)
    state = TesState(upd.state.h_layers, m.T_int)
    return EstimatedState(state, charge_ratio(state, model.layers, model.pcm), dU_tes,
                          upd.residual, m)
