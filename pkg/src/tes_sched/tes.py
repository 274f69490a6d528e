"""Layered enthalpy model of the PCM thermal energy storage tank.

Every PCM cylinder is split into ``n_lay`` concentric layers of equal mass.
Layer 0 is the innermost one, layer ``n_lay - 1`` touches the coating.  The
dynamic state is the vector of layer specific enthalpies plus the
temperature of the (well mixed) intermediate fluid.

Sign convention used throughout: ``dU_cold > 0`` means cold energy flows
into the PCM (charging), which lowers the layer enthalpies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import NamedTuple, Optional

import numpy as np

KELVIN = 273.15


class ConfigurationError(ValueError):
    """Invalid tank, PCM or limit configuration."""


class NumericalError(ArithmeticError):
    """Non-finite values produced by the model."""


@dataclass(frozen=True)
class PcmProperties:
    cp_sensible: float = 3690.0  # J/(kg K)
    h_lat: float = 222000.0  # J/kg
    T_lat: float = -29.0 + KELVIN  # K
    kappa: float = 0.64  # W/(m K)
    rho: float = 1420.0  # kg/m3
    h_lat_minus: float = 0.0  # J/kg
    # sensible bounds, as temperature distance from the band edges
    sensible_margin_k: float = 40.0

    def __post_init__(self):
        if not (self.h_lat > 0 and self.cp_sensible > 0 and self.rho > 0 and self.kappa > 0):
            raise ConfigurationError("PCM properties must be strictly positive")

    @property
    def h_lat_plus(self) -> float:
        return self.h_lat_minus + self.h_lat

    @property
    def h_sens_min(self) -> float:
        return self.h_lat_minus - self.cp_sensible * self.sensible_margin_k

    @property
    def h_sens_max(self) -> float:
        return self.h_lat_plus + self.cp_sensible * self.sensible_margin_k

    def temperature(self, h: float) -> float:
        """PCM temperature for a specific enthalpy (constant inside the band)."""
        if h < self.h_lat_minus:
            return self.T_lat + (h - self.h_lat_minus) / self.cp_sensible
        if h > self.h_lat_plus:
            return self.T_lat + (h - self.h_lat_plus) / self.cp_sensible
        return self.T_lat


@dataclass(frozen=True)
class TankGeometry:
    L_tank: float = 1.4
    D_tank: float = 0.4
    e_tank: float = 0.005
    n_pcm: int = 17
    D_pcm: float = 0.0445
    e_pcm: float = 0.001
    kappa_coat: float = 16.3
    V_int: float = 0.109
    alpha_surr: float = 0.1
    n_lay: int = 20
    L_pcm: Optional[float] = None  # defaults to L_tank
    R_film: float = 0.0  # K/W per cylinder

    def __post_init__(self):
        if self.L_pcm is None:
            object.__setattr__(self, "L_pcm", self.L_tank)
        if self.n_pcm < 1:
            raise ConfigurationError("n_pcm must be >= 1")
        if self.n_lay < 1:
            raise ConfigurationError("n_lay must be >= 1")
        if self.D_pcm - 2 * self.e_pcm <= 0:
            raise ConfigurationError("PCM inner radius must be positive (D_pcm - 2 e_pcm > 0)")
        if self.V_int <= 0:
            raise ConfigurationError("V_int must be positive")
        if self.alpha_surr < 0 or self.R_film < 0:
            raise ConfigurationError("alpha_surr and R_film must be non-negative")

    @property
    def pcm_radius(self) -> float:
        return 0.5 * (self.D_pcm - 2.0 * self.e_pcm)

    @property
    def tank_area(self) -> float:
        """Shell plus end caps, m2."""
        return math.pi * self.D_tank * self.L_tank + 2.0 * math.pi * (0.5 * self.D_tank) ** 2


@dataclass(frozen=True)
class IntermediateFluidProperties:
    cp: float = 3000.0  # J/(kg K)
    rho: float = 1090.0  # kg/m3

    def __post_init__(self):
        if self.cp <= 0 or self.rho <= 0:
            raise ConfigurationError("fluid cp and rho must be positive")


@dataclass(frozen=True)
class LayerGeometry:
    r_inner: np.ndarray
    r_outer: np.ndarray
    volume: np.ndarray
    mass: np.ndarray
    length: float

    @property
    def n_lay(self) -> int:
        return len(self.r_outer)

    @property
    def radius(self) -> float:
        return float(self.r_outer[-1])

    @property
    def m_layer(self) -> float:
        return float(self.mass[0])

    @property
    def m_pcm(self) -> float:
        return float(self.mass.sum())

    @property
    def r_floor(self) -> float:
        return 0.5 * float(self.r_outer[0])


@dataclass(frozen=True)
class TesState:
    h_layers: np.ndarray
    T_int: float

    def __post_init__(self):
        object.__setattr__(self, "h_layers", np.array(self.h_layers, dtype=float))

    @property
    def n_lay(self) -> int:
        return len(self.h_layers)


@dataclass(frozen=True)
class PowerLimits:
    q_e_min: float
    q_e_max: float
    q_tes_min: float
    q_tes_max: float
    q_tes_sec_min: float
    q_tes_sec_max: float


@dataclass(frozen=True)
class LimitConfig:
    """Driving temperature differences and fixed limits for the power bounds."""

    dt_charge: float = 10.0  # K
    dt_discharge: float = 10.0  # K
    q_e_min: float = 200.0  # W
    q_e_max: float = 2000.0  # W
    min_fraction: float = 0.05
    q_tes_cap: float = math.inf  # W, cycle-side charging cap
    q_tes_sec_cap: float = math.inf  # W, pump-side discharging cap

    def __post_init__(self):
        if not (0 <= self.q_e_min <= self.q_e_max):
            raise ConfigurationError("need 0 <= q_e_min <= q_e_max")
        if not (0 <= self.min_fraction <= 1):
            raise ConfigurationError("min_fraction must lie in [0, 1]")
        if self.dt_charge <= 0 or self.dt_discharge <= 0:
            raise ConfigurationError("driving temperature differences must be positive")


@dataclass(frozen=True)
class TesModel:
    """Everything needed to simulate the tank."""

    pcm: PcmProperties = field(default_factory=PcmProperties)
    tank: TankGeometry = field(default_factory=TankGeometry)
    fluid: IntermediateFluidProperties = field(default_factory=IntermediateFluidProperties)
    # constant total resistance (K/W) replacing the front-dependent one; linear surrogate
    resistance_override: Optional[float] = None

    @cached_property
    def layers(self) -> LayerGeometry:
        return layer_geometry(self.tank, self.pcm)

    @property
    def fluid_capacity(self) -> float:
        """Heat capacity of the intermediate fluid, J/K."""
        return self.fluid.cp * self.fluid.rho * self.tank.V_int

    @property
    def latent_capacity(self) -> float:
        """U_max - U_min of one cylinder, J."""
        return self.layers.m_pcm * self.pcm.h_lat

    def with_(self, **changes) -> "TesModel":
        return replace(self, **changes)


class LayerUpdate(NamedTuple):
    state: TesState
    residual: float

    @property
    def saturated(self) -> bool:
        return self.residual != 0.0


def layer_geometry(tank: TankGeometry, pcm: PcmProperties) -> LayerGeometry:
    R = tank.pcm_radius
    if R <= 0:
        raise ConfigurationError("non-positive PCM radius")
    n = tank.n_lay
    r_outer = R * np.sqrt(np.arange(1, n + 1) / n)
    r_outer[-1] = R
    r_inner = np.concatenate(([0.0], r_outer[:-1]))
    # equal areas by construction; use the exact share to keep masses identical
    volume = np.full(n, math.pi * R * R * tank.L_pcm / n)
    return LayerGeometry(r_inner, r_outer, volume, volume * pcm.rho, tank.L_pcm)


def uniform_state(gamma: float, T_int: float, model: TesModel) -> TesState:
    """Every layer at the same enthalpy giving charge ratio ``gamma``."""
    h = model.pcm.h_lat_plus - gamma * model.pcm.h_lat
    return TesState(np.full(model.tank.n_lay, h), T_int)


def charge_ratio(state: TesState, layers: LayerGeometry, pcm: PcmProperties) -> float:
    u_max = layers.m_pcm * pcm.h_lat_plus
    u_min = layers.m_pcm * pcm.h_lat_minus
    u = layers.m_layer * float(np.sum(state.h_layers))
    return (u_max - u) / (u_max - u_min)


def find_outermost_latent_layer(state: TesState, pcm: PcmProperties) -> Optional[int]:
    h = state.h_layers
    idx = np.flatnonzero((h > pcm.h_lat_minus) & (h < pcm.h_lat_plus))
    return int(idx[-1]) if idx.size else None


def _consume(h: list, dU: float, m: float, lo: float, hi: float, smin: float, smax: float) -> float:
    """Push ``dU`` (per cylinder, J) into the layer list ``h`` in place.

    Returns the part that could not be stored within the sensible bounds.
    """
    if dU > 0.0:
        for j in range(len(h) - 1, -1, -1):
            hj = h[j]
            if hj <= lo:
                continue
            cap = (hj - lo) * m
            if dU < cap:
                h[j] = hj - dU / m
                return 0.0
            h[j] = lo
            dU -= cap
            if dU == 0.0:
                return 0.0
        return _spread(h, dU, m, smin)
    if dU < 0.0:
        for j in range(len(h) - 1, -1, -1):
            hj = h[j]
            if hj >= hi:
                continue
            cap = (hi - hj) * m
            if -dU < cap:
                h[j] = hj - dU / m
                return 0.0
            h[j] = hi
            dU += cap
            if dU == 0.0:
                return 0.0
        return _spread(h, dU, m, smax)
    return 0.0


def _spread(h: list, dU: float, m: float, bound: float) -> float:
    # uniform sensible change, water-filling against the sensible bound
    active = list(range(len(h)))
    while active and dU != 0.0:
        d = dU / (len(active) * m)
        hitting = [j for j in active if (h[j] - d < bound if dU > 0 else h[j] - d > bound)]
        if not hitting:
            for j in active:
                h[j] -= d
            return 0.0
        for j in hitting:
            dU -= (h[j] - bound) * m
            h[j] = bound
        active = [j for j in active if j not in hitting]
    return dU


def apply_cold_energy(state: TesState, dU_cold: float, layers: LayerGeometry,
                      pcm: PcmProperties) -> LayerUpdate:
    """Distribute cold energy (J per cylinder) over the layers.

    The outermost layer that is not yet saturated in the direction of the
    process takes the energy first; whatever exceeds its latent capacity
    moves on to the next inner layer.  Once no layer has latent capacity
    left, the rest changes all layers' sensible enthalpy uniformly.
    """
    h = state.h_layers.tolist()
    residual = _consume(h, float(dU_cold), layers.m_layer, pcm.h_lat_minus, pcm.h_lat_plus,
                        pcm.h_sens_min, pcm.h_sens_max)
    return LayerUpdate(TesState(np.array(h), state.T_int), residual)


def shell_resistance_at(r_front: float, layers: LayerGeometry, tank: TankGeometry,
                        pcm: PcmProperties) -> float:
    """Total resistance (K/W, all cylinders) with the sensible shell starting at ``r_front``."""
    R = layers.radius
    r = max(min(r_front, R), layers.r_floor)
    two_pi_L = 2.0 * math.pi * layers.length
    pcm_term = math.log(R / r) / (two_pi_L * pcm.kappa)
    coat = math.log(0.5 * tank.D_pcm / R) / (two_pi_L * tank.kappa_coat)
    return (pcm_term + coat + tank.R_film) / tank.n_pcm


def sensible_shell_resistance(j_boundary: Optional[int], layers: LayerGeometry,
                              tank: TankGeometry, pcm: PcmProperties) -> float:
    if j_boundary is None:
        r = layers.r_floor
    else:
        r = float(layers.r_outer[j_boundary])
    return shell_resistance_at(r, layers, tank, pcm)


def power_limits(state: TesState, charging: bool, layers: LayerGeometry, tank: TankGeometry,
                 pcm: PcmProperties, cfg: LimitConfig, reset: bool = False) -> PowerLimits:
    """Achievable power bounds for the current enthalpy distribution.

    The power of the direction opposite to ``charging`` starts a new process,
    so it is evaluated with the boundary reset to the cylinder edge; ``reset``
    forces that for both directions.
    """
    edge = layers.n_lay - 1
    j0 = edge if reset else find_outermost_latent_layer(state, pcm)
    r_state = sensible_shell_resistance(j0, layers, tank, pcm)
    r_edge = sensible_shell_resistance(edge, layers, tank, pcm)
    r_charge, r_discharge = (r_state, r_edge) if charging else (r_edge, r_state)
    q_tes_max = min(cfg.dt_charge / r_charge, cfg.q_tes_cap)
    q_sec_max = min(cfg.dt_discharge / r_discharge, cfg.q_tes_sec_cap)
    return PowerLimits(
        q_e_min=cfg.q_e_min,
        q_e_max=cfg.q_e_max,
        q_tes_min=cfg.min_fraction * q_tes_max,
        q_tes_max=q_tes_max,
        q_tes_sec_min=cfg.min_fraction * q_sec_max,
        q_tes_sec_max=q_sec_max,
    )


def thermal_losses(T_int: float, T_surr: float, tank: TankGeometry) -> float:
    """Heat gained by the intermediate fluid from the surroundings, W."""
    return tank.alpha_surr * tank.tank_area * (T_surr - T_int)


def total_energy(state: TesState, model: TesModel) -> float:
    """Fluid sensible energy plus PCM enthalpy of all cylinders, J (T in K)."""
    lay = model.layers
    return (model.fluid_capacity * state.T_int
            + lay.m_layer * float(np.sum(state.h_layers)) * model.tank.n_pcm)


def _front(h: list, charging: bool, lay: LayerGeometry, pcm: PcmProperties):
    """PCM-side temperature and sensible-shell inner radius for one direction."""
    lo, hi = pcm.h_lat_minus, pcm.h_lat_plus
    n = len(h)
    if charging:
        a = next((j for j in range(n - 1, -1, -1) if h[j] > lo), None)
    else:
        a = next((j for j in range(n - 1, -1, -1) if h[j] < hi), None)
    if a is None:
        return pcm.temperature(sum(h) / n), lay.r_floor
    ha = h[a]
    if lo <= ha <= hi:
        f = (hi - ha) / pcm.h_lat if charging else (ha - lo) / pcm.h_lat
        T_pcm = pcm.T_lat
    else:
        f = 0.0
        T_pcm = pcm.temperature(ha)
    r_out = lay.r_outer[a]
    r_in = lay.r_inner[a]
    r_front = math.sqrt(r_out * r_out - f * (r_out * r_out - r_in * r_in))
    return T_pcm, max(r_front, lay.r_floor)


class StepInfo(NamedTuple):
    state: TesState
    loss_energy: float  # J gained from the surroundings over the step
    transferred: float  # J of cold moved into the PCM (all cylinders)
    residual: float  # J per cylinder that did not fit the sensible bounds


def simulate_step_info(state: TesState, q_tes: float, q_tes_sec: float, T_surr: float,
                       dt: float, n_sub: int, model: TesModel) -> StepInfo:
    """Advance the tank by ``dt`` seconds with constant powers.

    Each substep solves the fluid balance implicitly in T_int with the
    PCM-side temperature and shell resistance frozen at the substep start,
    then moves the exchanged energy into the layers.
    """
    if q_tes < 0 or q_tes_sec < 0:
        raise ValueError("powers must be non-negative")
    if dt <= 0 or n_sub < 1:
        raise ValueError("need dt > 0 and n_sub >= 1")
    pcm, tank, lay = model.pcm, model.tank, model.layers
    lo, hi, smin, smax = pcm.h_lat_minus, pcm.h_lat_plus, pcm.h_sens_min, pcm.h_sens_max
    m = lay.m_layer
    C = model.fluid_capacity
    aA = tank.alpha_surr * tank.tank_area
    n_pcm = tank.n_pcm
    dts = dt / n_sub
    h = state.h_layers.tolist()
    T = float(state.T_int)
    losses = transferred = residual = 0.0
    r_fixed = model.resistance_override
    for _ in range(n_sub):
        charging = T < pcm.T_lat
        T_pcm, r_front = _front(h, charging, lay, pcm)
        if r_fixed is None:
            g = 1.0 / shell_resistance_at(r_front, lay, tank, pcm)
            T_new = (C * T + dts * (q_tes_sec - q_tes + aA * T_surr + g * T_pcm)) / (C + dts * (aA + g))
            # corrector: average the conductance over the predicted front motion
            trial = h.copy()
            _consume(trial, -g * (T_new - T_pcm) * dts / n_pcm, m, lo, hi, smin, smax)
            T_end, r_end = _front(trial, charging, lay, pcm)
            g = 0.5 * (g + 1.0 / shell_resistance_at(r_end, lay, tank, pcm))
            T_pcm = 0.5 * (T_pcm + T_end)
        else:
            g = 1.0 / r_fixed
        T_new = (C * T + dts * (q_tes_sec - q_tes + aA * T_surr + g * T_pcm)) / (C + dts * (aA + g))
        q_int = g * (T_new - T_pcm)
        losses += aA * (T_surr - T_new) * dts
        dU = -q_int * dts
        transferred += dU
        residual += _consume(h, dU / n_pcm, m, lo, hi, smin, smax)
        T = T_new
    if not (math.isfinite(T) and all(math.isfinite(x) for x in h)):
        raise NumericalError("non-finite tank state after simulation step")
    return StepInfo(TesState(np.array(h), T), losses, transferred, residual)


def simulate_step(state: TesState, q_tes: float, q_tes_sec: float, T_surr: float, dt: float,
                  n_sub: int, model: TesModel) -> TesState:
    return simulate_step_info(state, q_tes, q_tes_sec, T_surr, dt, n_sub, model).state
