"""Flat ``key = value`` run configuration."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from .scheduler import SchedulerConfig
from .tes import (KELVIN, ConfigurationError, IntermediateFluidProperties, LimitConfig,
                  PcmProperties, TankGeometry, TesModel)


@dataclass(frozen=True)
class RunConfig:
    model: TesModel = field(default_factory=TesModel)
    limits: LimitConfig = field(default_factory=LimitConfig)
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    gamma0: float = 0.1
    plant_n_sub: int = 60
    forecast: str = "hold"  # or "wrap"

    def __post_init__(self):
        if not 0 <= self.gamma0 <= 1:
            raise ConfigurationError("gamma0 must lie in [0, 1]")
        if self.forecast not in ("hold", "wrap"):
            raise ConfigurationError("forecast must be 'hold' or 'wrap'")
        if self.plant_n_sub < 1:
            raise ConfigurationError("plant_n_sub must be >= 1")

    def with_scheduler(self, **changes) -> "RunConfig":
        return replace(self, scheduler=replace(self.scheduler, **changes))


# config key -> (section, field, converter)
_KEYS = {
    "l_tank_m": ("tank", "L_tank", float),
    "d_tank_m": ("tank", "D_tank", float),
    "e_tank_m": ("tank", "e_tank", float),
    "n_pcm": ("tank", "n_pcm", int),
    "d_pcm_m": ("tank", "D_pcm", float),
    "e_pcm_m": ("tank", "e_pcm", float),
    "l_pcm_m": ("tank", "L_pcm", float),
    "kappa_coat": ("tank", "kappa_coat", float),
    "v_int_m3": ("tank", "V_int", float),
    "alpha_surr_w_m2k": ("tank", "alpha_surr", float),
    "n_lay": ("tank", "n_lay", int),
    "r_film_k_w": ("tank", "R_film", float),
    "cp_pcm": ("pcm", "cp_sensible", float),
    "h_lat_j_kg": ("pcm", "h_lat", float),
    "t_lat_c": ("pcm", "T_lat", lambda s: float(s) + KELVIN),
    "kappa_pcm": ("pcm", "kappa", float),
    "rho_pcm": ("pcm", "rho", float),
    "h_lat_minus_j_kg": ("pcm", "h_lat_minus", float),
    "cp_int": ("fluid", "cp", float),
    "rho_int": ("fluid", "rho", float),
    "q_e_min_w": ("limits", "q_e_min", float),
    "q_e_max_w": ("limits", "q_e_max", float),
    "dt_charge_k": ("limits", "dt_charge", float),
    "dt_discharge_k": ("limits", "dt_discharge", float),
    "min_fraction": ("limits", "min_fraction", float),
    "q_tes_cap_w": ("limits", "q_tes_cap", float),
    "q_tes_sec_cap_w": ("limits", "q_tes_sec_cap", float),
    "horizon": ("scheduler", "horizon", int),
    "dt_s": ("scheduler", "dt", float),
    "gamma_min": ("scheduler", "gamma_min", float),
    "gamma_max": ("scheduler", "gamma_max", float),
    "max_iterations": ("scheduler", "max_iterations", int),
    "limit_tol": ("scheduler", "limit_tol", float),
    "n_sub": ("scheduler", "n_sub", int),
    "eps_w": ("scheduler", "eps", float),
    "relinearize": ("scheduler", "relinearize", lambda s: _bool(s)),
    "node_limit": ("scheduler", "node_limit", int),
    "gamma0": ("run", "gamma0", float),
    "plant_n_sub": ("run", "plant_n_sub", int),
    "forecast": ("run", "forecast", str),
}


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    sections = {"tank": {}, "pcm": {}, "fluid": {}, "limits": {}, "scheduler": {}, "run": {}}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigurationError(f"{source}:{lineno}: unknown key {key!r}")
        section, name, conv = _KEYS[key]
        try:
            v = conv(value)
        except ValueError as exc:
            raise ConfigurationError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
        if isinstance(v, float) and math.isnan(v):
            raise ConfigurationError(f"{source}:{lineno}: {key} is NaN")
        sections[section][name] = v
    try:
        model = TesModel(PcmProperties(**sections["pcm"]), TankGeometry(**sections["tank"]),
                         IntermediateFluidProperties(**sections["fluid"]))
        return RunConfig(model, LimitConfig(**sections["limits"]),
                         SchedulerConfig(**sections["scheduler"]), **sections["run"])
    except ConfigurationError as exc:
        raise ConfigurationError(f"{source}: {exc}") from None


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))
