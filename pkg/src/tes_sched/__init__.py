"""Economic scheduling of a refrigeration cycle with PCM cold storage."""

from .config import RunConfig, load_config, parse_config
from .estimator import (EstimatedState, Measurement, estimate_transferred_energy,
                        initial_estimate, tustin_losses, update_state)
from .harness import (ProfileError, RunReport, ScenarioProfiles, StepRecord, emit_report,
                      load_profiles, parse_profiles, report_table, run_closed_loop)
from .milp import LinearProgram, MixedIntegerProgram, Solution, branch_and_bound, solve_lp
from .pnmpc import LinearPrediction, OutputTrajectory, free_response, jacobian, predict
from .scheduler import (InvariantError, ModeFlags, OperatingMode, Schedule, SchedulerConfig,
                        SchedulingInfeasible, classify_mode, solve_schedule,
                        step_receding_horizon)
from .tes import (KELVIN, ConfigurationError, LimitConfig, NumericalError, PcmProperties,
                  PowerLimits, TankGeometry, TesModel, TesState, apply_cold_energy,
                  charge_ratio, power_limits, simulate_step, uniform_state)

__version__ = "0.1.0"

__all__ = [
    "RunConfig", "load_config", "parse_config",
    "EstimatedState", "Measurement", "estimate_transferred_energy", "initial_estimate",
    "tustin_losses", "update_state",
    "ProfileError", "RunReport", "ScenarioProfiles", "StepRecord", "emit_report",
    "load_profiles", "parse_profiles", "report_table", "run_closed_loop",
    "LinearProgram", "MixedIntegerProgram", "Solution", "branch_and_bound", "solve_lp",
    "LinearPrediction", "OutputTrajectory", "free_response", "jacobian", "predict",
    "InvariantError", "ModeFlags", "OperatingMode", "Schedule", "SchedulerConfig",
    "SchedulingInfeasible", "classify_mode", "solve_schedule", "step_receding_horizon",
    "KELVIN", "ConfigurationError", "LimitConfig", "NumericalError", "PcmProperties",
    "PowerLimits", "TankGeometry", "TesModel", "TesState", "apply_cold_energy",
    "charge_ratio", "power_limits", "simulate_step", "uniform_state",
]
