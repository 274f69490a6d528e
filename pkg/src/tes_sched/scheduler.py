"""Mixed-integer scheduling of the evaporator and TES powers over a horizon.

Decision vector, per step ``k``: ``[q_tes, q_tes_sec, d_tes, d_tes_sec]``
stacked over the horizon, followed by the ``PH`` evaporator activation
binaries ``d_e_sec``.  The evaporator power itself is eliminated through the
demand balance ``q_e_sec = demand - q_tes_sec``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .milp import INFEASIBLE, LinearProgram, MixedIntegerProgram, branch_and_bound
from .pnmpc import (LinearPrediction, OutputTrajectory, default_eps, jacobian,
                    nonlinear_outputs, predict)
from .tes import (ConfigurationError, LimitConfig, PowerLimits, TesModel, TesState,
                  apply_cold_energy, power_limits)

JOULE_PER_KWH = 3.6e6


class InvariantError(ValueError):
    """Activation flags outside the admissible operating modes."""


class SchedulingInfeasible(RuntimeError):
    def __init__(self, step: int, family: str):
        super().__init__(f"scheduling problem infeasible at horizon step {step} ({family})")
        self.step = step
        self.family = family


class OperatingMode(enum.IntEnum):
    MODE1 = 1  # evaporator only
    MODE2 = 2  # evaporator + TES charging
    MODE3 = 3  # evaporator + TES discharging
    MODE4 = 4  # TES discharging only


class ModeFlags(NamedTuple):
    d_e_sec: int
    d_tes: int
    d_tes_sec: int


_MODES = {
    (1, 0, 0): OperatingMode.MODE1,
    (1, 1, 0): OperatingMode.MODE2,
    (1, 0, 1): OperatingMode.MODE3,
    (0, 0, 1): OperatingMode.MODE4,
}


def classify_mode(flags: ModeFlags) -> OperatingMode:
    key = tuple(int(f) for f in flags)
    if not (key[0] or key[2]):
        raise InvariantError(f"flags {key}: no power serves the demand")
    if key[1] and key[2]:
        raise InvariantError(f"flags {key}: simultaneous charge and discharge")
    return _MODES[key]


def derive_evaporator_power(demand: float, q_tes_sec: float) -> float:
    return demand - q_tes_sec


@dataclass(frozen=True)
class PartialDecision:
    q_tes_ref: float
    q_tes_sec_ref: float
    d_tes: int
    d_tes_sec: int


@dataclass(frozen=True)
class SchedulerConfig:
    horizon: int = 12
    dt: float = 3600.0
    gamma_min: float = 0.05
    gamma_max: float = 0.95
    max_iterations: int = 10
    limit_tol: float = 0.01  # fraction of the largest power limit
    n_sub: int = 60
    eps: Optional[float] = None  # W, Jacobian perturbation
    relinearize: bool = True
    tol: float = 1e-7
    node_limit: int = 50000

    def __post_init__(self):
        if not (0 < self.gamma_min < self.gamma_max < 1):
            raise ConfigurationError("need 0 < gamma_min < gamma_max < 1")
        if self.horizon < 1 or self.max_iterations < 1:
            raise ConfigurationError("horizon and max_iterations must be >= 1")
        if self.dt <= 0:
            raise ConfigurationError("dt must be positive")


@dataclass
class Schedule:
    decisions: list
    q_e_sec: np.ndarray
    d_e_sec: np.ndarray
    gamma: np.ndarray  # predicted post-step charge ratio
    T_int: np.ndarray  # predicted post-step fluid temperature, K
    modes: list
    objective: float  # EUR over the horizon
    demand: np.ndarray
    prices: np.ndarray
    prediction: LinearPrediction
    limits: list
    diagnostics: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return len(self.decisions)

    @property
    def inputs(self) -> np.ndarray:
        """Stacked ``[q_tes(1), q_tes_sec(1), ...]``."""
        return np.array([[d.q_tes_ref, d.q_tes_sec_ref] for d in self.decisions]).ravel()


class FirstStep(NamedTuple):
    q_e_sec: float
    q_tes: float
    q_tes_sec: float
    mode: OperatingMode
    flags: ModeFlags


def energy_weights(prices, dt: float) -> np.ndarray:
    """EUR/kWh prices to EUR per W held over one step."""
    return np.asarray(prices, dtype=float) * dt / JOULE_PER_KWH


def q_index(k: int) -> int:
    return 4 * k


def qs_index(k: int) -> int:
    return 4 * k + 1


def dt_index(k: int) -> int:
    return 4 * k + 2


def ds_index(k: int) -> int:
    return 4 * k + 3


def de_index(k: int, horizon: int) -> int:
    return 4 * horizon + k


def _window(values, horizon: int, what: str) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.size < horizon:
        raise ConfigurationError(f"{what} forecast covers {v.size} steps, horizon is {horizon}")
    return v[:horizon]


def build_problem(x_est: TesState, demand, prices, lp: LinearPrediction, limits_per_step,
                  cfg: SchedulerConfig, gamma_band: bool = True,
                  trust: Optional[tuple] = None) -> MixedIntegerProgram:
    """Encode demand balance, indicator limits, charge-ratio band and mode logic.

    ``trust = (u_center, radius)`` boxes the stacked TES powers around an
    earlier iterate.
    """
    PH = lp.horizon
    if len(limits_per_step) < PH:
        raise ConfigurationError("power limits do not cover the horizon")
    demand = _window(demand, PH, "demand")
    w = energy_weights(_window(prices, PH, "price"), cfg.dt)
    n = 5 * PH
    names = []
    for k in range(PH):
        names += [f"q_tes_{k}", f"q_tes_sec_{k}", f"d_tes_{k}", f"d_tes_sec_{k}"]
    names += [f"d_e_sec_{k}" for k in range(PH)]

    c = np.zeros(n)
    for k in range(PH):
        c[q_index(k)] = w[k]
        c[qs_index(k)] = -w[k]  # w_e_sec * (demand - q_tes_sec); w_tes_sec = 0
    offset = float(w @ demand)
    scale = float(np.max(np.abs(c))) or 1.0
    # rounding keeps the normalised costs identical under a uniform price factor
    c = np.round(c / scale, 12)

    lower = np.zeros(n)
    upper = np.ones(n)
    rows, rlo, rhi = [], [], []

    def row(coefs: dict, lo: float, hi: float):
        r = np.zeros(n)
        for j, a in coefs.items():
            r[j] = a
        rows.append(r), rlo.append(lo), rhi.append(hi)

    for k in range(PH):
        lim: PowerLimits = limits_per_step[k]
        D = demand[k]
        q, qs, dtes, dsec, de = q_index(k), qs_index(k), dt_index(k), ds_index(k), de_index(k, PH)
        upper[q] = lim.q_tes_max
        upper[qs] = max(min(lim.q_tes_sec_max, D), 0.0)
        # evaporator power D - q_tes_sec within [d_e q_e_min, d_e q_e_max]
        row({qs: 1.0, de: lim.q_e_max}, D, np.inf)
        row({qs: 1.0, de: lim.q_e_min}, -np.inf, D)
        row({q: 1.0, dtes: -lim.q_tes_max}, -np.inf, 0.0)
        row({q: 1.0, dtes: -lim.q_tes_min}, 0.0, np.inf)
        row({qs: 1.0, dsec: -lim.q_tes_sec_max}, -np.inf, 0.0)
        row({qs: 1.0, dsec: -lim.q_tes_sec_min}, 0.0, np.inf)
        if trust is not None:
            center, radius = trust
            for j, uc in ((q, center[2 * k]), (qs, center[2 * k + 1])):
                upper[j] = min(upper[j], uc + radius)
                lower[j] = min(max(0.0, uc - radius), upper[j])

    if gamma_band:
        G_gamma = np.cumsum(lp.G[0::2, :], axis=0)
        base = lp.y_free.gamma0 + np.cumsum(lp.y_free.d_gamma) - G_gamma @ lp.u_ref
        for k in range(PH):
            coefs = {}
            for i in range(2 * PH):
                if G_gamma[k, i] != 0.0:
                    coefs[4 * (i // 2) + i % 2] = G_gamma[k, i]
            row(coefs, cfg.gamma_min - base[k], cfg.gamma_max - base[k])

    A = np.array(rows)
    binaries = [j for k in range(PH) for j in (dt_index(k), ds_index(k))]
    binaries += [de_index(k, PH) for k in range(PH)]
    at_least_one = [(de_index(k, PH), ds_index(k)) for k in range(PH)]
    at_most_one = [(dt_index(k), ds_index(k)) for k in range(PH)]
    return MixedIntegerProgram(LinearProgram(c, A, rlo, rhi, lower, upper),
                               sorted(binaries), at_least_one, at_most_one, names,
                               objective_scale=scale, objective_offset=offset)


def evaluate_limits(x0: TesState, lp: LinearPrediction, u, model: TesModel,
                    limit_cfg: LimitConfig) -> list:
    """Per-step power limits along the predicted enthalpy distribution.

    Cold energy per step comes from the predicted charge-ratio increments;
    the maximum uses the boundary at the end of the step, the minimum the
    boundary at its start, or the cylinder edge after a charge/discharge
    transition (detected from the predicted fluid temperature).
    """
    pred = predict(lp, u)
    lay, pcm, tank = model.layers, model.pcm, model.tank
    cap = model.latent_capacity
    states = [x0]
    x = x0
    for k in range(lp.horizon):
        x = apply_cold_energy(x, pred.d_gamma[k] * cap, lay, pcm).state
        x = TesState(x.h_layers, float(pred.T_int[k]))
        states.append(x)
    charging_prev = x0.T_int < pcm.T_lat
    out = []
    for k in range(lp.horizon):
        charging = bool(pred.T_int[k] < pcm.T_lat)
        transition = charging != charging_prev
        now = power_limits(states[k + 1], charging, lay, tank, pcm, limit_cfg)
        start = power_limits(states[k], charging, lay, tank, pcm, limit_cfg, reset=transition)
        out.append(PowerLimits(
            q_e_min=now.q_e_min,
            q_e_max=now.q_e_max,
            q_tes_min=min(start.q_tes_min, now.q_tes_max),
            q_tes_max=now.q_tes_max,
            q_tes_sec_min=min(start.q_tes_sec_min, now.q_tes_sec_max),
            q_tes_sec_max=now.q_tes_sec_max,
        ))
        charging_prev = charging
    return out


def _limits_array(limits) -> np.ndarray:
    return np.array([[l.q_tes_min, l.q_tes_max, l.q_tes_sec_min, l.q_tes_sec_max] for l in limits])


def _truncate(lp: LinearPrediction, k: int) -> LinearPrediction:
    y = lp.y_free
    free = OutputTrajectory(y.d_gamma[:k], y.d_T_int[:k], y.gamma0, y.T_int0)
    return LinearPrediction(free, lp.G[:2 * k, :2 * k], lp.x0, lp.u_ref[:2 * k])


def diagnose_infeasibility(x_est, demand, prices, lp, limits, cfg: SchedulerConfig):
    """First horizon step (0-based) whose prefix problem is infeasible, and the culprit family."""
    for k in range(1, lp.horizon + 1):
        sub = _truncate(lp, k)
        sol = branch_and_bound(build_problem(x_est, demand, prices, sub, limits, cfg),
                               cfg.tol, node_limit=cfg.node_limit)
        if sol.status == INFEASIBLE:
            relaxed = branch_and_bound(
                build_problem(x_est, demand, prices, sub, limits, cfg, gamma_band=False),
                cfg.tol, node_limit=cfg.node_limit)
            family = "charge_ratio_band" if relaxed.ok else "power_feasibility"
            return k - 1, family
    return lp.horizon - 1, "unknown"


def _decode(sol, mip, lp, limits, demand, prices, PH) -> Schedule:
    x = sol.x
    decisions, modes = [], []
    q_e = np.empty(PH)
    d_e = np.empty(PH, dtype=int)
    for k in range(PH):
        dtes = int(round(x[dt_index(k)]))
        dsec = int(round(x[ds_index(k)]))
        de = int(round(x[de_index(k, PH)]))
        q = float(np.clip(x[q_index(k)], 0.0, None)) if dtes else 0.0
        qs = float(np.clip(x[qs_index(k)], 0.0, demand[k])) if dsec else 0.0
        decisions.append(PartialDecision(q, qs, dtes, dsec))
        q_e[k] = derive_evaporator_power(demand[k], qs)
        d_e[k] = de
        modes.append(classify_mode(ModeFlags(de, dtes, dsec)))
    u = np.array([[d.q_tes_ref, d.q_tes_sec_ref] for d in decisions]).ravel()
    pred = predict(lp, u)
    objective = mip.objective_scale * sol.objective + mip.objective_offset
    return Schedule(decisions, q_e, d_e, pred.gamma, pred.T_int, modes, float(objective),
                    np.array(demand[:PH]), np.array(prices[:PH]), lp, list(limits))


def solve_schedule(x_est: TesState, demand, prices, T_surr, cfg: SchedulerConfig,
                   model: TesModel, limit_cfg: LimitConfig, executor=None,
                   u_init=None) -> Schedule:
    """Successive linearisation: solve with fixed limits, re-evaluate, repeat.

    The first prediction is centred on ``u_init`` (stacked inputs, typically
    the shifted previous plan) when given, else on zero inputs; if that first
    problem is infeasible the zero-centred one is tried before giving up.
    """
    PH = cfg.horizon
    demand = _window(demand, PH, "demand")
    prices = _window(prices, PH, "price")
    eps = cfg.eps if cfg.eps is not None else default_eps(model, limit_cfg)
    centres = [np.zeros(2 * PH)]
    if u_init is not None and cfg.relinearize:
        u0 = np.asarray(u_init, dtype=float).ravel()
        if u0.shape != (2 * PH,):
            raise ValueError(f"u_init must hold {2 * PH} values")
        if np.any(u0 != 0.0):
            centres.insert(0, u0)
    failure = None
    for u_inc in centres:
        try:
            return _successive(x_est, demand, prices, T_surr, cfg, model, limit_cfg, executor,
                               eps, u_inc)
        except SchedulingInfeasible as exc:
            failure = exc
    raise failure


def _successive(x_est, demand, prices, T_surr, cfg, model, limit_cfg, executor, eps, u_inc):
    PH = cfg.horizon
    lp = jacobian(x_est, T_surr, PH, cfg.dt, eps, model, cfg.n_sub,
                  u_ref=u_inc if np.any(u_inc) else None, executor=executor)
    limits = evaluate_limits(x_est, lp, u_inc, model, limit_cfg)
    best: Optional[Schedule] = None
    best_key = None
    nodes = lp_iters = 0
    converged = False
    trust = None
    cap = max(max(l.q_tes_max, l.q_tes_sec_max) for l in limits)
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        mip = build_problem(x_est, demand, prices, lp, limits, cfg, trust=trust)
        sol = branch_and_bound(mip, cfg.tol, node_limit=cfg.node_limit, executor=executor)
        nodes += sol.nodes
        lp_iters += sol.iterations
        if not sol.ok:
            if best is not None:
                break
            step, family = diagnose_infeasibility(x_est, demand, prices, lp, limits, cfg)
            raise SchedulingInfeasible(step, family)
        sched = _decode(sol, mip, lp, limits, demand, prices, PH)
        u_new = sched.inputs
        nl = nonlinear_outputs(x_est, u_new.reshape(-1, 2), T_surr, cfg.dt, model, cfg.n_sub)
        violation = float(np.max(np.maximum(cfg.gamma_min - nl.gamma, nl.gamma - cfg.gamma_max),
                                 initial=0.0))
        sched.diagnostics["gamma_mismatch"] = float(np.max(np.abs(nl.gamma - sched.gamma)))
        sched.diagnostics["band_violation"] = violation
        key = (round(violation, 6), round(sched.objective / abs(mip.objective_offset or 1.0), 9))
        if best is None or key < best_key:
            best, best_key = sched, key
        lp_new = (jacobian(x_est, T_surr, PH, cfg.dt, eps, model, cfg.n_sub, u_ref=u_new,
                           executor=executor) if cfg.relinearize else lp)
        limits_new = evaluate_limits(x_est, lp_new, u_new, model, limit_cfg)
        old, new = _limits_array(limits), _limits_array(limits_new)
        tol = cfg.limit_tol * max(cap, 1.0)
        same_limits = float(np.max(np.abs(new - old))) <= tol
        same_point = not cfg.relinearize or float(np.max(np.abs(u_new - u_inc))) <= tol
        if same_limits and same_point:
            converged = True
            best = sched
            break
        lp, limits, u_inc = lp_new, limits_new, u_new
        if cfg.relinearize:
            # halve a trust region around the incumbent so the iterates settle
            trust = (u_new, cap * 0.5 ** it)
    best.diagnostics.update(
        iterations=it,
        nodes=nodes,
        lp_iterations=lp_iters,
        converged=converged,
        eps=eps,
    )
    return best


def step_receding_horizon(schedule: Schedule) -> FirstStep:
    if not schedule.decisions:
        raise ValueError("empty schedule")
    d = schedule.decisions[0]
    flags = ModeFlags(int(schedule.d_e_sec[0]), d.d_tes, d.d_tes_sec)
    return FirstStep(float(schedule.q_e_sec[0]), d.q_tes_ref, d.q_tes_sec_ref,
                     classify_mode(flags), flags)
