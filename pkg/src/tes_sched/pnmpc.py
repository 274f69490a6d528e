"""Linear prediction of the tank around a nominal input trajectory.

The prediction follows the practical nonlinear MPC idea: a free response
from the nonlinear model plus a Jacobian obtained by perturbing each future
input in turn.  Stacked vectors interleave the two channels per step:
inputs ``[q_tes(1), q_tes_sec(1), q_tes(2), ...]`` and outputs
``[dgamma(1), dT_int(1), dgamma(2), ...]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .tes import (NumericalError, TesModel, TesState, charge_ratio, sensible_shell_resistance,
                  simulate_step)


@dataclass(frozen=True)
class OutputTrajectory:
    d_gamma: np.ndarray
    d_T_int: np.ndarray
    gamma0: float
    T_int0: float

    @property
    def horizon(self) -> int:
        return len(self.d_gamma)

    @property
    def gamma(self) -> np.ndarray:
        return self.gamma0 + np.cumsum(self.d_gamma)

    @property
    def T_int(self) -> np.ndarray:
        return self.T_int0 + np.cumsum(self.d_T_int)

    def stacked(self) -> np.ndarray:
        return np.column_stack((self.d_gamma, self.d_T_int)).ravel()

    @classmethod
    def from_stacked(cls, y: np.ndarray, gamma0: float, T_int0: float) -> "OutputTrajectory":
        y = np.asarray(y, dtype=float).reshape(-1, 2)
        return cls(y[:, 0].copy(), y[:, 1].copy(), gamma0, T_int0)


@dataclass(frozen=True)
class LinearPrediction:
    y_free: OutputTrajectory
    G: np.ndarray
    x0: TesState
    u_ref: np.ndarray  # stacked inputs the prediction is centred on

    @property
    def horizon(self) -> int:
        return self.y_free.horizon


def as_stacked(u, horizon: int) -> np.ndarray:
    """Accept ``(PH, 2)`` or stacked ``(2 PH,)`` inputs, return the stacked form."""
    u = np.asarray(u, dtype=float)
    if u.shape == (horizon, 2):
        return u.ravel()
    if u.shape == (2 * horizon,):
        return u
    raise ValueError(f"input trajectory has shape {u.shape}, expected ({horizon}, 2)")


def _forecast(T_surr, horizon: int) -> np.ndarray:
    T = np.atleast_1d(np.asarray(T_surr, dtype=float))
    if T.size == 1:
        return np.full(horizon, T[0])
    if T.size < horizon:
        raise ValueError("ambient forecast shorter than the horizon")
    return T[:horizon]


def rollout(x0: TesState, u, T_surr, dt: float, model: TesModel, n_sub: int,
            start: int = 0, states: Optional[list] = None) -> list:
    """Simulate from step ``start`` (state ``x0``) to the end of the horizon.

    Returns the list of states after each simulated step.
    """
    u = np.asarray(u, dtype=float).reshape(-1, 2)
    horizon = len(u)
    T = _forecast(T_surr, horizon)
    out = [] if states is None else states
    x = x0
    for k in range(start, horizon):
        x = simulate_step(x, u[k, 0], u[k, 1], T[k], dt, n_sub, model)
        out.append(x)
    return out


def _outputs(x_prev: TesState, states: Sequence[TesState], model: TesModel) -> np.ndarray:
    lay, pcm = model.layers, model.pcm
    g_prev = charge_ratio(x_prev, lay, pcm)
    T_prev = x_prev.T_int
    y = np.empty(2 * len(states))
    for k, x in enumerate(states):
        g = charge_ratio(x, lay, pcm)
        y[2 * k] = g - g_prev
        y[2 * k + 1] = x.T_int - T_prev
        g_prev, T_prev = g, x.T_int
    return y


def free_response(x0: TesState, T_surr, horizon: int, dt: float, model: TesModel,
                  n_sub: int = 60, u_ref=None) -> OutputTrajectory:
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    u = np.zeros(2 * horizon) if u_ref is None else as_stacked(u_ref, horizon)
    states = rollout(x0, u, T_surr, dt, model, n_sub)
    y = _outputs(x0, states, model)
    return OutputTrajectory.from_stacked(y, charge_ratio(x0, model.layers, model.pcm), x0.T_int)


def default_eps(model: TesModel, limits) -> float:
    """1% of the full-latency charging limit (after the cycle cap)."""
    lay = model.layers
    r_edge = sensible_shell_resistance(lay.n_lay - 1, lay, model.tank, model.pcm)
    return 0.01 * min(limits.dt_charge / r_edge, limits.q_tes_cap)


def jacobian(x0: TesState, T_surr, horizon: int, dt: float, eps: float, model: TesModel,
             n_sub: int = 60, u_ref=None, executor=None) -> LinearPrediction:
    """Free response and forward-difference Jacobian around ``u_ref`` (default zero).

    Column ``c`` perturbs input ``c`` by ``eps``; the rollout restarts from the
    nominal state at the start of that input's step, so rows of earlier steps
    are exactly zero.  ``executor`` (anything with ``map``) may evaluate
    columns concurrently; results are assembled in column order.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    u0 = np.zeros(2 * horizon) if u_ref is None else as_stacked(u_ref, horizon).copy()
    T = _forecast(T_surr, horizon)
    nominal = rollout(x0, u0, T, dt, model, n_sub)
    path = [x0] + nominal
    y0 = _outputs(x0, nominal, model)

    def column(c: int) -> np.ndarray:
        k = c // 2
        u = u0.copy()
        u[c] += eps
        states = rollout(path[k], u, T, dt, model, n_sub, start=k)
        y = y0.copy()
        y[2 * k:] = _outputs(path[k], states, model)
        col = (y - y0) / eps
        if not np.all(np.isfinite(col)):
            raise NumericalError(f"non-finite Jacobian column for input index {c}")
        return col

    cols = list((executor.map if executor is not None else map)(column, range(2 * horizon)))
    G = np.column_stack(cols)
    y_free = OutputTrajectory.from_stacked(y0, charge_ratio(x0, model.layers, model.pcm), x0.T_int)
    return LinearPrediction(y_free, G, x0, u0)


def predict(lp: LinearPrediction, u) -> OutputTrajectory:
    u = as_stacked(u, lp.horizon)
    if lp.G.shape != (u.size, u.size):
        raise ValueError("input dimension does not match the prediction")
    y = lp.y_free.stacked() + lp.G @ (u - lp.u_ref)
    return OutputTrajectory.from_stacked(y, lp.y_free.gamma0, lp.y_free.T_int0)


def nonlinear_outputs(x0: TesState, u, T_surr, dt: float, model: TesModel,
                      n_sub: int = 60) -> OutputTrajectory:
    """Exact rollout of the nonlinear model, same shape as :func:`predict`."""
    u = np.asarray(u, dtype=float).reshape(-1, 2)
    states = rollout(x0, u, T_surr, dt, model, n_sub)
    y = _outputs(x0, states, model)
    return OutputTrajectory.from_stacked(y, charge_ratio(x0, model.layers, model.pcm), x0.T_int)


def is_block_causal(G: np.ndarray) -> bool:
    n = G.shape[0] // 2
    return all(not np.any(G[2 * k:2 * k + 2, 2 * (k + 1):]) for k in range(n))


__all__ = [
    "OutputTrajectory", "LinearPrediction", "as_stacked", "rollout", "free_response",
    "jacobian", "predict", "nonlinear_outputs", "default_eps", "is_block_causal",
]

