"""Closed-loop receding-horizon simulation and report output."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .config import RunConfig
from .estimator import (EstimatedState, Measurement, estimate_transferred_energy,
                        initial_estimate, update_state)
from .scheduler import JOULE_PER_KWH, solve_schedule, step_receding_horizon
from .tes import KELVIN, TesState, charge_ratio, simulate_step, uniform_state

COLUMNS = ("hour", "demand_w", "price_eur_kwh", "t_surr_c")


class ProfileError(ValueError):
    """Malformed scenario file."""


@dataclass(frozen=True)
class ScenarioProfiles:
    demand: np.ndarray  # W
    prices: np.ndarray  # EUR/kWh
    T_surr: np.ndarray  # K
    dt: float = 3600.0

    def __post_init__(self):
        for name in ("demand", "prices", "T_surr"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=float))
        if not (len(self.demand) == len(self.prices) == len(self.T_surr)):
            raise ProfileError("profile lengths differ")
        if np.any(self.demand <= 0):
            raise ProfileError("demand must be positive every step")
        if np.any(self.prices < 0):
            raise ProfileError("prices must be non-negative")

    @property
    def n_steps(self) -> int:
        return len(self.demand)

    def window(self, start: int, horizon: int, mode: str = "hold"):
        """Forecast slices of length ``horizon`` from ``start``."""
        idx = np.arange(start, start + horizon)
        idx = idx % self.n_steps if mode == "wrap" else np.minimum(idx, self.n_steps - 1)
        return self.demand[idx], self.prices[idx], self.T_surr[idx]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for k in range(self.n_steps):
            w.writerow([repr(k * self.dt / 3600.0), repr(float(self.demand[k])),
                        repr(float(self.prices[k])), repr(float(self.T_surr[k] - KELVIN))])
        return buf.getvalue()

    def save(self, path) -> None:
        Path(path).write_text(self.to_csv())


def parse_profiles(text: str, source: str = "<scenario>", dt: Optional[float] = None
                   ) -> ScenarioProfiles:
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise ProfileError(f"{source}: empty file") from None
    missing = [c for c in COLUMNS if c not in header]
    if missing:
        raise ProfileError(f"{source}:1: missing column(s) {', '.join(missing)}")
    col = {c: header.index(c) for c in COLUMNS}
    hours, demand, prices, temps = [], [], [], []
    for row in reader:
        lineno = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ProfileError(f"{source}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            vals = {c: float(row[col[c]]) for c in COLUMNS}
        except ValueError as exc:
            raise ProfileError(f"{source}:{lineno}: {exc}") from None
        if not all(np.isfinite(v) for v in vals.values()):
            raise ProfileError(f"{source}:{lineno}: non-finite value")
        if vals["demand_w"] <= 0:
            raise ProfileError(f"{source}:{lineno}: demand_w must be positive")
        if vals["price_eur_kwh"] < 0:
            raise ProfileError(f"{source}:{lineno}: price_eur_kwh must be non-negative")
        hours.append(vals["hour"])
        demand.append(vals["demand_w"])
        prices.append(vals["price_eur_kwh"])
        temps.append(vals["t_surr_c"] + KELVIN)
    if not demand:
        raise ProfileError(f"{source}: no data rows")
    if dt is None:
        steps = np.diff(hours)
        if len(steps) and (np.any(steps <= 0) or np.ptp(steps) > 1e-9):
            raise ProfileError(f"{source}: hours must be equally spaced and increasing")
        dt = float(steps[0]) * 3600.0 if len(steps) else 3600.0
    return ScenarioProfiles(demand, prices, temps, dt)


def load_profiles(path, dt: Optional[float] = None) -> ScenarioProfiles:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ProfileError(f"cannot read scenario {path}: {exc.strerror}") from None
    return parse_profiles(text, str(path), dt)


def bundled_scenario_path() -> Path:
    return Path(__file__).with_name("data") / "peak_day.csv"


def bundled_config_path() -> Path:
    return Path(__file__).with_name("data") / "case_study.cfg"


@dataclass(frozen=True)
class StepRecord:
    step: int
    demand: float
    price: float
    q_e_sec: float
    q_tes: float
    q_tes_sec: float
    mode: int
    gamma_plant: float  # after the step
    gamma_est: float  # estimate after the step
    T_int: float  # K, after the step
    cost: float  # EUR
    iterations: int
    nodes: int
    converged: bool
    gamma_mismatch: float


@dataclass
class RunReport:
    records: list = field(default_factory=list)
    dt: float = 3600.0
    gamma0: float = 0.0

    @property
    def total_cost(self) -> float:
        return float(sum(r.cost for r in self.records))

    @property
    def n_steps(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def mode_histogram(self) -> dict:
        hist = {str(m): 0 for m in (1, 2, 3, 4)}
        for r in self.records:
            hist[str(r.mode)] += 1
        return hist

    def summary(self) -> dict:
        return {
            "n_steps": self.n_steps,
            "dt_s": self.dt,
            "total_cost_eur": self.total_cost,
            "mode_histogram": self.mode_histogram(),
            "gamma_plant_min": float(min((r.gamma_plant for r in self.records), default=self.gamma0)),
            "gamma_plant_max": float(max((r.gamma_plant for r in self.records), default=self.gamma0)),
            "max_estimation_error": float(max(
                (abs(r.gamma_est - r.gamma_plant) for r in self.records), default=0.0)),
            "solver": {
                "iterations": int(sum(r.iterations for r in self.records)),
                "nodes": int(sum(r.nodes for r in self.records)),
                "converged_steps": int(sum(r.converged for r in self.records)),
                "max_gamma_mismatch": float(max(
                    (r.gamma_mismatch for r in self.records), default=0.0)),
            },
        }


def run_closed_loop(profiles: ScenarioProfiles, cfg: RunConfig, x0: Optional[TesState] = None,
                    executor=None, n_steps: Optional[int] = None) -> RunReport:
    """Estimate, schedule, apply the first step to the plant, repeat."""
    model, sc = cfg.model, cfg.scheduler
    if abs(sc.dt - profiles.dt) > 1e-9:
        sc = cfg.with_scheduler(dt=profiles.dt).scheduler
    n_steps = profiles.n_steps if n_steps is None else n_steps
    plant = x0 if x0 is not None else uniform_state(cfg.gamma0, model.pcm.T_lat, model)
    m = Measurement(plant.T_int, float(profiles.T_surr[0]), 0.0)
    est: EstimatedState = initial_estimate(charge_ratio(plant, model.layers, model.pcm), m, model)
    est = EstimatedState(TesState(plant.h_layers, m.T_int), est.gamma, measurement=m)
    report = RunReport(dt=profiles.dt, gamma0=est.gamma)
    u_init = None
    for t in range(n_steps):
        demand, prices, T_surr = profiles.window(t, sc.horizon, cfg.forecast)
        sched = solve_schedule(est.state, demand, prices, T_surr, sc, model, cfg.limits, executor,
                               u_init=u_init)
        # warm start for the next instant: shift the plan, repeat its last step
        u_init = np.r_[sched.inputs[2:], sched.inputs[-2:]]
        first = step_receding_horizon(sched)
        plant = simulate_step(plant, first.q_tes, first.q_tes_sec, float(profiles.T_surr[t]),
                              profiles.dt, cfg.plant_n_sub, model)
        m_new = Measurement(plant.T_int, float(profiles.T_surr[min(t + 1, profiles.n_steps - 1)]),
                            (t + 1) * profiles.dt)
        m_used = Measurement(m.T_int, float(profiles.T_surr[t]), m.timestamp)
        dU = estimate_transferred_energy(m_new, m_used, first.q_tes, first.q_tes_sec,
                                         profiles.dt, model)
        est = update_state(est, dU, m_new, model)
        price = float(profiles.prices[t])
        cost = price * (first.q_e_sec + first.q_tes) * profiles.dt / JOULE_PER_KWH
        d = sched.diagnostics
        report.records.append(StepRecord(
            t, float(profiles.demand[t]), price, first.q_e_sec, first.q_tes, first.q_tes_sec,
            int(first.mode), charge_ratio(plant, model.layers, model.pcm), est.gamma,
            plant.T_int, cost, d["iterations"], d["nodes"], d["converged"], d["gamma_mismatch"]))
        m = m_new
    return report


TABLE_COLUMNS = ("step", "hour", "demand_w", "price_eur_kwh", "q_e_sec_w", "q_tes_w",
                 "q_tes_sec_w", "mode", "gamma_plant", "gamma_est", "t_int_c", "cost_eur")


def report_table(report: RunReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_COLUMNS)
    for r in report.records:
        w.writerow([r.step, repr(r.step * report.dt / 3600.0), repr(r.demand), repr(r.price),
                    repr(r.q_e_sec), repr(r.q_tes), repr(r.q_tes_sec), r.mode,
                    repr(r.gamma_plant), repr(r.gamma_est), repr(r.T_int - KELVIN), repr(r.cost)])
    return buf.getvalue()


def _figures(report: RunReport, out: Path) -> list:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    hours = np.arange(report.n_steps + 1) * report.dt / 3600.0
    meta = {"Software": None}
    paths = []

    def held(name):
        # repeat the last value so the final step is drawn to its end
        v = report.column(name)
        return np.r_[v, v[-1]]

    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.step(hours, held("q_e_sec"), where="post", label="evaporator")
    ax.step(hours, held("q_tes"), where="post", label="TES charge")
    ax.step(hours, held("q_tes_sec"), where="post", label="TES discharge")
    ax.step(hours, held("demand"), where="post", color="k", ls="--", label="demand")
    ax.set_xlabel("time [h]")
    ax.set_ylabel("power [W]")
    ax.legend(fontsize="small")
    fig.tight_layout()
    paths.append(out / "powers.png")
    fig.savefig(paths[-1], dpi=100, metadata=meta)
    plt.close(fig)

    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    ax1.plot(hours, np.r_[report.gamma0, report.column("gamma_plant")], marker="o", label="plant")
    ax1.plot(hours[1:], report.column("gamma_est"), ls="", marker="x", label="estimate")
    ax1.set_ylabel("charge ratio")
    ax1.legend(fontsize="small")
    ax2.step(hours, held("mode"), where="post")
    ax2.set_yticks([1, 2, 3, 4])
    ax2.set_ylabel("mode")
    ax2.set_xlabel("time [h]")
    fig.tight_layout()
    paths.append(out / "charge_ratio.png")
    fig.savefig(paths[-1], dpi=100, metadata=meta)
    plt.close(fig)
    return paths


def emit_report(report: RunReport, out_dir, fmt: str = "csv", figures: bool = True) -> dict:
    """Write ``schedule.csv``, ``summary.json`` and figures; return the paths.

    ``fmt`` picks the text returned under ``"stdout"`` (the table or the summary).
    """
    if fmt not in ("csv", "summary"):
        raise ValueError(f"unknown format {fmt!r}")
    out = Path(out_dir)
    table = report_table(report)
    summary = json.dumps(report.summary(), indent=2, sort_keys=True) + "\n"
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "schedule.csv").write_text(table)
        (out / "summary.json").write_text(summary)
        figs = _figures(report, out) if figures and report.n_steps else []
    except OSError as exc:
        raise OSError(f"cannot write report to {out}: {exc.strerror or exc}") from exc
    return {"table": out / "schedule.csv", "summary": out / "summary.json", "figures": figs,
            "stdout": table if fmt == "csv" else summary}
