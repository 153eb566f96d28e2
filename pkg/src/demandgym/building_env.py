"""Reduced-order office-building thermal simulator.

A two-node RC network (indoor air + envelope) with ideal capped cooling
toward a setpoint stands in for a detailed whole-building engine. It is
deliberately small: explicit Euler at 60 s substeps, deterministic given
(config, weather, schedules, setpoint trajectory).

Thermal network::

    T_out --UA_out--> T_env --UA_in--> T_air <--UA_inf-- T_out
               solar -> T_env     q_int -> T_air    Q_cool <- T_air
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from datetime import date, datetime, time, timedelta

import numpy as np

from .neural_core import make_rng

CONTROL_DT_S = 600  # 10-min observation/control interval
SUBSTEP_DT_S = 60

COOLING_START_H = 7  # cooling plant availability window
COOLING_END_H = 19

BASELINE_OCCUPIED_SETPOINT_C = 24.0
BASELINE_UNOCCUPIED_SETPOINT_C = 26.7


class SimulationError(RuntimeError):
    pass


class WeatherLoadError(ValueError):
    pass


@dataclass
class BuildingConfig:
    """Calibrated defaults reproduce the ~17 kW working-hours baseline."""

    floor_area_m2: float = 511.16
    ceiling_height_m: float = 3.05
    occupant_density_m2_per_person: float = 23.0
    lighting_W_per_m2: float = 15.59
    equipment_W_per_m2: float = 8.07
    sensible_W_per_person: float = 100.0
    C_air_J_per_K: float = 5.0e6
    C_env_J_per_K: float = 6.0e7
    UA_in_W_per_K: float = 2500.0
    UA_out_W_per_K: float = 80.0
    UA_inf_W_per_K: float = 150.0
    A_sol_m2: float = 1.0
    Q_max_W: float = 40000.0

    def __post_init__(self):
        for name, value in vars(self).items():
            lo_ok = value >= 0 if name == "Q_max_W" else value > 0  # Q_max 0 = plant off
            if not (lo_ok and np.isfinite(value)):
                raise ValueError(f"BuildingConfig.{name} must be positive, got {value}")

    @classmethod
    def from_dict(cls, d: dict) -> "BuildingConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown building config keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})


@dataclass(frozen=True)
class BuildingState:
    t: datetime
    T_air_C: float
    T_env_C: float
    setpoint_C: float
    last_interval_cooling_W: float = 0.0


@dataclass
class WeatherSeries:
    """Ordered (datetime, tout_C, ghi_W_per_m2) records, <= 1 h spacing."""

    times: list  # datetimes, strictly increasing
    tout_c: np.ndarray
    ghi_wm2: np.ndarray

    def __post_init__(self):
        self._epoch = np.array([t.timestamp() for t in self.times])
        if np.any(np.diff(self._epoch) <= 0):
            raise WeatherLoadError("weather timestamps must be strictly increasing")
        if np.any(self.ghi_wm2 < 0):
            raise WeatherLoadError("GHI must be non-negative")

    def at(self, t: datetime):
        """Linear interpolation to any instant inside the series window."""
        ts = t.timestamp()
        tout = float(np.interp(ts, self._epoch, self.tout_c))
        ghi = float(np.interp(ts, self._epoch, self.ghi_wm2))
        return tout, ghi


def synth_weather(seed: int, start_date: date, end_date: date) -> WeatherSeries:
    """Synthetic hot-humid summer weather (Miami-like August).

    Hourly records: T_out(h) = 28.5 + 4.5 sin(2pi (h-9)/24) + d_k with a
    per-day offset d_k ~ U[-2, 2] degC; GHI(h) = max(0, 950 sin(pi (h-6.5)/13))
    scaled by (1 + e_k), e_k ~ U[-0.15, 0.15]. Deterministic given seed.
    """
    if start_date > end_date:
        raise ValueError("start_date must not be after end_date")
    rng = make_rng(seed)
    n_days = (end_date - start_date).days + 1
    d_k = rng.uniform(-2.0, 2.0, size=n_days)
    e_k = rng.uniform(-0.15, 0.15, size=n_days)
    times, tout, ghi = [], [], []
    for day in range(n_days + 1):  # one extra day so interpolation covers the last midnight
        day_start = datetime.combine(start_date + timedelta(days=day), time())
        dd = min(day, n_days - 1)
        for h in range(24):
            times.append(day_start + timedelta(hours=h))
            tout.append(28.5 + 4.5 * np.sin(2 * np.pi * (h - 9) / 24.0) + d_k[dd])
            ghi.append(max(0.0, 950.0 * np.sin(np.pi * (h - 6.5) / 13.0)) * (1.0 + e_k[dd]))
            if day == n_days:
                break  # just the extra midnight record
    return WeatherSeries(times, np.array(tout), np.array(ghi))


def load_weather_csv(path) -> WeatherSeries:
    """Parse a `datetime,tout_c,ghi_wm2` CSV into a WeatherSeries."""
    times, tout, ghi = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise WeatherLoadError(f"{path}: empty file")
        if [c.strip() for c in header] != ["datetime", "tout_c", "ghi_wm2"]:
            raise WeatherLoadError(f"{path}: expected header datetime,tout_c,ghi_wm2, got {header}")
        for i, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise WeatherLoadError(f"{path}:{i}: expected 3 columns, got {len(row)}")
            try:
                times.append(datetime.fromisoformat(row[0].strip()))
                tout.append(float(row[1]))
                ghi.append(float(row[2]))
            except ValueError as exc:
                raise WeatherLoadError(f"{path}:{i}: {exc}") from None
    if not times:
        raise WeatherLoadError(f"{path}: no data rows")
    try:
        return WeatherSeries(times, np.array(tout), np.array(ghi))
    except WeatherLoadError as exc:
        raise WeatherLoadError(f"{path}: {exc}") from None


@dataclass
class ScheduleSet:
    """Piecewise-constant daily fraction profiles, weekday/weekend variants.

    Defaults follow a standard small-office day: occupancy ramps in over
    07:00-08:00, dips over lunch, tapers 17:00-19:00; lighting/equipment
    track occupied hours at fixed fractions.
    """

    occupancy_scale: float = 1.0
    lighting_occupied: float = 0.9
    lighting_unoccupied: float = 0.1
    equipment_occupied: float = 0.9
    equipment_unoccupied: float = 0.4

    def at(self, t: datetime):
        """Returns (f_occ, f_light, f_eq) for instant t."""
        h = t.hour + t.minute / 60.0 + t.second / 3600.0
        if t.weekday() >= 5:
            return 0.0, self.lighting_unoccupied, self.equipment_unoccupied
        occupied = 7.0 <= h < 19.0
        if h < 7.0 or h >= 19.0:
            f_occ = 0.0
        elif h < 8.0:
            f_occ = 0.95 * (h - 7.0)
        elif h < 12.0:
            f_occ = 0.95
        elif h < 13.0:
            f_occ = 0.5
        elif h < 17.0:
            f_occ = 0.95
        else:
            f_occ = 0.3
        f_light = self.lighting_occupied if occupied else self.lighting_unoccupied
        f_eq = self.equipment_occupied if occupied else self.equipment_unoccupied
        return f_occ * self.occupancy_scale, f_light, f_eq


def schedule_at(schedules: ScheduleSet, t: datetime):
    return schedules.at(t)


def internal_gains_w(cfg: BuildingConfig, f_occ, f_light, f_eq) -> float:
    area = cfg.floor_area_m2
    q = area * (cfg.lighting_W_per_m2 * f_light + cfg.equipment_W_per_m2 * f_eq)
    q += (area / cfg.occupant_density_m2_per_person) * cfg.sensible_W_per_person * f_occ
    return q


def cooling_enabled(t: datetime) -> bool:
    return COOLING_START_H <= t.hour < COOLING_END_H


def baseline_setpoint_c(t: datetime) -> float:
    if t.weekday() < 5 and COOLING_START_H <= t.hour < COOLING_END_H:
        return BASELINE_OCCUPIED_SETPOINT_C
    return BASELINE_UNOCCUPIED_SETPOINT_C


def step(state: BuildingState, setpoint_c: float, weather: WeatherSeries,
         schedules: ScheduleSet, cfg: BuildingConfig,
         dt_control_s: int = CONTROL_DT_S):
    """Advance one control interval. Returns (next_state, mean_cooling_W).

    Explicit Euler at 60 s substeps; ideal cooling pulls T_air to the
    setpoint each substep, capped at Q_max, only inside the availability
    window. The caller is responsible for clamping the setpoint.
    """
    t = state.t
    t_air = state.T_air_C
    t_env = state.T_env_C
    n_sub = dt_control_s // SUBSTEP_DT_S
    dt = float(SUBSTEP_DT_S)
    q_cool_sum = 0.0
    for _ in range(n_sub):
        t_out, ghi = weather.at(t)
        f_occ, f_light, f_eq = schedules.at(t)
        q_int = internal_gains_w(cfg, f_occ, f_light, f_eq)
        d_env = (cfg.UA_out_W_per_K * (t_out - t_env)
                 + cfg.UA_in_W_per_K * (t_air - t_env)
                 + cfg.A_sol_m2 * ghi) * dt / cfg.C_env_J_per_K
        d_air = (cfg.UA_in_W_per_K * (t_env - t_air)
                 + cfg.UA_inf_W_per_K * (t_out - t_air)
                 + q_int) * dt / cfg.C_air_J_per_K
        t_env += d_env
        t_air += d_air
        if cooling_enabled(t) and t_air > setpoint_c:
            q_c = min(cfg.Q_max_W, cfg.C_air_J_per_K * (t_air - setpoint_c) / dt)
            t_air -= q_c * dt / cfg.C_air_J_per_K
        else:
            q_c = 0.0
        q_cool_sum += q_c
        t = t + timedelta(seconds=SUBSTEP_DT_S)
        if not (np.isfinite(t_air) and np.isfinite(t_env)):
            raise SimulationError(f"non-finite state at {t}: T_air={t_air}, T_env={t_env}")
    mean_cooling_w = q_cool_sum / n_sub
    nxt = BuildingState(t, t_air, t_env, setpoint_c, mean_cooling_w)
    return nxt, mean_cooling_w


def initial_state(weather: WeatherSeries, start: datetime) -> BuildingState:
    t_out, _ = weather.at(start)
    return BuildingState(start, BASELINE_UNOCCUPIED_SETPOINT_C, t_out,
                         BASELINE_UNOCCUPIED_SETPOINT_C)


@dataclass
class BaselineSeries:
    """Per-control-interval cooling under the fixed baseline schedule."""

    times: list  # interval start datetimes
    cooling_w: np.ndarray
    day_start_states: dict  # date -> BuildingState at 00:00 of that day

    def index_of(self, t: datetime) -> int:
        lo = self.times[0]
        i = int((t - lo).total_seconds()) // CONTROL_DT_S
        if i < 0 or i >= len(self.times) or self.times[i] != t:
            raise KeyError(f"no baseline interval starting at {t}")
        return i

    def at(self, t: datetime) -> float:
        return float(self.cooling_w[self.index_of(t)])

    def hourly(self):
        """(hour datetimes, mean cooling W per hour)."""
        hours, means = [], []
        per_hour = 3600 // CONTROL_DT_S
        for i in range(0, len(self.times) - per_hour + 1, per_hour):
            hours.append(self.times[i])
            means.append(float(self.cooling_w[i:i + per_hour].mean()))
        return hours, np.array(means)

    def weekday_profile(self):
        """Across-weekday mean cooling by time-of-day.

        Returns dict (hour, minute) -> mean W over all weekdays of the
        period. This average-day profile is the demand-response reference.
        """
        buckets = {}
        for t, q in zip(self.times, self.cooling_w):
            if t.weekday() < 5:
                buckets.setdefault((t.hour, t.minute), []).append(q)
        return {k: float(np.mean(v)) for k, v in buckets.items()}

    def working_hours_stats(self, start_h=8, end_h=16):
        """Weekday working-hours mean and mean per-hour across-day std (W)."""
        by_hour = {}
        vals = []
        for t, q in zip(self.times, self.cooling_w):
            if t.weekday() < 5 and start_h <= t.hour < end_h:
                vals.append(q)
                by_hour.setdefault(t.hour, {}).setdefault(t.date(), []).append(q)
        stds = []
        for h, days in sorted(by_hour.items()):
            day_means = [np.mean(v) for v in days.values()]
            stds.append(np.std(day_means))
        return float(np.mean(vals)), float(np.mean(stds))


def run_baseline(cfg: BuildingConfig, weather: WeatherSeries,
                 schedules: ScheduleSet, start_date: date, end_date: date) -> BaselineSeries:
    """Simulate the whole period under the fixed baseline setpoint schedule."""
    start = datetime.combine(start_date, time())
    end = datetime.combine(end_date + timedelta(days=1), time())
    state = initial_state(weather, start)
    times, cooling = [], []
    day_states = {state.t.date(): state}
    while state.t < end:
        if state.t.hour == 0 and state.t.minute == 0:
            day_states[state.t.date()] = state
        sp = baseline_setpoint_c(state.t)
        times.append(state.t)
        state, q = step(state, sp, weather, schedules, cfg)
        cooling.append(q)
    return BaselineSeries(times, np.array(cooling), day_states)
