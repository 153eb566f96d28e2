"""Control-problem formulation: observations, actions, reward, signals.

Pure functions over value inputs; the trainer and the co-simulation client
both route through here so the reward/normalization definitions live in
exactly one place.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, time

import numpy as np

from .building_env import BuildingState, ScheduleSet, WeatherSeries

SETPOINT_MIN_C = 23.0
SETPOINT_MAX_C = 27.0
DELTA_C = 0.5

# fixed min-max normalization bounds; fractions and the signal are already in [0, 1]
FEATURE_BOUNDS = {
    "t_out": (20.0, 40.0),
    "t_in": (20.0, 32.0),
    "f_occ": (0.0, 1.0),
    "f_light": (0.0, 1.0),
    "f_eq": (0.0, 1.0),
    "setpoint": (23.0, 27.0),
    "signal": (0.0, 1.0),
}

CONSTANT_FEATURES = ("t_out", "t_in", "f_occ", "f_light", "f_eq", "setpoint")
DYNAMIC_FEATURES = CONSTANT_FEATURES + ("signal",)

NORM_CLIP_LO = -0.5
NORM_CLIP_HI = 1.5


class FormulationError(ValueError):
    pass


@dataclass(frozen=True)
class ObservationSpec:
    features: tuple
    include_external: bool

    def __post_init__(self):
        for name in self.features:
            lo, hi = FEATURE_BOUNDS[name]
            if not lo < hi:
                raise FormulationError(f"bad bounds for {name}")

    @property
    def dim(self) -> int:
        return len(self.features)

    @classmethod
    def for_task(cls, task: str) -> "ObservationSpec":
        if task == "constant":
            return cls(CONSTANT_FEATURES, include_external=False)
        if task == "dynamic":
            return cls(DYNAMIC_FEATURES, include_external=True)
        raise FormulationError(f"unknown task {task!r}")


@dataclass(frozen=True)
class ActionSpec:
    kind: str  # discrete_delta | continuous_delta

    def __post_init__(self):
        if self.kind not in ("discrete_delta", "continuous_delta"):
            raise FormulationError(f"unknown action kind {self.kind!r}")

    @property
    def n_discrete(self) -> int:
        return 3

    @property
    def low(self) -> float:
        return -DELTA_C

    @property
    def high(self) -> float:
        return DELTA_C


@dataclass(frozen=True)
class RewardConfig:
    c_offset: float = 1.4
    k_target: float = 0.15
    e_base_floor_W: float = 1000.0

    def __post_init__(self):
        if not 0.0 <= self.k_target < 1.0:
            raise FormulationError("k_target must be in [0, 1)")
        if self.e_base_floor_W <= 0:
            raise FormulationError("e_base_floor_W must be positive")


def normalize_features(raw: np.ndarray, spec: ObservationSpec) -> np.ndarray:
    """Min-max scale each feature to [0, 1], clipped to [-0.5, 1.5]."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape != (spec.dim,):
        raise FormulationError(f"expected {spec.dim} features, got shape {raw.shape}")
    out = np.empty(spec.dim)
    for i, name in enumerate(spec.features):
        lo, hi = FEATURE_BOUNDS[name]
        out[i] = (raw[i] - lo) / (hi - lo)
    return np.clip(out, NORM_CLIP_LO, NORM_CLIP_HI)


def raw_features(state: BuildingState, weather: WeatherSeries,
                 schedules: ScheduleSet, spec: ObservationSpec,
                 signal=None) -> np.ndarray:
    """Assemble the raw feature vector in spec order."""
    if spec.include_external and signal is None:
        raise FormulationError("dynamic task requires an external signal value")
    if not spec.include_external and signal is not None:
        raise FormulationError("constant task takes no external signal")
    t_out, _ = weather.at(state.t)
    f_occ, f_light, f_eq = schedules.at(state.t)
    vals = [t_out, state.T_air_C, f_occ, f_light, f_eq, state.setpoint_C]
    if spec.include_external:
        vals.append(float(signal))
    return np.array(vals)


def build_observation(state: BuildingState, weather: WeatherSeries,
                      schedules: ScheduleSet, spec: ObservationSpec,
                      signal=None) -> np.ndarray:
    return normalize_features(raw_features(state, weather, schedules, spec, signal), spec)


def apply_action(setpoint_c: float, action, spec: ActionSpec) -> float:
    """Translate an RL output into the next clamped cooling setpoint."""
    if spec.kind == "discrete_delta":
        if action not in (0, 1, 2):
            raise FormulationError(f"invalid discrete action index {action!r}")
        delta = (-DELTA_C, 0.0, DELTA_C)[int(action)]
    else:
        a = float(action)
        if not np.isfinite(a):
            raise FormulationError("continuous action must be finite")
        delta = float(np.clip(a, -DELTA_C, DELTA_C))
    return float(np.clip(setpoint_c + delta, SETPOINT_MIN_C, SETPOINT_MAX_C))


def reward(e_baseline_w: float, e_actual_w: float, k_target: float,
           cfg: RewardConfig):
    """Demand-response tracking reward. Returns (r, valid).

    r = c - |(E_base - E_act)/E_base - k_target| * 10. Steps whose
    baseline falls below the floor are flagged invalid (r = 0) and are
    excluded from learning and metrics.
    """
    if e_baseline_w < 0 or e_actual_w < 0:
        raise FormulationError("energies must be non-negative")
    if e_baseline_w < cfg.e_base_floor_W:
        return 0.0, False
    reduction = (e_baseline_w - e_actual_w) / e_baseline_w
    return cfg.c_offset - abs(reduction - k_target) * 10.0, True


SIGNAL_TO_K = {0.0: 0.0, 0.5: 0.15, 1.0: 0.30}


@dataclass
class SignalSchedule:
    """Daily (start, end, signal) windows; outside all windows signal = 0."""

    entries: list = field(default_factory=list)  # (time, time, float)

    def __post_init__(self):
        for start, end, sig in self.entries:
            if sig not in SIGNAL_TO_K:
                raise FormulationError(f"signal {sig} not in {sorted(SIGNAL_TO_K)}")
            if not start < end:
                raise FormulationError(f"empty signal window {start}-{end}")
        spans = sorted((s, e) for s, e, _ in self.entries)
        for (_, e1), (s2, _) in zip(spans, spans[1:]):
            if s2 < e1:
                raise FormulationError("overlapping signal windows")

    @classmethod
    def grid_default(cls) -> "SignalSchedule":
        """Hourly grid reduction-request schedule used by the dynamic task."""
        def w(h1, m1, h2, m2, sig):
            return (time(h1, m1), time(h2, m2), sig)
        return cls([
            w(8, 0, 11, 0, 0.0),
            w(11, 0, 13, 0, 1.0),
            w(13, 0, 14, 0, 0.0),
            w(14, 0, 16, 0, 0.5),
            w(16, 0, 17, 0, 0.0),
            w(17, 0, 19, 0, 1.0),
        ])

    @classmethod
    def from_config(cls, items) -> "SignalSchedule":
        """Parse [{start: "HH:MM", end: "HH:MM", signal: x}, ...]."""
        entries = []
        for it in items:
            entries.append((time.fromisoformat(it["start"]),
                            time.fromisoformat(it["end"]),
                            float(it["signal"])))
        return cls(entries)

    def to_config(self):
        return [{"start": s.strftime("%H:%M"), "end": e.strftime("%H:%M"), "signal": sig}
                for s, e, sig in self.entries]


def signal_at(t: datetime, schedule: SignalSchedule):
    """Returns (signal, k_target) at instant t; (0, 0.0) outside windows."""
    tt = t.time()
    for start, end, sig in schedule.entries:
        if start <= tt < end:
            return sig, SIGNAL_TO_K[sig]
    return 0.0, 0.0
