"""Episode-structured demand-response environment over the building model.

An episode is one weekday: the building starts from its cached baseline
day-start state, runs under the baseline schedule until 08:00, then hands
control to the agent for 66 ten-minute decisions until 19:00. Rewards are
NOT computed here — each step reports the interval's actual and baseline
cooling rates and the caller applies the reward definition, so a remote
simulator speaking the wire protocol is interchangeable with this class.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date, datetime, time, timedelta

import numpy as np

from . import building_env as be
from . import problem

CONTROL_START_H = 8
CONTROL_END_H = 19
DECISIONS_PER_EPISODE = (CONTROL_END_H - CONTROL_START_H) * 3600 // be.CONTROL_DT_S
EPISODE_START_SETPOINT_C = be.BASELINE_OCCUPIED_SETPOINT_C


class EnvironmentError_(RuntimeError):
    """Environment protocol misuse or mid-episode simulator failure."""


@dataclass(frozen=True)
class StepObs:
    """What the environment reports at each exchange.

    ``cooling_w``/``baseline_w`` describe the control interval that just
    ended (meaningless on the reset observation); ``features`` are the raw
    observation values, in spec order, at instant ``t``.
    """

    t: datetime
    features: np.ndarray
    cooling_w: float
    baseline_w: float
    done: bool


def weekdays_between(start: date, end: date) -> list:
    days = []
    d = start
    while d <= end:
        if d.weekday() < 5:
            days.append(d)
        d += timedelta(days=1)
    return days


class DemandResponseEnv:
    """Builtin simulator wrapped in the reset/step episode interface."""

    def __init__(self, building: be.BuildingConfig, weather: be.WeatherSeries,
                 schedules: be.ScheduleSet, task: str,
                 action_spec: problem.ActionSpec,
                 start_date: date, end_date: date,
                 signal_schedule: problem.SignalSchedule | None = None,
                 baseline: be.BaselineSeries | None = None):
        self.building = building
        self.weather = weather
        self.schedules = schedules
        self.obs_spec = problem.ObservationSpec.for_task(task)
        self.action_spec = action_spec
        self.task = task
        if task == "dynamic" and signal_schedule is None:
            signal_schedule = problem.SignalSchedule.grid_default()
        self.signal_schedule = signal_schedule
        self.episode_days = weekdays_between(start_date, end_date)
        if not self.episode_days:
            raise EnvironmentError_("period contains no weekdays")
        self.baseline = baseline if baseline is not None else be.run_baseline(
            building, weather, schedules, start_date, end_date)
        self._profile = self.baseline.weekday_profile()
        self._control_start = {}  # date -> BuildingState at 08:00 (deterministic)
        self._state = None
        self._done = True

    @property
    def n_episodes(self) -> int:
        return len(self.episode_days)

    @property
    def feature_names(self) -> tuple:
        return self.obs_spec.features

    def _signal(self, t: datetime) -> float:
        if self.task != "dynamic":
            return 0.0
        sig, _ = problem.signal_at(t, self.signal_schedule)
        return sig

    def _observe(self, cooling_w: float, baseline_w: float, done: bool) -> StepObs:
        sig = self._signal(self._state.t) if self.task == "dynamic" else None
        feats = problem.raw_features(self._state, self.weather, self.schedules,
                                     self.obs_spec, signal=sig)
        return StepObs(self._state.t, feats, cooling_w, baseline_w, done)

    def reset(self, episode_index: int) -> StepObs:
        """Start the indexed weekday's episode; returns the 08:00 observation."""
        if not 0 <= episode_index < self.n_episodes:
            raise EnvironmentError_(f"episode index {episode_index} out of range")
        day = self.episode_days[episode_index]
        state = self._control_start.get(day)
        if state is None:
            state = self.baseline.day_start_states.get(day)
            if state is None:
                raise EnvironmentError_(f"no cached baseline state for {day}")
            # replay the baseline schedule from midnight up to the control window
            control_start = datetime.combine(day, time(CONTROL_START_H))
            while state.t < control_start:
                sp = be.baseline_setpoint_c(state.t)
                state, _ = be.step(state, sp, self.weather, self.schedules,
                                   self.building)
            self._control_start[day] = state
        self._state = be.BuildingState(state.t, state.T_air_C, state.T_env_C,
                                       EPISODE_START_SETPOINT_C,
                                       state.last_interval_cooling_W)
        self._done = False
        self._steps = 0
        return self._observe(0.0, 0.0, done=False)

    def step(self, action) -> StepObs:
        """Apply one setpoint action and advance one control interval."""
        if self._state is None or self._done:
            raise EnvironmentError_("step before reset / after episode end")
        decision_t = self._state.t
        setpoint = problem.apply_action(self._state.setpoint_C, action,
                                        self.action_spec)
        try:
            self._state, cooling_w = be.step(self._state, setpoint, self.weather,
                                             self.schedules, self.building)
        except be.SimulationError as exc:
            self._done = True
            raise EnvironmentError_(str(exc)) from exc
        baseline_w = self._profile[(decision_t.hour, decision_t.minute)]
        self._steps += 1
        self._done = self._steps >= DECISIONS_PER_EPISODE
        return self._observe(cooling_w, baseline_w, self._done)
