"""Deterministic toy simulator with a published closed form.

Used for protocol conformance and integration testing: every observation
is an affine function of the step index and the last action, so a client
can assert exact expected values.

Closed form, for episode parameters ``seed`` and ``day`` (proleptic
Gregorian ordinal ``d``), step index ``k`` (0 at reset) and last action
``a`` (0.0 at reset, else the acted value — the integer index for
discrete actions):

    phase       = ((31 * seed + d) % 97) / 1000
    feature[i]  = (i + 1) + 0.01 * k + 0.1 * a + phase      (i = 0..n-1)
    cooling_w   = 15000 + 100 * k + 1000 * a
    baseline_w  = 20000 + 100 * k
    done        = (k == episode_length)
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date

from .adapter import AdapterConfig

DEFAULT_FEATURES = ("t_out", "t_in", "f_occ", "f_light", "f_eq", "setpoint")
CONTINUOUS = {"kind": "continuous_delta", "low": -0.5, "high": 0.5}
DISCRETE = {"kind": "discrete_delta", "low": -0.5, "high": 0.5, "n_discrete": 3}


@dataclass
class EchoSim:
    """Per-episode state of the toy simulator."""

    seed: int
    day_ordinal: int
    n_features: int
    episode_length: int
    k: int = 0

    @property
    def phase(self) -> float:
        return ((31 * self.seed + self.day_ordinal) % 97) / 1000.0

    def step(self, action):
        if action is not None:
            if self.k >= self.episode_length:
                raise RuntimeError("episode already ended")
            self.k += 1
        a = 0.0 if action is None else float(action)
        k = self.k
        feats = [(i + 1) + 0.01 * k + 0.1 * a + self.phase
                 for i in range(self.n_features)]
        cooling_w = 15000.0 + 100.0 * k + 1000.0 * a
        baseline_w = 20000.0 + 100.0 * k
        done = k == self.episode_length
        return feats, cooling_w, baseline_w, done


def echo_adapter_config(endpoint: str, features=DEFAULT_FEATURES,
                        action=None, episode_length: int = 66) -> AdapterConfig:
    action = dict(action or CONTINUOUS)
    n = len(features)

    def make_state(seed: int, day: date) -> EchoSim:
        return EchoSim(seed, day.toordinal(), n, episode_length)

    def step_fn(state: EchoSim, act):
        return state.step(act)

    return AdapterConfig(endpoint=endpoint, features=tuple(features),
                         action=action, episode_length=episode_length,
                         make_state=make_state, step_fn=step_fn)
