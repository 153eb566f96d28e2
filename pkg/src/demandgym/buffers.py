"""Experience containers: on-policy rollouts and an off-policy ring buffer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class BufferError(RuntimeError):
    pass


class InsufficientSamples(Exception):
    """Sampling requested before the buffer holds a full batch; caller defers."""


@dataclass(frozen=True)
class Experience:
    s: np.ndarray
    a: object  # discrete index (int) or continuous delta (float)
    r: float
    s_next: np.ndarray
    done: bool

    def __post_init__(self):
        if not np.isfinite(self.r):
            raise BufferError(f"non-finite reward {self.r}")


@dataclass
class RolloutBuffer:
    """Ordered experiences of complete trajectories, with per-step
    log-probabilities and value estimates filled in at collection time.
    Advantages/returns are attached by ``compute_gae`` before any update."""

    states: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    dones: list = field(default_factory=list)
    log_probs: list = field(default_factory=list)
    values: list = field(default_factory=list)
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    def add(self, exp: Experience, log_prob: float = 0.0, value: float = 0.0):
        self.states.append(np.asarray(exp.s, dtype=np.float64))
        self.actions.append(exp.a)
        self.rewards.append(float(exp.r))
        self.dones.append(bool(exp.done))
        self.log_probs.append(float(log_prob))
        self.values.append(float(value))

    def __len__(self):
        return len(self.states)

    @property
    def n_trajectories(self) -> int:
        return int(np.sum(self.dones))

    def check_complete(self):
        if not self.states:
            raise BufferError("empty rollout")
        if not self.dones[-1]:
            raise BufferError("rollout must end on a trajectory boundary")

    def trajectory_slices(self):
        """Consecutive [start, end) index ranges of complete trajectories."""
        self.check_complete()
        slices, start = [], 0
        for i, d in enumerate(self.dones):
            if d:
                slices.append((start, i + 1))
                start = i + 1
        return slices

    def discounted_returns(self, gamma: float) -> np.ndarray:
        """Per-step discounted return within each trajectory."""
        out = np.empty(len(self.rewards))
        acc = 0.0
        for i in range(len(self.rewards) - 1, -1, -1):
            if self.dones[i]:
                acc = 0.0
            acc = self.rewards[i] + gamma * acc
            out[i] = acc
        return out


class ReplayBuffer:
    """Fixed-capacity ring buffer with uniform no-replacement batch sampling."""

    def __init__(self, capacity: int):
        if capacity <= 0:
            raise BufferError("capacity must be positive")
        self.capacity = capacity
        self._data = []
        self._next = 0
        self.inserted = 0

    def __len__(self):
        return len(self._data)

    def push(self, exp: Experience):
        if len(self._data) < self.capacity:
            self._data.append(exp)
        else:
            self._data[self._next] = exp  # overwrite oldest
        self._next = (self._next + 1) % self.capacity
        self.inserted += 1

    def sample(self, batch_size: int, rng: np.random.Generator):
        if len(self._data) < batch_size:
            raise InsufficientSamples(
                f"buffer holds {len(self._data)} < batch {batch_size}")
        idx = rng.choice(len(self._data), size=batch_size, replace=False)
        return [self._data[i] for i in idx]
