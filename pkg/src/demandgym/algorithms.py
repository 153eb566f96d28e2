"""Five RL algorithms over the dense-network substrate.

On-policy: policy gradient (pg), advantage actor-critic with GAE (a2c),
proximal policy optimization (ppo). Off-policy: double deep Q-learning
(dqn) and twin-delayed DDPG (td3). Each algorithm exposes a functional
update over explicit parameter sets; nothing holds hidden state besides
the Adam moments inside each ParamSet.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .buffers import (BufferError, Experience, InsufficientSamples,
                      ReplayBuffer, RolloutBuffer)
from .neural_core import (Grads, ParamSet, adam_step, backward_batch,
                          forward, forward_batch, log_softmax, mlp_init,
                          mlp_spec, sample_categorical, soft_update, softmax)

ON_POLICY = ("pg", "a2c", "ppo")
OFF_POLICY = ("dqn", "td3")
ALGORITHMS = ON_POLICY + OFF_POLICY


class ConfigError(ValueError):
    pass


@dataclass
class Hyperparams:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    lr_actor: float = 3e-4
    lr_critic: float = 3e-4
    batch_size: int = 64
    replay_capacity: int = 100_000
    target_tau: float = 0.005
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 50_000
    policy_noise: float = 0.1
    noise_clip: float = 0.2
    policy_delay: int = 2
    exploration_noise: float = 0.1
    n_critics: int = 2
    a_low: float = -0.5
    a_high: float = 0.5
    double_q: bool = True
    ppo_epochs: int = 10
    minibatch_size: int = 64
    rollout_episodes: int = 10
    hidden: tuple = (64, 64)

    def __post_init__(self):
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.gae_lambda <= 1.0):
            raise ConfigError("gamma and gae_lambda must be in [0, 1]")
        if self.clip_eps <= 0:
            raise ConfigError("clip_eps must be positive")
        if self.a_low >= self.a_high:
            raise ConfigError("a_low must be below a_high")

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown hyperparameter keys: {sorted(unknown)}")
        if "hidden" in d:
            d = dict(d, hidden=tuple(d["hidden"]))
        return cls(**d)


@dataclass
class AlgoNets:
    """Parameter sets an algorithm needs; unused slots stay None."""

    algorithm: str
    obs_dim: int
    n_actions: int = 3
    actor: ParamSet | None = None
    critic: ParamSet | None = None
    critic2: ParamSet | None = None
    target_actor: ParamSet | None = None
    target_critic: ParamSet | None = None
    target_critic2: ParamSet | None = None

    def all_params(self):
        out = {}
        for name in ("actor", "critic", "critic2",
                     "target_actor", "target_critic", "target_critic2"):
            ps = getattr(self, name)
            if ps is not None:
                out[name] = ps
        return out


def init_nets(algorithm: str, obs_dim: int, hp: Hyperparams, seed: int,
              n_actions: int = 3) -> AlgoNets:
    """Fresh networks for one algorithm; sub-seeds derived from ``seed``."""
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {algorithm!r}")
    hid = list(hp.hidden)
    nets = AlgoNets(algorithm, obs_dim, n_actions)
    if algorithm in ("pg", "a2c", "ppo"):
        nets.actor = mlp_init(mlp_spec([obs_dim] + hid + [n_actions]), seed)
        if algorithm in ("a2c", "ppo"):
            nets.critic = mlp_init(mlp_spec([obs_dim] + hid + [1]), seed + 1)
    elif algorithm == "dqn":
        nets.critic = mlp_init(mlp_spec([obs_dim] + hid + [n_actions]), seed)
        nets.target_critic = nets.critic.copy()
    else:  # td3
        nets.actor = mlp_init(mlp_spec([obs_dim] + hid + [1]), seed)
        nets.critic = mlp_init(mlp_spec([obs_dim + 1] + hid + [1]), seed + 1)
        nets.critic2 = mlp_init(mlp_spec([obs_dim + 1] + hid + [1]), seed + 2)
        nets.target_actor = nets.actor.copy()
        nets.target_critic = nets.critic.copy()
        nets.target_critic2 = nets.critic2.copy()
    return nets


# ---------------------------------------------------------------------------
# generalized advantage estimation
# ---------------------------------------------------------------------------

def compute_gae(rollout: RolloutBuffer, gamma: float, lam: float):
    """Backward-recursion GAE; fills rollout.advantages / rollout.returns.

    delta_t = r_t + gamma V(s_{t+1}) (1 - done_t) - V(s_t)
    A_t = delta_t + gamma lam (1 - done_t) A_{t+1};  R_t = A_t + V(s_t)
    """
    rollout.check_complete()
    n = len(rollout)
    values = np.asarray(rollout.values)
    rewards = np.asarray(rollout.rewards)
    dones = np.asarray(rollout.dones, dtype=bool)
    adv = np.empty(n)
    acc = 0.0
    for t in range(n - 1, -1, -1):
        v_next = 0.0 if dones[t] else values[t + 1]
        delta = rewards[t] + gamma * v_next - values[t]
        acc = delta + gamma * lam * (0.0 if dones[t] else acc)
        adv[t] = acc
    rollout.advantages = adv
    rollout.returns = adv + values
    return adv, rollout.returns


def _normalize(x: np.ndarray) -> np.ndarray:
    std = x.std()
    return (x - x.mean()) / (std + 1e-8)


# ---------------------------------------------------------------------------
# discrete-policy helpers
# ---------------------------------------------------------------------------

def _policy_logp_grads(actor: ParamSet, states, actions, coeffs):
    """Loss = -sum_t coeffs[t] log pi(a_t|s_t) and its actor gradients."""
    states = np.asarray(states, dtype=np.float64)
    actions = np.asarray(actions, dtype=int)
    coeffs = np.asarray(coeffs, dtype=np.float64)
    logits, trace = forward_batch(actor, states)
    logp = log_softmax(logits)
    chosen = logp[np.arange(len(actions)), actions]
    loss = -float(np.sum(coeffs * chosen))
    onehot = np.zeros_like(logits)
    onehot[np.arange(len(actions)), actions] = 1.0
    grad_y = coeffs[:, None] * (softmax(logits) - onehot)
    grads, _ = backward_batch(trace, actor, grad_y)
    return loss, grads, chosen


def _value_grads(critic: ParamSet, states, targets, scale=1.0):
    """Loss = scale * mean (targets - V)^2 and its critic gradients."""
    states = np.asarray(states, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    v, trace = forward_batch(critic, states)
    v = v[:, 0]
    err = v - targets
    loss = scale * float(np.mean(err ** 2))
    grad_y = (scale * 2.0 * err / len(err))[:, None]
    grads, _ = backward_batch(trace, critic, grad_y)
    return loss, grads, v


# ---------------------------------------------------------------------------
# on-policy updates
# ---------------------------------------------------------------------------

def pg_loss_grads(rollout: RolloutBuffer, actor: ParamSet, hp: Hyperparams):
    """Monte-Carlo policy gradient on centered trajectory returns."""
    slices = rollout.trajectory_slices()
    n_traj = len(slices)
    traj_returns = np.empty(n_traj)
    for i, (a, b) in enumerate(slices):
        r = np.asarray(rollout.rewards[a:b])
        traj_returns[i] = float(np.sum(r * hp.gamma ** np.arange(b - a)))
    centered = traj_returns - traj_returns.mean()
    coeffs = np.empty(len(rollout))
    for i, (a, b) in enumerate(slices):
        coeffs[a:b] = centered[i] / n_traj
    loss, grads, _ = _policy_logp_grads(actor, rollout.states, rollout.actions, coeffs)
    return loss, grads


def pg_update(rollout: RolloutBuffer, actor: ParamSet, hp: Hyperparams):
    loss, grads = pg_loss_grads(rollout, actor, hp)
    adam_step(actor, grads, hp.lr_actor)
    return loss


def a2c_loss_grads(rollout: RolloutBuffer, actor: ParamSet, critic: ParamSet,
                   hp: Hyperparams):
    if rollout.advantages is None or len(rollout.advantages) != len(rollout):
        raise BufferError("advantages not computed (run compute_gae first)")
    n = len(rollout)
    adv = _normalize(np.asarray(rollout.advantages))
    actor_loss, actor_grads, _ = _policy_logp_grads(
        actor, rollout.states, rollout.actions, adv / n)
    critic_loss, critic_grads, _ = _value_grads(critic, rollout.states, rollout.returns)
    return actor_loss, critic_loss, actor_grads, critic_grads


def a2c_update(rollout: RolloutBuffer, actor: ParamSet, critic: ParamSet,
               hp: Hyperparams):
    """Advantages are treated as constants; one Adam step per network."""
    actor_loss, critic_loss, ag, cg = a2c_loss_grads(rollout, actor, critic, hp)
    adam_step(actor, ag, hp.lr_actor)
    adam_step(critic, cg, hp.lr_critic)
    return actor_loss, critic_loss


def ppo_minibatch_loss_grads(actor: ParamSet, critic: ParamSet,
                             states, actions, old_logp, adv, returns,
                             clip_eps: float):
    """Clipped-surrogate actor loss plus 0.5-weighted value loss."""
    states = np.asarray(states, dtype=np.float64)
    actions = np.asarray(actions, dtype=int)
    old_logp = np.asarray(old_logp, dtype=np.float64)
    adv = np.asarray(adv, dtype=np.float64)
    b = len(actions)

    logits, trace = forward_batch(actor, states)
    logp = log_softmax(logits)
    chosen = logp[np.arange(b), actions]
    ratio = np.exp(chosen - old_logp)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv
    objective = np.minimum(unclipped, clipped)
    actor_loss = -float(np.mean(objective))
    # gradient flows only where the unclipped term attains the min
    active = unclipped <= clipped
    dl_dlogp = np.where(active, -ratio * adv / b, 0.0)
    onehot = np.zeros_like(logits)
    onehot[np.arange(b), actions] = 1.0
    grad_y = dl_dlogp[:, None] * (onehot - softmax(logits))
    actor_grads, _ = backward_batch(trace, actor, grad_y)

    critic_loss, critic_grads, _ = _value_grads(critic, states, returns, scale=0.5)
    clip_frac = float(np.mean(np.abs(ratio - 1.0) > clip_eps))
    return actor_loss, critic_loss, actor_grads, critic_grads, clip_frac


def ppo_update(rollout: RolloutBuffer, actor: ParamSet, critic: ParamSet,
               hp: Hyperparams, rng: np.random.Generator):
    """Epochs of shuffled minibatch clipped-surrogate updates."""
    if rollout.advantages is None or len(rollout.advantages) != len(rollout):
        raise BufferError("advantages not computed (run compute_gae first)")
    if not rollout.log_probs or len(rollout.log_probs) != len(rollout):
        raise BufferError("old log-probs missing from rollout")
    n = len(rollout)
    states = np.asarray(rollout.states)
    actions = np.asarray(rollout.actions, dtype=int)
    old_logp = np.asarray(rollout.log_probs)
    adv = _normalize(np.asarray(rollout.advantages))
    returns = np.asarray(rollout.returns)

    losses, clip_fracs = [], []
    for _ in range(hp.ppo_epochs):
        perm = rng.permutation(n)
        for lo in range(0, n, hp.minibatch_size):
            idx = perm[lo:lo + hp.minibatch_size]
            al, cl, ag, cg, cf = ppo_minibatch_loss_grads(
                actor, critic, states[idx], actions[idx], old_logp[idx],
                adv[idx], returns[idx], hp.clip_eps)
            adam_step(actor, ag, hp.lr_actor)
            adam_step(critic, cg, hp.lr_critic)
            losses.append((al, cl))
            clip_fracs.append(cf)
    losses = np.asarray(losses)
    return {
        "actor_loss": float(losses[:, 0].mean()),
        "critic_loss": float(losses[:, 1].mean()),
        "clip_fraction": float(np.mean(clip_fracs)),
    }


# ---------------------------------------------------------------------------
# off-policy updates
# ---------------------------------------------------------------------------

def _batch_arrays(batch):
    s = np.asarray([e.s for e in batch], dtype=np.float64)
    r = np.asarray([e.r for e in batch], dtype=np.float64)
    s2 = np.asarray([e.s_next for e in batch], dtype=np.float64)
    d = np.asarray([e.done for e in batch], dtype=np.float64)
    return s, r, s2, d


def dqn_targets(batch, target_critic: ParamSet, hp: Hyperparams,
                online_critic: ParamSet | None = None):
    """Bootstrapped targets; double-Q picks the argmax with the online net."""
    _, r, s2, d = _batch_arrays(batch)
    q_target_next, _ = forward_batch(target_critic, s2)
    if hp.double_q:
        if online_critic is None:
            raise ConfigError("double_q targets need the online network")
        q_online_next, _ = forward_batch(online_critic, s2)
        a_star = np.argmax(q_online_next, axis=1)
        boot = q_target_next[np.arange(len(batch)), a_star]
    else:
        boot = q_target_next.max(axis=1)
    return r + hp.gamma * (1.0 - d) * boot


def ddqn_loss_grads(batch, online: ParamSet, target: ParamSet, hp: Hyperparams):
    s, _, _, _ = _batch_arrays(batch)
    a = np.asarray([e.a for e in batch], dtype=int)
    y = dqn_targets(batch, target, hp, online)
    q, trace = forward_batch(online, s)
    q_sa = q[np.arange(len(batch)), a]
    err = q_sa - y
    loss = float(np.mean(err ** 2))
    grad_y = np.zeros_like(q)
    grad_y[np.arange(len(batch)), a] = 2.0 * err / len(batch)
    grads, _ = backward_batch(trace, online, grad_y)
    return loss, grads


def ddqn_update(replay: ReplayBuffer, online: ParamSet, target: ParamSet,
                hp: Hyperparams, rng: np.random.Generator):
    """One TD step on the online net plus a soft target update.

    Returns the TD loss, or None when the buffer cannot fill a batch yet.
    """
    try:
        batch = replay.sample(hp.batch_size, rng)
    except InsufficientSamples:
        return None
    loss, grads = ddqn_loss_grads(batch, online, target, hp)
    adam_step(online, grads, hp.lr_critic)
    soft_update(target, online, hp.target_tau)
    return loss


def td3_action(actor: ParamSet, states: np.ndarray, hp: Hyperparams):
    """tanh-squashed actor output scaled to [a_low, a_high]."""
    u, trace = forward_batch(actor, states)
    center = 0.5 * (hp.a_low + hp.a_high)
    half = 0.5 * (hp.a_high - hp.a_low)
    return center + half * np.tanh(u[:, 0]), u[:, 0], trace


def td3_smooth_action(a, noise, hp: Hyperparams):
    """Double clip: noise to [-noise_clip, noise_clip], sum to action bounds."""
    noise = np.clip(noise, -hp.noise_clip, hp.noise_clip)
    return np.clip(a + noise, hp.a_low, hp.a_high)


def td3_target_actions(s_next, target_actor: ParamSet, hp: Hyperparams,
                       rng: np.random.Generator):
    """Target-policy smoothing: clipped Gaussian noise on the target actor."""
    a_t, _, _ = td3_action(target_actor, s_next, hp)
    noise = rng.normal(0.0, hp.policy_noise, size=a_t.shape)
    return td3_smooth_action(a_t, noise, hp)


def td3_critic_targets(batch, nets: AlgoNets, hp: Hyperparams,
                       rng: np.random.Generator):
    _, r, s2, d = _batch_arrays(batch)
    a2 = td3_target_actions(s2, nets.target_actor, hp, rng)
    sa2 = np.concatenate([s2, a2[:, None]], axis=1)
    q1, _ = forward_batch(nets.target_critic, sa2)
    q2, _ = forward_batch(nets.target_critic2, sa2)
    return r + hp.gamma * (1.0 - d) * np.minimum(q1[:, 0], q2[:, 0])


def td3_actor_loss_grads(nets: AlgoNets, states: np.ndarray, hp: Hyperparams):
    """Loss = -mean Q1(s, mu(s)); gradient chains through the first critic."""
    states = np.asarray(states, dtype=np.float64)
    b = len(states)
    a, u, actor_trace = td3_action(nets.actor, states, hp)
    sa = np.concatenate([states, a[:, None]], axis=1)
    q1, critic_trace = forward_batch(nets.critic, sa)
    loss = -float(np.mean(q1[:, 0]))
    grad_q = np.full((b, 1), -1.0 / b)
    _, d_input = backward_batch(critic_trace, nets.critic, grad_q)
    d_action = d_input[:, -1]  # action is the last critic input column
    half = 0.5 * (hp.a_high - hp.a_low)
    d_u = d_action * half * (1.0 - np.tanh(u) ** 2)
    grads, _ = backward_batch(actor_trace, nets.actor, d_u[:, None])
    return loss, grads


def td3_update(replay: ReplayBuffer, nets: AlgoNets, hp: Hyperparams,
               rng: np.random.Generator, step_counter: int):
    """Twin-critic regression each call; delayed actor + target updates."""
    try:
        batch = replay.sample(hp.batch_size, rng)
    except InsufficientSamples:
        return None
    s, _, _, _ = _batch_arrays(batch)
    a = np.asarray([e.a for e in batch], dtype=np.float64)
    y = td3_critic_targets(batch, nets, hp, rng)
    sa = np.concatenate([s, a[:, None]], axis=1)
    out = {}
    for name, critic in (("critic1_loss", nets.critic), ("critic2_loss", nets.critic2)):
        loss, grads, _ = _value_grads(critic, sa, y)
        adam_step(critic, grads, hp.lr_critic)
        out[name] = loss
    if step_counter % hp.policy_delay == 0:
        actor_loss, actor_grads = td3_actor_loss_grads(nets, s, hp)
        adam_step(nets.actor, actor_grads, hp.lr_actor)
        soft_update(nets.target_actor, nets.actor, hp.target_tau)
        soft_update(nets.target_critic, nets.critic, hp.target_tau)
        soft_update(nets.target_critic2, nets.critic2, hp.target_tau)
        out["actor_loss"] = actor_loss
    return out


# ---------------------------------------------------------------------------
# action selection
# ---------------------------------------------------------------------------

def epsilon_at(hp: Hyperparams, global_step: int) -> float:
    if global_step >= hp.eps_decay_steps:
        return hp.eps_end
    frac = max(0.0, global_step / max(1, hp.eps_decay_steps))
    return hp.eps_start + (hp.eps_end - hp.eps_start) * frac


def select_action(algorithm: str, nets: AlgoNets, obs: np.ndarray,
                  rng: np.random.Generator, mode: str, hp: Hyperparams,
                  global_step: int = 0):
    """Pick an action; returns (action, info) where info carries the
    log-prob / value / epsilon the caller may want to log."""
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {algorithm!r}")
    if mode not in ("train", "eval"):
        raise ConfigError(f"unknown mode {mode!r}")
    info = {}
    if algorithm in ("pg", "a2c", "ppo"):
        logits, _ = forward(nets.actor, obs)
        if mode == "train":
            a, logp = sample_categorical(rng, logits)
            info["log_prob"] = logp
        else:
            a = int(np.argmax(logits))
        return a, info
    if algorithm == "dqn":
        if mode == "train":
            eps = epsilon_at(hp, global_step)
            info["epsilon"] = eps
            if rng.random() < eps:
                return int(rng.integers(nets.n_actions)), info
        q, _ = forward(nets.critic, obs)
        return int(np.argmax(q)), info
    # td3
    a, _, _ = td3_action(nets.actor, np.asarray(obs)[None, :], hp)
    a = float(a[0])
    if mode == "train":
        a += float(rng.normal(0.0, hp.exploration_noise))
    return float(np.clip(a, hp.a_low, hp.a_high)), info
