"""Run orchestration: configs, training loops, metrics, persistence.

A run is fully described by a RunConfig. ``train`` iterates epochs of
weekday episodes, evaluates deterministically after each epoch, keeps the
best-scoring agent, and writes the five run outputs (``agent.best``,
``train_log.csv``, ``eval_timeseries.csv``, ``metrics.json``,
``config.resolved``) into the run directory.
"""

from __future__ import annotations

import base64
import csv
import hashlib
import json
import os
from dataclasses import dataclass, field, replace
from datetime import date, datetime

import numpy as np
import yaml

from . import algorithms as alg
from . import building_env as be
from . import problem
from .buffers import Experience, ReplayBuffer, RolloutBuffer
from .environment import DemandResponseEnv
from .neural_core import LayerSpec, ParamSet, forward, make_rng, mlp_init

DEFAULT_EPOCHS_BY_TASK = {"constant": 60, "dynamic": 150}

ARTIFACT_FORMAT_VERSION = 1


class ConfigError(ValueError):
    pass


class EvaluationError(RuntimeError):
    pass


class ArtifactError(ValueError):
    pass


def action_spec_for(algorithm: str) -> problem.ActionSpec:
    kind = "continuous_delta" if algorithm == "td3" else "discrete_delta"
    return problem.ActionSpec(kind)


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    task: str = "constant"
    algorithm: str = "td3"
    hyperparams: alg.Hyperparams = field(default_factory=alg.Hyperparams)
    building: be.BuildingConfig = field(default_factory=be.BuildingConfig)
    schedules: be.ScheduleSet = field(default_factory=be.ScheduleSet)
    reward: problem.RewardConfig = field(default_factory=problem.RewardConfig)
    signal_schedule: problem.SignalSchedule | None = None
    weather_seed: int = 1
    weather_csv: str | None = None
    start_date: date = date(2025, 8, 1)
    end_date: date = date(2025, 8, 31)
    seed: int = 0
    epochs: int | None = None
    out_dir: str | None = None
    endpoint: str | None = None  # None = builtin simulator

    def __post_init__(self):
        if self.task not in ("constant", "dynamic"):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.algorithm not in alg.ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.start_date > self.end_date:
            raise ConfigError("period start after end")
        if self.epochs is not None and self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.weather_csv is not None and not os.path.exists(self.weather_csv):
            raise ConfigError(f"weather file not found: {self.weather_csv}")
        if self.task == "dynamic" and self.signal_schedule is None:
            self.signal_schedule = problem.SignalSchedule.grid_default()

    @property
    def effective_epochs(self) -> int:
        if self.epochs is not None:
            return self.epochs
        return DEFAULT_EPOCHS_BY_TASK[self.task]

    def resolved(self) -> dict:
        """Full config echo with every default filled in."""
        out = {
            "problem": {
                "task": self.task,
                "reward": {
                    "c_offset": self.reward.c_offset,
                    "k_target": self.reward.k_target,
                    "e_base_floor_W": self.reward.e_base_floor_W,
                },
            },
            "building": {
                "config": {k: getattr(self.building, k)
                           for k in be.BuildingConfig.__dataclass_fields__},
                "weather": ({"csv": self.weather_csv} if self.weather_csv
                            else {"synthetic_seed": self.weather_seed}),
                "period": {"start": self.start_date.isoformat(),
                           "end": self.end_date.isoformat()},
            },
            "algorithm": {
                "name": self.algorithm,
                "epochs": self.effective_epochs,
                "hyperparams": {
                    k: (list(v) if isinstance(v, tuple) else v)
                    for k, v in vars(self.hyperparams).items()
                },
            },
            "run": {
                "seed": self.seed,
                "out_dir": self.out_dir or "",
                "environment": (self.endpoint if self.endpoint else "builtin"),
            },
        }
        if self.task == "dynamic":
            out["problem"]["signal_schedule"] = self.signal_schedule.to_config()
        return out

    def digest(self) -> str:
        """Content digest of everything that affects numeric output."""
        doc = self.resolved()
        doc["run"].pop("out_dir")
        blob = json.dumps(doc, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = {"problem", "building", "algorithm", "run"}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {}
        try:
            prob = doc.get("problem", {})
            if "task" in prob:
                kwargs["task"] = prob["task"]
            if "reward" in prob:
                kwargs["reward"] = problem.RewardConfig(**prob["reward"])
            if "signal_schedule" in prob:
                kwargs["signal_schedule"] = problem.SignalSchedule.from_config(
                    prob["signal_schedule"])
            bld = doc.get("building", {})
            if "config" in bld:
                kwargs["building"] = be.BuildingConfig.from_dict(bld["config"])
            weather = bld.get("weather", {})
            if "csv" in weather:
                kwargs["weather_csv"] = str(weather["csv"])
            if "synthetic_seed" in weather:
                kwargs["weather_seed"] = int(weather["synthetic_seed"])
            if "period" in bld:
                kwargs["start_date"] = _as_date(bld["period"]["start"])
                kwargs["end_date"] = _as_date(bld["period"]["end"])
            algo = doc.get("algorithm", {})
            if "name" in algo:
                kwargs["algorithm"] = algo["name"]
            if "hyperparams" in algo:
                kwargs["hyperparams"] = alg.Hyperparams.from_dict(algo["hyperparams"])
            if "epochs" in algo and algo["epochs"] is not None:
                kwargs["epochs"] = int(algo["epochs"])
            run = doc.get("run", {})
            if "seed" in run:
                kwargs["seed"] = int(run["seed"])
            if "out_dir" in run:
                kwargs["out_dir"] = str(run["out_dir"])
            env = run.get("environment", "builtin")
            if env != "builtin":
                kwargs["endpoint"] = str(env)
        except (KeyError, TypeError, ValueError, alg.ConfigError,
                problem.FormulationError) as exc:
            raise ConfigError(f"bad config: {exc}") from exc
        return cls(**kwargs)

    @classmethod
    def from_yaml(cls, path) -> "RunConfig":
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: config must be a mapping")
        return cls.from_dict(doc)


def _as_date(v) -> date:
    if isinstance(v, date):
        return v
    return date.fromisoformat(str(v))


# ---------------------------------------------------------------------------
# environment construction
# ---------------------------------------------------------------------------

def load_weather(cfg: RunConfig) -> be.WeatherSeries:
    if cfg.weather_csv:
        return be.load_weather_csv(cfg.weather_csv)
    return be.synth_weather(cfg.weather_seed, cfg.start_date, cfg.end_date)


def build_environment(cfg: RunConfig, baseline: be.BaselineSeries | None = None):
    """Builtin simulator environment, or a remote one over the wire protocol."""
    if cfg.endpoint:
        from . import cosim
        return cosim.remote_env(cfg)
    weather = load_weather(cfg)
    return DemandResponseEnv(cfg.building, weather, cfg.schedules, cfg.task,
                             action_spec_for(cfg.algorithm),
                             cfg.start_date, cfg.end_date,
                             signal_schedule=cfg.signal_schedule,
                             baseline=baseline)


# ---------------------------------------------------------------------------
# episode records and rollout collection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EpisodeRecord:
    """One control step of one episode — one CSV row, no field ever blank."""

    timestamp: datetime
    raw: np.ndarray
    norm: np.ndarray
    action: float
    setpoint_c: float
    cooling_w: float
    baseline_w: float
    signal: float
    k_target: float
    reward: float
    valid: bool


def _k_for(task: str, signal: float, reward_cfg: problem.RewardConfig) -> float:
    if task == "dynamic":
        return problem.SIGNAL_TO_K[signal]
    return reward_cfg.k_target


def play_episode(env, episode_index: int, nets: alg.AlgoNets, cfg: RunConfig,
                 mode: str, rng, global_step: int = 0):
    """Run one episode. Returns (records, transitions, episode_reward).

    ``transitions`` is a list of (Experience over normalized observations,
    action info dict) ready for the learners; empty interactions are never
    recorded — exactly one record per control decision.
    """
    hp = cfg.hyperparams
    spec = env.obs_spec
    sp_idx = spec.features.index("setpoint")
    obs = env.reset(episode_index)
    norm = problem.normalize_features(obs.features, spec)
    records, transitions = [], []
    ep_reward = 0.0
    done = False
    while not done:
        action, info = alg.select_action(cfg.algorithm, nets, norm, rng, mode,
                                         hp, global_step + len(records))
        nxt = env.step(action)
        norm_next = problem.normalize_features(nxt.features, spec)
        signal = float(obs.features[-1]) if cfg.task == "dynamic" else 0.0
        k = _k_for(cfg.task, signal, cfg.reward)
        r, valid = problem.reward(nxt.baseline_w, nxt.cooling_w, k, cfg.reward)
        records.append(EpisodeRecord(
            timestamp=obs.t, raw=obs.features, norm=norm, action=float(action),
            setpoint_c=float(nxt.features[sp_idx]), cooling_w=nxt.cooling_w,
            baseline_w=nxt.baseline_w, signal=signal, k_target=k, reward=r,
            valid=valid))
        transitions.append((Experience(norm, action, r, norm_next, nxt.done), info))
        ep_reward += r
        obs, norm, done = nxt, norm_next, nxt.done
    return records, transitions, ep_reward


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def control_error(rec: EpisodeRecord) -> float:
    return (rec.baseline_w - rec.cooling_w) / rec.baseline_w - rec.k_target


def _working_hours_std(pairs, start_h=8, end_h=16) -> float:
    """Mean across-day std of hourly means over weekday working hours.

    ``pairs`` iterates (timestamp, cooling_W).
    """
    by_hour = {}
    for t, q in pairs:
        if t.weekday() < 5 and start_h <= t.hour < end_h:
            by_hour.setdefault(t.hour, {}).setdefault(t.date(), []).append(q)
    stds = [float(np.std([np.mean(v) for v in days.values()]))
            for _, days in sorted(by_hour.items())]
    return float(np.mean(stds)) if stds else 0.0


def metrics_summary(records, baseline_std_w: float, task: str) -> dict:
    """Control-error order statistics plus load-flattening measures."""
    if not records:
        raise EvaluationError("no records to summarize")
    valid = [r for r in records if r.valid]
    errors = np.array([control_error(r) for r in valid])
    if errors.size == 0:
        raise EvaluationError("no valid control steps")

    by_day = {}
    for r in records:
        by_day.setdefault(r.timestamp.date(), []).append(r.reward)
    ep_rewards = [float(np.sum(v)) for v in by_day.values()]

    hourly = {}
    for r in valid:
        hourly.setdefault((r.timestamp.date(), r.timestamp.hour), []).append(r)
    h_errors = []
    for _, recs in sorted(hourly.items()):
        b = float(np.mean([r.baseline_w for r in recs]))
        a = float(np.mean([r.cooling_w for r in recs]))
        k = float(np.mean([r.k_target for r in recs]))
        h_errors.append((b - a) / b - k)
    h_errors = np.array(h_errors)

    actual_std = _working_hours_std((r.timestamp, r.cooling_w) for r in records)
    out = {
        "n_steps": len(records),
        "n_valid_steps": len(valid),
        "n_episodes": len(by_day),
        "mean_episode_reward": float(np.mean(ep_rewards)),
        "median_error": float(np.median(errors)),
        "median_abs_error": float(np.median(np.abs(errors))),
        "mean_error": float(np.mean(errors)),
        "p10_error": float(np.percentile(errors, 10)),
        "p90_error": float(np.percentile(errors, 90)),
        "frac_within_5pp": float(np.mean(np.abs(errors) < 0.05)),
        "frac_within_10pp": float(np.mean(np.abs(errors) < 0.10)),
        "hourly_median_error": float(np.median(h_errors)),
        "hourly_frac_within_5pp": float(np.mean(np.abs(h_errors) < 0.05)),
        "hourly_frac_within_10pp": float(np.mean(np.abs(h_errors) < 0.10)),
        "working_hours_std_w": actual_std,
        "baseline_std_w": float(baseline_std_w),
        "std_reduction": (1.0 - actual_std / baseline_std_w
                          if baseline_std_w > 0 else 0.0),
    }
    if task == "dynamic":
        groups = {}
        for r in valid:
            groups.setdefault(r.signal, []).append(control_error(r))
        out["by_signal"] = {
            str(sig): {
                "n": len(es),
                "median_error": float(np.median(es)),
                "median_abs_error": float(np.median(np.abs(np.array(es)))),
                "frac_within_10pp": float(np.mean(np.abs(np.array(es)) < 0.10)),
            }
            for sig, es in sorted(groups.items())
        }
    return out


# ---------------------------------------------------------------------------
# time-series CSV
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def timeseries_header(spec: problem.ObservationSpec) -> list:
    cols = ["timestamp"]
    cols += [f"raw_{n}" for n in spec.features]
    cols += [f"norm_{n}" for n in spec.features]
    cols += ["action", "setpoint_c", "cooling_w", "baseline_w",
             "signal", "k_target", "reward", "valid"]
    return cols


def write_timeseries_csv(records, path, spec: problem.ObservationSpec):
    """Canonical UTF-8 CSV: ISO timestamps, 17-significant-digit floats."""
    if not records:
        raise EvaluationError("refusing to write an empty time series")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(timeseries_header(spec))
        for r in records:
            row = [r.timestamp.isoformat()]
            row += [_fmt(v) for v in r.raw]
            row += [_fmt(v) for v in r.norm]
            row += [_fmt(r.action), _fmt(r.setpoint_c), _fmt(r.cooling_w),
                    _fmt(r.baseline_w), _fmt(r.signal), _fmt(r.k_target),
                    _fmt(r.reward), str(int(r.valid))]
            w.writerow(row)


def read_timeseries_csv(path, spec: problem.ObservationSpec):
    """Inverse of write_timeseries_csv (used by report/analysis tooling)."""
    n = spec.dim
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != timeseries_header(spec):
            raise EvaluationError(f"{path}: unexpected CSV header")
        for row in reader:
            vals = [float(v) for v in row[1:-1]]
            records.append(EpisodeRecord(
                timestamp=datetime.fromisoformat(row[0]),
                raw=np.array(vals[:n]), norm=np.array(vals[n:2 * n]),
                action=vals[2 * n], setpoint_c=vals[2 * n + 1],
                cooling_w=vals[2 * n + 2], baseline_w=vals[2 * n + 3],
                signal=vals[2 * n + 4], k_target=vals[2 * n + 5],
                reward=vals[2 * n + 6], valid=bool(int(row[-1]))))
    return records


# ---------------------------------------------------------------------------
# agent artifact persistence
# ---------------------------------------------------------------------------

def _encode_param_set(ps: ParamSet) -> dict:
    return {
        "layers": [
            {
                "in_dim": s.in_dim,
                "out_dim": s.out_dim,
                "activation": s.activation,
                "w": base64.b64encode(
                    np.ascontiguousarray(w, dtype="<f8").tobytes()).decode(),
                "b": base64.b64encode(
                    np.ascontiguousarray(b, dtype="<f8").tobytes()).decode(),
            }
            for s, w, b in zip(ps.specs, ps.weights, ps.biases)
        ]
    }


def _decode_param_set(doc: dict) -> ParamSet:
    specs = []
    for layer in doc["layers"]:
        specs.append(LayerSpec(int(layer["in_dim"]), int(layer["out_dim"]),
                               layer["activation"]))
    ps = mlp_init(specs, seed=0)
    for i, layer in enumerate(doc["layers"]):
        for key, target in (("w", ps.weights[i]), ("b", ps.biases[i])):
            try:
                raw = base64.b64decode(layer[key], validate=True)
            except Exception as exc:
                raise ArtifactError(f"corrupt base64 payload: {exc}") from None
            arr = np.frombuffer(raw, dtype="<f8")
            if arr.size != target.size:
                raise ArtifactError(
                    f"truncated payload: layer {i} {key} has {arr.size} values,"
                    f" expected {target.size}")
            target[...] = arr.reshape(target.shape)
    return ps


@dataclass
class AgentArtifact:
    """Single-file portable agent: specs, parameters, training metadata."""

    algorithm: str
    task: str
    features: tuple
    action_kind: str
    nets: dict  # net name -> ParamSet (online networks only)
    seed: int
    best_mean_eval_reward: float
    config_digest: str
    format_version: int = ARTIFACT_FORMAT_VERSION

    @classmethod
    def from_nets(cls, nets: alg.AlgoNets, cfg: RunConfig,
                  best_reward: float) -> "AgentArtifact":
        online = {name: ps.copy() for name, ps in nets.all_params().items()
                  if not name.startswith("target_")}
        return cls(algorithm=nets.algorithm, task=cfg.task,
                   features=problem.ObservationSpec.for_task(cfg.task).features,
                   action_kind=action_spec_for(cfg.algorithm).kind,
                   nets=online, seed=cfg.seed,
                   best_mean_eval_reward=float(best_reward),
                   config_digest=cfg.digest())

    def to_nets(self) -> alg.AlgoNets:
        """Rebuild an AlgoNets (targets re-initialized as online copies)."""
        out = alg.AlgoNets(self.algorithm, len(self.features))
        for name, ps in self.nets.items():
            setattr(out, name, ps.copy())
        if self.algorithm == "dqn":
            out.target_critic = out.critic.copy()
        elif self.algorithm == "td3":
            out.target_actor = out.actor.copy()
            out.target_critic = out.critic.copy()
            out.target_critic2 = out.critic2.copy()
        return out

    def policy_net(self) -> ParamSet:
        return self.nets["critic" if self.algorithm == "dqn" else "actor"]


def save_agent(artifact: AgentArtifact, path):
    body = {
        "algorithm": artifact.algorithm,
        "task": artifact.task,
        "features": list(artifact.features),
        "action_kind": artifact.action_kind,
        "nets": {name: _encode_param_set(ps)
                 for name, ps in sorted(artifact.nets.items())},
        "metadata": {
            "seed": artifact.seed,
            "best_mean_eval_reward": artifact.best_mean_eval_reward,
            "config_digest": artifact.config_digest,
        },
    }
    blob = json.dumps(body, sort_keys=True)
    doc = {
        "format_version": artifact.format_version,
        "payload_digest": hashlib.sha256(blob.encode()).hexdigest(),
        "body": body,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_agent(path) -> AgentArtifact:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ArtifactError(f"cannot read agent file {path}: {exc}") from None
    version = doc.get("format_version")
    if version != ARTIFACT_FORMAT_VERSION:
        raise ArtifactError(f"unsupported format_version {version!r}")
    body = doc.get("body")
    if body is None:
        raise ArtifactError("missing body")
    blob = json.dumps(body, sort_keys=True)
    digest = hashlib.sha256(blob.encode()).hexdigest()
    if digest != doc.get("payload_digest"):
        raise ArtifactError("digest mismatch: file corrupted or edited")
    meta = body["metadata"]
    return AgentArtifact(
        algorithm=body["algorithm"], task=body["task"],
        features=tuple(body["features"]), action_kind=body["action_kind"],
        nets={name: _decode_param_set(ps) for name, ps in body["nets"].items()},
        seed=int(meta["seed"]),
        best_mean_eval_reward=float(meta["best_mean_eval_reward"]),
        config_digest=str(meta["config_digest"]), format_version=version)


# ---------------------------------------------------------------------------
# training and evaluation
# ---------------------------------------------------------------------------

def evaluate_nets(env, nets: alg.AlgoNets, cfg: RunConfig):
    """Deterministic policy over every weekday of the period."""
    rng = make_rng(cfg.seed)  # eval draws nothing, but the API wants an rng
    records = []
    for ep in range(env.n_episodes):
        recs, _, _ = play_episode(env, ep, nets, cfg, "eval", rng)
        records.extend(recs)
    _, baseline_std = env.baseline.working_hours_stats()
    return records, metrics_summary(records, baseline_std, cfg.task)


def evaluate(artifact: AgentArtifact, cfg: RunConfig, env=None):
    """Evaluate a saved agent under a config; specs must agree."""
    expected = problem.ObservationSpec.for_task(cfg.task).features
    if artifact.features != expected:
        raise EvaluationError(
            f"agent observes {len(artifact.features)} features "
            f"{artifact.features}, config task {cfg.task!r} expects "
            f"{len(expected)} {expected}")
    if artifact.action_kind != action_spec_for(cfg.algorithm).kind:
        raise EvaluationError(
            f"agent action kind {artifact.action_kind!r} does not match "
            f"algorithm {cfg.algorithm!r}")
    if env is None:
        env = build_environment(cfg)
    return evaluate_nets(env, artifact.to_nets(), cfg)


@dataclass
class TrainResult:
    artifact: AgentArtifact
    log_rows: list  # per-epoch dicts
    eval_records: list
    metrics: dict


def train(cfg: RunConfig, env=None, log_rows=None) -> TrainResult:
    """Full training run.

    ``log_rows`` may be a caller-owned list; epoch rows are appended as they
    complete, so on a mid-run environment failure the caller still holds the
    partial training log.
    """
    if env is None:
        env = build_environment(cfg)
    hp = cfg.hyperparams
    algorithm = cfg.algorithm
    nets = alg.init_nets(algorithm, env.obs_spec.dim, hp, cfg.seed)
    rng = make_rng(cfg.seed + 1)
    epochs = cfg.effective_epochs
    on_policy = algorithm in alg.ON_POLICY
    replay = None if on_policy else ReplayBuffer(hp.replay_capacity)
    rollout = RolloutBuffer() if on_policy else None

    best = None  # (mean eval reward, AlgoNets snapshot)
    log_rows = [] if log_rows is None else log_rows
    global_step = 0

    def snapshot():
        snap = alg.AlgoNets(algorithm, nets.obs_dim, nets.n_actions)
        for name, ps in nets.all_params().items():
            setattr(snap, name, ps.copy())
        return snap

    def flush_on_policy():
        nonlocal rollout
        diag = {}
        if len(rollout) == 0:
            return diag
        if algorithm == "pg":
            diag["actor_loss"] = alg.pg_update(rollout, nets.actor, hp)
        elif algorithm == "a2c":
            alg.compute_gae(rollout, hp.gamma, hp.gae_lambda)
            al, cl = alg.a2c_update(rollout, nets.actor, nets.critic, hp)
            diag.update(actor_loss=al, critic_loss=cl)
        else:  # ppo
            alg.compute_gae(rollout, hp.gamma, hp.gae_lambda)
            diag.update(alg.ppo_update(rollout, nets.actor, nets.critic, hp, rng))
        rollout = RolloutBuffer()
        return diag

    for epoch in range(epochs):
        train_rewards, diags = [], []
        for ep in range(env.n_episodes):
            _, transitions, ep_reward = play_episode(
                env, ep, nets, cfg, "train", rng, global_step)
            train_rewards.append(ep_reward)
            for exp, info in transitions:
                global_step += 1
                if on_policy:
                    value = 0.0
                    if nets.critic is not None:
                        v, _ = forward(nets.critic, exp.s)
                        value = float(v[0])
                    rollout.add(exp, log_prob=info.get("log_prob", 0.0),
                                value=value)
                else:
                    replay.push(exp)
                    if algorithm == "dqn":
                        loss = alg.ddqn_update(replay, nets.critic,
                                               nets.target_critic, hp, rng)
                        if loss is not None:
                            diags.append({"critic_loss": loss})
                    else:
                        out = alg.td3_update(replay, nets, hp, rng, global_step)
                        if out is not None:
                            diags.append(out)
            if on_policy and rollout.n_trajectories >= hp.rollout_episodes:
                diags.append(flush_on_policy())
        if on_policy:
            diags.append(flush_on_policy())

        _, eval_metrics = evaluate_nets(env, nets, cfg)
        eval_reward = eval_metrics["mean_episode_reward"]
        if best is None or eval_reward > best[0]:
            best = (eval_reward, snapshot())
        row = {"epoch": epoch,
               "train_mean_episode_reward": float(np.mean(train_rewards)),
               "eval_mean_episode_reward": eval_reward}
        for key in ("actor_loss", "critic_loss", "critic1_loss",
                    "critic2_loss", "clip_fraction"):
            vals = [d[key] for d in diags if d and key in d]
            if vals:
                row[key] = float(np.mean(vals))
        log_rows.append(row)

    if best is None:  # epochs == 0: the untrained agent is the result
        _, m = evaluate_nets(env, nets, cfg)
        best = (m["mean_episode_reward"], snapshot())

    artifact = AgentArtifact.from_nets(best[1], cfg, best[0])
    eval_records, metrics = evaluate_nets(env, best[1], cfg)
    return TrainResult(artifact, log_rows, eval_records, metrics)


def write_train_log(log_rows, path):
    cols = ["epoch", "train_mean_episode_reward", "eval_mean_episode_reward",
            "actor_loss", "critic_loss", "critic1_loss", "critic2_loss",
            "clip_fraction"]
    used = [c for c in cols if any(c in r for r in log_rows)] or cols[:3]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(used)
        for r in log_rows:
            w.writerow([("" if c not in r else
                         (str(r[c]) if c == "epoch" else _fmt(r[c])))
                        for c in used])


def run_training(cfg: RunConfig, env=None) -> TrainResult:
    """train() plus the five documented run-directory outputs."""
    if not cfg.out_dir:
        raise ConfigError("run has no output directory")
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "config.resolved"), "w",
              encoding="utf-8") as fh:
        yaml.safe_dump(cfg.resolved(), fh, sort_keys=False)
    log_rows = []
    log_path = os.path.join(cfg.out_dir, "train_log.csv")
    try:
        result = train(cfg, env=env, log_rows=log_rows)
    except Exception:
        if log_rows:  # dead environment still leaves the partial log behind
            write_train_log(log_rows, log_path)
        raise
    save_agent(result.artifact, os.path.join(cfg.out_dir, "agent.best"))
    write_train_log(result.log_rows, log_path)
    spec = problem.ObservationSpec.for_task(cfg.task)
    write_timeseries_csv(result.eval_records,
                         os.path.join(cfg.out_dir, "eval_timeseries.csv"), spec)
    with open(os.path.join(cfg.out_dir, "metrics.json"), "w",
              encoding="utf-8") as fh:
        json.dump(result.metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return result


# ---------------------------------------------------------------------------
# hyperparameter sweeps
# ---------------------------------------------------------------------------

def sweep(cfg: RunConfig, grid: dict) -> list:
    """Cartesian-product grid over Hyperparams fields, ranked by eval reward."""
    valid_keys = set(alg.Hyperparams.__dataclass_fields__)
    unknown = set(grid) - valid_keys
    if unknown:
        raise ConfigError(f"unknown sweep keys: {sorted(unknown)}")
    combos = [{}]
    for key, values in grid.items():
        combos = [dict(c, **{key: v}) for c in combos for v in values]
    results = []
    for i, overrides in enumerate(combos):
        hp = alg.Hyperparams.from_dict(dict(
            {k: (tuple(v) if isinstance(v, list) else v)
             for k, v in vars(cfg.hyperparams).items()}, **overrides))
        run_cfg = replace(cfg, hyperparams=hp, seed=cfg.seed + i,
                          out_dir=os.path.join(cfg.out_dir, f"run_{i:03d}"))
        result = run_training(run_cfg)
        results.append({"run": i, "overrides": overrides,
                        "seed": run_cfg.seed,
                        "mean_eval_reward": result.artifact.best_mean_eval_reward,
                        "out_dir": run_cfg.out_dir})
    results.sort(key=lambda r: -r["mean_eval_reward"])
    return results
