import json
import os
from datetime import date, datetime, timedelta

import numpy as np
import pytest

from demandgym import problem, trainer
from demandgym.algorithms import Hyperparams, init_nets
from demandgym.neural_core import forward, make_rng

WEEK = (date(2025, 8, 4), date(2025, 8, 8))


def small_cfg(tmp_path=None, **kw):
    defaults = dict(task="constant", algorithm="pg",
                    hyperparams=Hyperparams(hidden=(8,), rollout_episodes=5),
                    start_date=WEEK[0], end_date=WEEK[1], seed=3,
                    epochs=1, out_dir=str(tmp_path) if tmp_path else None)
    defaults.update(kw)
    return trainer.RunConfig(**defaults)


def fake_record(ts, cooling_w, baseline_w, k=0.15, valid=True, signal=0.0):
    spec = problem.ObservationSpec.for_task("constant")
    raw = np.zeros(spec.dim)
    r, v = problem.reward(baseline_w, cooling_w, k, problem.RewardConfig()) \
        if valid else (0.0, False)
    return trainer.EpisodeRecord(ts, raw, raw.copy(), 1.0, 24.0, cooling_w,
                                 baseline_w, signal, k, r, valid)


class TestRunConfig:
    def test_yaml_round_trip(self, tmp_path):
        cfg = small_cfg()
        path = tmp_path / "c.yaml"
        import yaml
        path.write_text(yaml.safe_dump(cfg.resolved()))
        again = trainer.RunConfig.from_yaml(path)
        assert again.digest() == cfg.digest()

    def test_unknown_section(self):
        with pytest.raises(trainer.ConfigError):
            trainer.RunConfig.from_dict({"extras": {}})

    def test_missing_file(self, tmp_path):
        with pytest.raises(trainer.ConfigError):
            trainer.RunConfig.from_yaml(tmp_path / "absent.yaml")

    def test_missing_weather_csv(self):
        with pytest.raises(trainer.ConfigError):
            small_cfg(weather_csv="/nonexistent/weather.csv")

    def test_dynamic_gets_default_schedule(self):
        cfg = small_cfg(task="dynamic")
        assert cfg.signal_schedule is not None

    def test_digest_ignores_out_dir(self, tmp_path):
        a = small_cfg(tmp_path / "a")
        b = small_cfg(tmp_path / "b")
        assert a.digest() == b.digest()

    def test_digest_tracks_seed(self):
        assert small_cfg(seed=1).digest() != small_cfg(seed=2).digest()

    def test_default_epochs_by_task(self):
        assert small_cfg(epochs=None).effective_epochs == 60
        assert small_cfg(epochs=None, task="dynamic").effective_epochs == 150


class TestMetrics:
    def make_records(self, errors, k=0.15):
        base = 20000.0
        t0 = datetime(2025, 8, 4, 9, 0)
        return [fake_record(t0 + timedelta(minutes=10 * i),
                            base * (1.0 - k - e), base, k)
                for i, e in enumerate(errors)]

    def test_hand_order_statistics(self):
        m = trainer.metrics_summary(self.make_records([-0.02, 0.04, 0.11]),
                                    1000.0, "constant")
        assert m["median_error"] == pytest.approx(0.04)
        # |-0.02| and |0.04| are under 0.05; |0.11| misses both bands
        assert m["frac_within_5pp"] == pytest.approx(2 / 3)
        assert m["frac_within_10pp"] == pytest.approx(2 / 3)

    def test_baseline_reproducer_with_zero_target(self):
        base = 20000.0
        t0 = datetime(2025, 8, 4, 9, 0)
        recs = [fake_record(t0 + timedelta(minutes=10 * i), base, base, k=0.0)
                for i in range(12)]
        m = trainer.metrics_summary(recs, 1000.0, "constant")
        assert m["median_error"] == 0.0
        assert m["frac_within_5pp"] == 1.0
        assert m["frac_within_10pp"] == 1.0

    def test_invalid_steps_excluded(self):
        recs = self.make_records([0.5, 0.5])  # way off target
        recs.append(fake_record(datetime(2025, 8, 4, 10), 100.0, 500.0,
                                valid=False))
        m = trainer.metrics_summary(recs, 1000.0, "constant")
        assert m["n_valid_steps"] == 2
        assert m["median_error"] == pytest.approx(0.5)

    def test_metric_identities(self):
        rng = make_rng(0)
        m = trainer.metrics_summary(
            self.make_records(list(rng.normal(0, 0.1, size=60))),
            1000.0, "constant")
        assert m["frac_within_5pp"] <= m["frac_within_10pp"]
        assert m["p10_error"] <= m["median_error"] <= m["p90_error"]

    def test_by_signal_groups(self):
        t0 = datetime(2025, 8, 4, 9, 0)
        recs = [fake_record(t0, 17000.0, 20000.0, k=0.15, signal=0.5),
                fake_record(t0 + timedelta(minutes=10), 20000.0, 20000.0,
                            k=0.0, signal=0.0)]
        m = trainer.metrics_summary(recs, 1000.0, "dynamic")
        assert m["by_signal"]["0.5"]["median_error"] == pytest.approx(0.0)
        assert m["by_signal"]["0.0"]["n"] == 1


class TestTimeseriesCsv:
    spec = problem.ObservationSpec.for_task("constant")

    def write_some(self, tmp_path, n=5):
        t0 = datetime(2025, 8, 4, 8, 0)
        recs = [fake_record(t0 + timedelta(minutes=10 * i),
                            17000.0 + i / 3.0, 20000.0) for i in range(n)]
        path = tmp_path / "ts.csv"
        trainer.write_timeseries_csv(recs, path, self.spec)
        return recs, path

    def test_row_count_and_completeness(self, tmp_path):
        _, path = self.write_some(tmp_path, 7)
        lines = path.read_text().strip().split("\n")
        assert len(lines) == 8
        header = lines[0].split(",")
        for line in lines[1:]:
            cells = line.split(",")
            assert len(cells) == len(header)
            assert all(c != "" for c in cells)
            datetime.fromisoformat(cells[0])
            for c in cells[1:]:
                float(c)

    def test_rewrite_is_byte_identical(self, tmp_path):
        _, path = self.write_some(tmp_path)
        records = trainer.read_timeseries_csv(path, self.spec)
        path2 = tmp_path / "ts2.csv"
        trainer.write_timeseries_csv(records, path2, self.spec)
        assert path.read_bytes() == path2.read_bytes()

    def test_empty_rejected(self, tmp_path):
        with pytest.raises(trainer.EvaluationError):
            trainer.write_timeseries_csv([], tmp_path / "x.csv", self.spec)


class TestArtifact:
    def make_artifact(self, algorithm="pg", task="constant"):
        cfg = small_cfg(algorithm=algorithm, task=task)
        spec = problem.ObservationSpec.for_task(task)
        nets = init_nets(algorithm, spec.dim, cfg.hyperparams, cfg.seed)
        return trainer.AgentArtifact.from_nets(nets, cfg, 1.23), nets

    def test_save_load_forward_bitwise(self, tmp_path):
        artifact, _ = self.make_artifact()
        path = tmp_path / "agent.best"
        trainer.save_agent(artifact, path)
        loaded = trainer.load_agent(path)
        rng = make_rng(0)
        for _ in range(100):
            x = rng.uniform(-0.5, 1.5, size=6)
            before, _ = forward(artifact.policy_net(), x)
            after, _ = forward(loaded.policy_net(), x)
            assert np.array_equal(before, after)
        assert loaded.best_mean_eval_reward == 1.23

    def test_corrupted_payload(self, tmp_path):
        artifact, _ = self.make_artifact()
        path = tmp_path / "agent.best"
        trainer.save_agent(artifact, path)
        doc = json.loads(path.read_text())
        w = doc["body"]["nets"]["actor"]["layers"][0]["w"]
        doc["body"]["nets"]["actor"]["layers"][0]["w"] = "!" + w[1:]
        path.write_text(json.dumps(doc))
        with pytest.raises(trainer.ArtifactError):
            trainer.load_agent(path)

    def test_digest_mismatch(self, tmp_path):
        artifact, _ = self.make_artifact()
        path = tmp_path / "agent.best"
        trainer.save_agent(artifact, path)
        doc = json.loads(path.read_text())
        doc["body"]["metadata"]["seed"] = 999  # edit without re-digesting
        path.write_text(json.dumps(doc))
        with pytest.raises(trainer.ArtifactError, match="digest"):
            trainer.load_agent(path)

    def test_version_mismatch(self, tmp_path):
        artifact, _ = self.make_artifact()
        path = tmp_path / "agent.best"
        trainer.save_agent(artifact, path)
        doc = json.loads(path.read_text())
        doc["format_version"] = 99
        path.write_text(json.dumps(doc))
        with pytest.raises(trainer.ArtifactError, match="version"):
            trainer.load_agent(path)

    def test_task_spec_mismatch_rejected(self, tmp_path):
        artifact, _ = self.make_artifact(task="constant")
        cfg = small_cfg(task="dynamic", tmp_path=tmp_path)
        with pytest.raises(trainer.EvaluationError, match="features"):
            trainer.evaluate(artifact, cfg)


class TestTraining:
    def test_epochs_zero_returns_initial_agent(self, tmp_path):
        cfg = small_cfg(tmp_path, epochs=0)
        result = trainer.train(cfg)
        fresh = init_nets("pg", 6, cfg.hyperparams, cfg.seed)
        assert np.array_equal(result.artifact.nets["actor"].flat(),
                              fresh.actor.flat())
        assert len(result.eval_records) == 5 * 66

    def test_bitwise_deterministic(self, tmp_path):
        r1 = trainer.train(small_cfg(tmp_path / "a", epochs=1))
        r2 = trainer.train(small_cfg(tmp_path / "b", epochs=1))
        assert np.array_equal(r1.artifact.nets["actor"].flat(),
                              r2.artifact.nets["actor"].flat())
        assert r1.log_rows == r2.log_rows
        for a, b in zip(r1.eval_records, r2.eval_records):
            assert a.reward == b.reward and a.cooling_w == b.cooling_w

    def test_checkpoint_monotonicity(self, tmp_path):
        cfg = small_cfg(tmp_path, epochs=3)
        result = trainer.train(cfg)
        evals = [r["eval_mean_episode_reward"] for r in result.log_rows]
        assert result.artifact.best_mean_eval_reward == pytest.approx(max(evals))

    def test_run_outputs(self, tmp_path):
        cfg = small_cfg(tmp_path / "run", epochs=1)
        trainer.run_training(cfg)
        for name in ("agent.best", "train_log.csv", "eval_timeseries.csv",
                     "metrics.json", "config.resolved"):
            assert (tmp_path / "run" / name).exists(), name
        metrics = json.loads((tmp_path / "run" / "metrics.json").read_text())
        assert metrics["n_steps"] == 5 * 66

    def test_off_policy_smoke(self, tmp_path):
        cfg = small_cfg(tmp_path, algorithm="dqn", epochs=1,
                        hyperparams=Hyperparams(hidden=(8,), batch_size=16,
                                                eps_decay_steps=200))
        result = trainer.train(cfg)
        assert any("critic_loss" in r for r in result.log_rows)


class TestSweep:
    def test_grid_and_ranking(self, tmp_path):
        cfg = small_cfg(tmp_path, epochs=0)
        results = trainer.sweep(cfg, {"lr_actor": [1e-3, 3e-4]})
        assert len(results) == 2
        rewards = [r["mean_eval_reward"] for r in results]
        assert rewards == sorted(rewards, reverse=True)
        assert {r["seed"] for r in results} == {cfg.seed, cfg.seed + 1}

    def test_empty_grid_single_run(self, tmp_path):
        cfg = small_cfg(tmp_path, epochs=0)
        assert len(trainer.sweep(cfg, {})) == 1

    def test_invalid_key_fails_before_running(self, tmp_path):
        cfg = small_cfg(tmp_path / "sweep", epochs=0)
        with pytest.raises(trainer.ConfigError):
            trainer.sweep(cfg, {"learning_rate": [1e-3]})
        assert not (tmp_path / "sweep").exists()
