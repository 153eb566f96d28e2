import numpy as np
import pytest

from demandgym import algorithms as alg
from demandgym import neural_core as nc
from demandgym.buffers import Experience, ReplayBuffer, RolloutBuffer


def exp(s, a, r, s2, done):
    return Experience(np.asarray(s, float), a, r, np.asarray(s2, float), done)


def random_rollout(rng, obs_dim=3, n_actions=3, n_traj=4, traj_len=5,
                   with_values=True):
    buf = RolloutBuffer()
    for _ in range(n_traj):
        length = int(rng.integers(2, traj_len + 1))
        for t in range(length):
            s = rng.normal(size=obs_dim)
            buf.add(exp(s, int(rng.integers(n_actions)), float(rng.normal()),
                        rng.normal(size=obs_dim), t == length - 1),
                    log_prob=float(rng.normal()),
                    value=float(rng.normal()) if with_values else 0.0)
    return buf


def gae_brute_force(rewards, values, dones, gamma, lam):
    """Independent oracle: explicit sum over (gamma*lam)^l delta_{t+l}."""
    n = len(rewards)
    delta = np.empty(n)
    for t in range(n):
        v_next = 0.0 if dones[t] else values[t + 1]
        delta[t] = rewards[t] + gamma * v_next - values[t]
    adv = np.zeros(n)
    for t in range(n):
        factor = 1.0
        for l in range(t, n):
            adv[t] += factor * delta[l]
            if dones[l]:
                break
            factor *= gamma * lam
    return adv


def bias_only_net(out_values, in_dim):
    """Net whose output is a constant vector regardless of input."""
    ps = nc.mlp_init([nc.LayerSpec(in_dim, len(out_values), "identity")], 0)
    ps.weights[0][:] = 0.0
    ps.biases[0][:] = np.asarray(out_values, float)
    return ps


def fd_grad_check(loss_fn, grads_list, params_list, tol=1e-6, h=1e-6):
    """Central-difference check of analytic grads over each net's flat vector."""
    worst = 0.0
    for params, grads in zip(params_list, grads_list):
        theta = params.flat()
        flat_g = np.concatenate([g.ravel() for g in grads.d_w + grads.d_b])
        fd = np.empty_like(theta)
        for i in range(theta.size):
            theta[i] += h
            params.set_flat(theta)
            up = loss_fn()
            theta[i] -= 2 * h
            params.set_flat(theta)
            down = loss_fn()
            theta[i] += h
            fd[i] = (up - down) / (2 * h)
        params.set_flat(theta)
        scale = np.maximum(np.abs(fd), 1.0)
        worst = max(worst, float(np.max(np.abs(flat_g - fd) / scale)))
    assert worst < tol, f"max relative gradient error {worst}"


class TestGAE:
    def test_hand_example(self):
        buf = RolloutBuffer()
        for i in range(3):
            buf.add(exp([0.0], 0, 1.0, [0.0], i == 2), value=0.0)
        adv, ret = alg.compute_gae(buf, gamma=0.5, lam=0.5)
        assert np.allclose(adv, [1.3125, 1.25, 1.0], atol=1e-15)
        assert np.allclose(ret, adv)

    def test_lambda_zero_is_one_step(self):
        rng = nc.make_rng(0)
        buf = random_rollout(rng)
        adv, _ = alg.compute_gae(buf, 0.9, 0.0)
        oracle = gae_brute_force(buf.rewards, buf.values + [0.0], buf.dones, 0.9, 0.0)
        assert np.allclose(adv, oracle, atol=1e-12)

    def test_lambda_one_is_discounted_return_minus_value(self):
        rng = nc.make_rng(1)
        buf = random_rollout(rng)
        adv, _ = alg.compute_gae(buf, 0.9, 1.0)
        expected = buf.discounted_returns(0.9) - np.asarray(buf.values)
        assert np.allclose(adv, expected, atol=1e-10)

    def test_matches_brute_force_1000_instances(self):
        rng = nc.make_rng(7)
        worst = 0.0
        for _ in range(1000):
            buf = random_rollout(rng, n_traj=int(rng.integers(1, 4)), traj_len=6)
            gamma = float(rng.uniform(0, 1))
            lam = float(rng.uniform(0, 1))
            adv, _ = alg.compute_gae(buf, gamma, lam)
            oracle = gae_brute_force(buf.rewards, buf.values + [0.0], buf.dones,
                                     gamma, lam)
            worst = max(worst, float(np.max(np.abs(adv - oracle))))
        assert worst < 1e-12

    def test_empty_rollout(self):
        with pytest.raises(alg.BufferError):
            alg.compute_gae(RolloutBuffer(), 0.9, 0.95)


class TestPG:
    def test_equal_returns_leave_params_unchanged(self):
        rng = nc.make_rng(2)
        hp = alg.Hyperparams(hidden=(8,))
        nets = alg.init_nets("pg", 3, hp, seed=0)
        buf = RolloutBuffer()
        for _ in range(3):  # identical one-step trajectories, equal returns
            buf.add(exp([0.1, 0.2, 0.3], 1, 1.0, [0.0] * 3, True))
        before = nets.actor.flat()
        alg.pg_update(buf, nets.actor, hp)
        assert np.array_equal(nets.actor.flat(), before)

    def test_hand_softmax_gradient(self):
        # single step, two actions, logits [0,0], a=0, coeff 1:
        # dloss/dlogits = softmax - onehot = [-0.5, +0.5]
        actor = bias_only_net([0.0, 0.0], in_dim=2)
        loss, grads, _ = alg._policy_logp_grads(actor, [[0.0, 0.0]], [0], [1.0])
        assert loss == pytest.approx(-np.log(0.5))
        assert grads.d_b[0] == pytest.approx([-0.5, 0.5])

    def test_gradient_matches_finite_differences(self):
        rng = nc.make_rng(3)
        hp = alg.Hyperparams(hidden=(4,))
        nets = alg.init_nets("pg", 3, hp, seed=1)
        buf = random_rollout(rng)
        _, grads = alg.pg_loss_grads(buf, nets.actor, hp)
        fd_grad_check(lambda: alg.pg_loss_grads(buf, nets.actor, hp)[0],
                      [grads], [nets.actor])

    def test_empty_rollout(self):
        hp = alg.Hyperparams()
        nets = alg.init_nets("pg", 3, hp, seed=0)
        with pytest.raises(alg.BufferError):
            alg.pg_update(RolloutBuffer(), nets.actor, hp)


class TestA2C:
    def make(self, seed=4):
        rng = nc.make_rng(seed)
        hp = alg.Hyperparams(hidden=(4,))
        nets = alg.init_nets("a2c", 3, hp, seed=2)
        buf = random_rollout(rng)
        alg.compute_gae(buf, hp.gamma, hp.gae_lambda)
        return hp, nets, buf

    def test_zero_advantages_leave_actor_unchanged(self):
        hp, nets, buf = self.make()
        buf.advantages = np.zeros(len(buf))
        before = nets.actor.flat()
        alg.a2c_update(buf, nets.actor, nets.critic, hp)
        assert np.array_equal(nets.actor.flat(), before)

    def test_perfect_critic_zero_loss(self):
        hp, nets, buf = self.make()
        v, _ = nc.forward_batch(nets.critic, np.asarray(buf.states))
        buf.returns = v[:, 0].copy()
        _, critic_loss, _, _ = alg.a2c_loss_grads(buf, nets.actor, nets.critic, hp)
        assert critic_loss == pytest.approx(0.0, abs=1e-15)

    def test_gradients_match_finite_differences(self):
        hp, nets, buf = self.make()
        al, cl, ag, cg = alg.a2c_loss_grads(buf, nets.actor, nets.critic, hp)
        fd_grad_check(lambda: alg.a2c_loss_grads(buf, nets.actor, nets.critic, hp)[0],
                      [ag], [nets.actor])
        fd_grad_check(lambda: alg.a2c_loss_grads(buf, nets.actor, nets.critic, hp)[1],
                      [cg], [nets.critic])

    def test_missing_advantages(self):
        hp = alg.Hyperparams()
        nets = alg.init_nets("a2c", 3, hp, seed=0)
        buf = random_rollout(nc.make_rng(0))
        with pytest.raises(alg.BufferError):
            alg.a2c_update(buf, nets.actor, nets.critic, hp)


class TestPPO:
    def crafted_case(self, ratio, adv, clip_eps=0.2):
        """Single sample with an exact importance ratio via the old log-prob."""
        actor = bias_only_net([0.3, -0.2], in_dim=2)
        critic = bias_only_net([0.0], in_dim=2)
        s = [[0.0, 0.0]]
        logits, _ = nc.forward_batch(actor, s)
        chosen = nc.log_softmax(logits)[0, 0]
        old_logp = [chosen - np.log(ratio)]
        al, _, _, _, _ = alg.ppo_minibatch_loss_grads(
            actor, critic, s, [0], old_logp, [adv], [0.0], clip_eps)
        return -al  # mean objective of the single sample

    def test_clip_positive_advantage(self):
        assert self.crafted_case(1.5, 2.0) == pytest.approx(2.4, abs=1e-12)

    def test_clip_negative_advantage(self):
        assert self.crafted_case(0.5, -1.0) == pytest.approx(-0.8, abs=1e-12)

    def test_identity_ratio_gives_advantage(self):
        assert self.crafted_case(1.0, 1.7) == pytest.approx(1.7, abs=1e-12)

    def test_gradients_match_finite_differences(self):
        rng = nc.make_rng(5)
        hp = alg.Hyperparams(hidden=(4,))
        nets = alg.init_nets("ppo", 3, hp, seed=3)
        buf = random_rollout(rng)
        alg.compute_gae(buf, hp.gamma, hp.gae_lambda)
        args = (np.asarray(buf.states), np.asarray(buf.actions, int),
                np.asarray(buf.log_probs), np.asarray(buf.advantages),
                np.asarray(buf.returns), hp.clip_eps)

        def actor_loss():
            return alg.ppo_minibatch_loss_grads(nets.actor, nets.critic, *args)[0]

        def critic_loss():
            return alg.ppo_minibatch_loss_grads(nets.actor, nets.critic, *args)[1]

        _, _, ag, cg, _ = alg.ppo_minibatch_loss_grads(nets.actor, nets.critic, *args)
        fd_grad_check(actor_loss, [ag], [nets.actor])
        fd_grad_check(critic_loss, [cg], [nets.critic])

    def test_missing_old_logp(self):
        hp = alg.Hyperparams()
        nets = alg.init_nets("ppo", 3, hp, seed=0)
        buf = RolloutBuffer()
        buf.states = [np.zeros(3)]
        buf.actions = [0]
        buf.rewards = [0.0]
        buf.dones = [True]
        buf.advantages = np.zeros(1)
        buf.returns = np.zeros(1)
        with pytest.raises(alg.BufferError):
            alg.ppo_update(buf, nets.actor, nets.critic, hp, nc.make_rng(0))


class TestDDQN:
    def batch(self, done=0.0):
        return [exp([1.0, 0.0], 0, 1.0, [0.0, 1.0], bool(done))]

    def test_double_q_target(self):
        hp = alg.Hyperparams(gamma=0.9, double_q=True)
        online = bias_only_net([0.2, 0.7], in_dim=2)
        target = bias_only_net([0.5, 0.3], in_dim=2)
        y = alg.dqn_targets(self.batch(), target, hp, online)
        assert y[0] == pytest.approx(1.27)  # argmax online = 1, eval on target

    def test_plain_max_target(self):
        hp = alg.Hyperparams(gamma=0.9, double_q=False)
        target = bias_only_net([0.5, 0.3], in_dim=2)
        y = alg.dqn_targets(self.batch(), target, hp)
        assert y[0] == pytest.approx(1.45)

    def test_terminal_bootstrap(self):
        hp = alg.Hyperparams(gamma=0.9, double_q=True)
        online = bias_only_net([0.2, 0.7], in_dim=2)
        target = bias_only_net([0.5, 0.3], in_dim=2)
        y = alg.dqn_targets(self.batch(done=1.0), target, hp, online)
        assert y[0] == pytest.approx(1.0)

    def test_insufficient_samples_defer(self):
        hp = alg.Hyperparams(batch_size=4)
        nets = alg.init_nets("dqn", 2, hp, seed=0, n_actions=2)
        replay = ReplayBuffer(10)
        replay.push(self.batch()[0])
        out = alg.ddqn_update(replay, nets.critic, nets.target_critic, hp, nc.make_rng(0))
        assert out is None

    def test_gradient_matches_finite_differences(self):
        # plain-max targets so the target is independent of the online net
        rng = nc.make_rng(6)
        hp = alg.Hyperparams(hidden=(4,), double_q=False)
        nets = alg.init_nets("dqn", 3, hp, seed=4)
        batch = [exp(rng.normal(size=3), int(rng.integers(3)), float(rng.normal()),
                     rng.normal(size=3), bool(rng.integers(2))) for _ in range(8)]
        _, grads = alg.ddqn_loss_grads(batch, nets.critic, nets.target_critic, hp)
        fd_grad_check(
            lambda: alg.ddqn_loss_grads(batch, nets.critic, nets.target_critic, hp)[0],
            [grads], [nets.critic])

    def test_chain_mdp_converges_to_value_iteration(self):
        # 3-state deterministic chain; independent value-iteration oracle
        gamma = 0.9
        n_states, n_actions = 3, 2

        def transition(s, a):
            s2 = min(s + 1, n_states - 1) if a == 1 else max(s - 1, 0)
            reward = {0: -0.1, 1: 0.2, 2: 1.0}[s2]
            return s2, reward

        q_star = np.zeros((n_states, n_actions))
        for _ in range(2000):  # value iteration oracle
            q_new = np.empty_like(q_star)
            for s in range(n_states):
                for a in range(n_actions):
                    s2, r = transition(s, a)
                    q_new[s, a] = r + gamma * q_star[s2].max()
            if np.max(np.abs(q_new - q_star)) < 1e-12:
                q_star = q_new
                break
            q_star = q_new

        hp = alg.Hyperparams(gamma=gamma, hidden=(32, 32), lr_critic=3e-3,
                             target_tau=0.01, batch_size=32, double_q=True)
        nets = alg.init_nets("dqn", n_states, hp, seed=5, n_actions=n_actions)
        rng = nc.make_rng(8)
        replay = ReplayBuffer(5000)
        eye = np.eye(n_states)
        s = 0
        for _ in range(3000):
            a = int(rng.integers(n_actions))
            s2, r = transition(s, a)
            replay.push(Experience(eye[s], a, r, eye[s2], False))
            s = s2

        def max_err():
            q, _ = nc.forward_batch(nets.critic, eye)
            return float(np.max(np.abs(q - q_star)))

        for i in range(20_000):
            alg.ddqn_update(replay, nets.critic, nets.target_critic, hp, rng)
            if i % 500 == 499 and max_err() < 1e-2:
                break
        assert max_err() < 1e-2


class TestTD3:
    def test_smooth_action_double_clip(self):
        hp = alg.Hyperparams(noise_clip=0.2, a_low=-0.5, a_high=0.5)
        a = alg.td3_smooth_action(np.array([0.3]), np.array([0.35]), hp)
        assert a[0] == pytest.approx(0.5)  # noise clipped to 0.2, sum clipped to 0.5

    def test_min_critic_target(self):
        hp = alg.Hyperparams(gamma=0.9, policy_noise=0.0)
        nets = alg.AlgoNets("td3", 2)
        nets.target_actor = bias_only_net([0.0], in_dim=2)
        nets.target_critic = bias_only_net([2.0], in_dim=3)
        nets.target_critic2 = bias_only_net([1.5], in_dim=3)
        batch = [exp([0.0, 0.0], 0.1, 0.0, [0.0, 0.0], False)]
        y = alg.td3_critic_targets(batch, nets, hp, nc.make_rng(0))
        assert y[0] == pytest.approx(1.35)

    def test_delayed_actor_update(self):
        hp = alg.Hyperparams(hidden=(4,), policy_delay=2, batch_size=2)
        nets = alg.init_nets("td3", 2, hp, seed=6)
        replay = ReplayBuffer(100)
        rng = nc.make_rng(9)
        for _ in range(10):
            replay.push(exp(rng.normal(size=2), float(rng.uniform(-0.5, 0.5)),
                            float(rng.normal()), rng.normal(size=2), False))
        actor_before = nets.actor.flat()
        target_before = nets.target_critic.flat()
        out = alg.td3_update(replay, nets, hp, rng, step_counter=1)  # not divisible
        assert "actor_loss" not in out
        assert np.array_equal(nets.actor.flat(), actor_before)
        assert np.array_equal(nets.target_critic.flat(), target_before)
        out = alg.td3_update(replay, nets, hp, rng, step_counter=2)
        assert "actor_loss" in out
        assert not np.array_equal(nets.actor.flat(), actor_before)

    def test_actor_gradient_matches_finite_differences(self):
        hp = alg.Hyperparams(hidden=(4,))
        nets = alg.init_nets("td3", 3, hp, seed=7)
        rng = nc.make_rng(10)
        states = rng.normal(size=(6, 3))
        _, grads = alg.td3_actor_loss_grads(nets, states, hp)
        fd_grad_check(lambda: alg.td3_actor_loss_grads(nets, states, hp)[0],
                      [grads], [nets.actor])

    def test_critic_regression_gradient_matches_fd(self):
        hp = alg.Hyperparams(hidden=(4,))
        nets = alg.init_nets("td3", 2, hp, seed=8)
        rng = nc.make_rng(11)
        sa = rng.normal(size=(5, 3))
        y = rng.normal(size=5)
        _, grads, _ = alg._value_grads(nets.critic, sa, y)
        fd_grad_check(lambda: alg._value_grads(nets.critic, sa, y)[0],
                      [grads], [nets.critic])

    def test_regression_control_task(self):
        # 1-D tracking task r = -(a - 0.8 s)^2, s ~ U(-0.5, 0.5)
        hp = alg.Hyperparams(hidden=(32, 32), lr_actor=1e-3, lr_critic=1e-3,
                             batch_size=64, gamma=0.0, exploration_noise=0.2,
                             policy_noise=0.1, target_tau=0.01)
        nets = alg.init_nets("td3", 1, hp, seed=9)
        rng = nc.make_rng(12)
        replay = ReplayBuffer(20_000)

        def eval_reward():
            s = np.linspace(-0.5, 0.5, 101)[:, None]
            a, _, _ = alg.td3_action(nets.actor, s, hp)
            return float(np.mean(-(a - 0.8 * s[:, 0]) ** 2))

        ok = False
        for step in range(1, 50_001):
            s = float(rng.uniform(-0.5, 0.5))
            a, _ = alg.select_action("td3", nets, np.array([s]), rng, "train", hp)
            r = -(a - 0.8 * s) ** 2
            replay.push(exp([s], a, r, [rng.uniform(-0.5, 0.5)], False))
            alg.td3_update(replay, nets, hp, rng, step)
            if step % 1000 == 0 and eval_reward() > -0.01:
                ok = True
                break
        assert ok or eval_reward() > -0.01


class TestSelectAction:
    def test_unknown_algorithm(self):
        hp = alg.Hyperparams()
        with pytest.raises(alg.ConfigError):
            alg.select_action("sac", alg.AlgoNets("td3", 2), np.zeros(2),
                              nc.make_rng(0), "train", hp)

    def test_dqn_full_exploration_uniform(self):
        hp = alg.Hyperparams(eps_start=1.0, eps_end=1.0)
        nets = alg.init_nets("dqn", 2, hp, seed=10)
        rng = nc.make_rng(13)
        counts = np.zeros(3)
        n = 10_000
        for _ in range(n):
            a, info = alg.select_action("dqn", nets, np.zeros(2), rng, "train", hp, 0)
            counts[a] += 1
        chi2 = float(np.sum((counts - n / 3) ** 2 / (n / 3)))
        assert chi2 < 9.21  # chi-square critical value, df=2, p=0.01

    def test_dqn_eval_argmax(self):
        hp = alg.Hyperparams()
        nets = alg.init_nets("dqn", 2, hp, seed=0)
        nets.critic = bias_only_net([0.1, 0.9, 0.3], in_dim=2)
        a, _ = alg.select_action("dqn", nets, np.zeros(2), nc.make_rng(0), "eval", hp)
        assert a == 1

    def test_td3_eval_center(self):
        hp = alg.Hyperparams()
        nets = alg.init_nets("td3", 2, hp, seed=0)
        nets.actor = bias_only_net([0.0], in_dim=2)
        a, _ = alg.select_action("td3", nets, np.zeros(2), nc.make_rng(0), "eval", hp)
        assert a == 0.0

    def test_epsilon_decay(self):
        hp = alg.Hyperparams(eps_start=1.0, eps_end=0.05, eps_decay_steps=100)
        assert alg.epsilon_at(hp, 0) == 1.0
        assert alg.epsilon_at(hp, 50) == pytest.approx(0.525)
        assert alg.epsilon_at(hp, 100) == 0.05
        assert alg.epsilon_at(hp, 1000) == 0.05


class TestReplay:
    def test_ring_semantics(self):
        buf = ReplayBuffer(3)
        items = [exp([float(i)], 0, 0.0, [0.0], False) for i in range(4)]
        for it in items:
            buf.push(it)
        stored = sorted(e.s[0] for e in buf._data)
        assert stored == [1.0, 2.0, 3.0]

    def test_sample_all_distinct(self):
        buf = ReplayBuffer(5)
        for i in range(5):
            buf.push(exp([float(i)], 0, 0.0, [0.0], False))
        batch = buf.sample(5, nc.make_rng(0))
        assert sorted(e.s[0] for e in batch) == [0.0, 1.0, 2.0, 3.0, 4.0]

    def test_deterministic_given_seed(self):
        buf = ReplayBuffer(10)
        for i in range(10):
            buf.push(exp([float(i)], 0, 0.0, [0.0], False))
        a = [e.s[0] for e in buf.sample(4, nc.make_rng(3))]
        b = [e.s[0] for e in buf.sample(4, nc.make_rng(3))]
        assert a == b

    def test_zero_capacity_rejected(self):
        with pytest.raises(alg.BufferError):
            ReplayBuffer(0)
