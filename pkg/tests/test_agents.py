import itertools
import math

import numpy as np
import pytest

from irsvlc.agents import (
    DdpgAgent,
    DdpgConfig,
    DqlAgent,
    DqlConfig,
    ExhaustivePolicy,
    RandomOrientationAgent,
    SearchBudgetError,
    angle_grid,
    ddpg_select_action,
    ddpg_update,
    dql_select,
    dql_train,
    exhaustive_search,
    quantized_levels,
    random_orientation_policy,
    train,
)
from irsvlc.env import EnvConfig, IrsVlcEnv
from irsvlc.neural import Batch, Mlp, Transition
from irsvlc.scene import ConfigError, MirrorArrayConfig, build_scene
from scenarios import ONE_MIRROR_SCENE, frozen_env


def random_batch(rng, obs_dim, act_dim, n=32, done=False):
    return Batch(
        rng.uniform(-1, 1, (n, obs_dim)),
        rng.uniform(-1, 1, (n, act_dim)),
        rng.normal(size=n),
        rng.uniform(-1, 1, (n, obs_dim)),
        np.full(n, done),
    )


class TestDdpgActing:
    def test_exploit_deterministic(self):
        agent = DdpgAgent(6, 4, seed=0)
        s = np.linspace(-1, 1, 6)
        assert np.array_equal(agent.act(s), agent.act(s))
        assert np.array_equal(ddpg_select_action(agent, s, False, None), agent.act(s))

    def test_zero_noise_matches_exploit(self):
        agent = DdpgAgent(6, 4, seed=0)
        agent.noise_scale = 0.0
        s = np.zeros(6)
        assert np.array_equal(agent.act(s, True, np.random.default_rng(0)), agent.act(s))

    def test_large_noise_is_clamped(self):
        agent = DdpgAgent(6, 4, seed=0)
        agent.noise_scale = 10.0
        rng = np.random.default_rng(0)
        for _ in range(100):
            a = agent.act(np.zeros(6), True, rng)
            assert np.all(np.abs(a) <= 1.0)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            DdpgAgent(6, 4).act(np.zeros(5))

    def test_architecture(self):
        agent = DdpgAgent(10, 4)
        assert agent.actor.sizes == [10, 128, 64, 4]
        assert agent.actor.activations == ["relu", "relu", "tanh"]
        assert agent.critic.sizes == [14, 256, 128, 1]
        assert agent.critic.activations[-1] == "identity"
        assert agent.actor_target.same_architecture(agent.actor)
        assert agent.critic_target.same_architecture(agent.critic)

    def test_noise_schedule(self):
        agent = DdpgAgent(3, 2, DdpgConfig(noise_initial=0.995, noise_decay=0.5, noise_final=1e-4))
        for _ in range(40):
            agent.end_episode()
        assert agent.noise_scale == 1e-4

    def test_config_rejects_unknown(self):
        with pytest.raises(ConfigError):
            DdpgConfig.from_dict({"actor_lr": 1e-3, "alpha": 0.05})


class TestDdpgUpdate:
    def test_gamma_zero_target_is_reward(self):
        rng = np.random.default_rng(0)
        agent = DdpgAgent(5, 2, DdpgConfig(gamma=0.0), seed=1)
        batch = random_batch(rng, 5, 2)
        q = agent.critic.predict(np.hstack([batch.states, batch.actions]))[:, 0]
        loss, _ = ddpg_update(agent, batch)
        assert loss == pytest.approx(np.mean((q - batch.rewards) ** 2), rel=1e-14)

    def test_terminal_mask(self):
        rng = np.random.default_rng(0)
        agent = DdpgAgent(5, 2, DdpgConfig(gamma=0.9), seed=1)
        batch = random_batch(rng, 5, 2, done=True)
        q = agent.critic.predict(np.hstack([batch.states, batch.actions]))[:, 0]
        assert agent.critic_step(batch) == pytest.approx(np.mean((q - batch.rewards) ** 2), rel=1e-14)

    def test_fixed_transition_converges_to_reward(self):
        agent = DdpgAgent(4, 2, seed=2)
        s = np.array([0.1, -0.3, 0.5, 0.2])
        a = np.array([0.4, -0.7])
        n = agent.config.batch_size
        batch = Batch(np.tile(s, (n, 1)), np.tile(a, (n, 1)), np.full(n, 1.7), np.tile(s, (n, 1)),
                      np.ones(n, dtype=bool))
        for _ in range(300):
            ddpg_update(agent, batch)
        q = agent.critic.predict(np.concatenate([s, a]))[0]
        assert abs(q - 1.7) < 1e-3

    def test_actor_gradient_through_linear_critic(self):
        rng = np.random.default_rng(3)
        obs, act = 5, 3
        agent = DdpgAgent(obs, act, DdpgConfig(actor_hidden=(8, 6), critic_hidden=()), seed=3)
        c = rng.normal(size=act)
        agent.critic.weights[0][...] = 0.0
        agent.critic.weights[0][obs:, 0] = c
        agent.critic.biases[0][...] = 0.0
        states = rng.uniform(-1, 1, (7, obs))
        grads, objective = agent.actor_gradients(states)
        # objective J = mean_i c . mu(s_i); descent gradients are -dJ/dtheta
        J = lambda: float(np.mean(agent.actor.predict(states) @ c))
        assert objective == pytest.approx(J(), rel=1e-12)
        h = 1e-6
        for p, g in zip(agent.actor.params, grads):
            flat, gf = p.reshape(-1), g.reshape(-1)
            fd = np.empty(flat.size)
            for i in range(flat.size):
                old = flat[i]
                flat[i] = old + h
                up = J()
                flat[i] = old - h
                down = J()
                flat[i] = old
                fd[i] = (up - down) / (2 * h)
            err = np.linalg.norm(-gf - fd) / max(np.linalg.norm(fd), 1e-12)
            assert err < 1e-4

    def test_critic_loss_nonincreasing_small_lr(self):
        rng = np.random.default_rng(4)
        agent = DdpgAgent(6, 2, DdpgConfig(critic_lr=1e-4), seed=4)
        batch = random_batch(rng, 6, 2)
        losses = [agent.critic_step(batch) for _ in range(11)]
        assert all(b <= a for a, b in zip(losses, losses[1:]))

    def test_underfilled_minibatch(self):
        agent = DdpgAgent(3, 2)
        with pytest.raises(RuntimeError):
            ddpg_update(agent, random_batch(np.random.default_rng(0), 3, 2, n=5))

    def test_observe_waits_for_batch(self):
        agent = DdpgAgent(3, 2, DdpgConfig(batch_size=4))
        rng = np.random.default_rng(0)
        tr = Transition(np.zeros(3), np.zeros(2), 1.0, np.zeros(3), False)
        results = [agent.observe(tr, rng) for _ in range(5)]
        assert results[:3] == [None] * 3 and results[3] is not None

    def test_checkpoint_roundtrip(self, tmp_path):
        agent = DdpgAgent(4, 2, seed=5)
        agent.noise_scale = 0.3
        agent.save(tmp_path / "a.npz")
        back = DdpgAgent.load(tmp_path / "a.npz")
        s = np.array([0.1, 0.2, -0.3, 0.4])
        assert np.array_equal(agent.act(s), back.act(s))
        assert back.noise_scale == 0.3 and back.config == agent.config


class TestTrain:
    def test_zero_episodes(self):
        env = frozen_env()
        rep = train(DdpgAgent(env.obs_dim, env.action_dim), env, 0, np.random.default_rng(0))
        assert len(rep) == 0 and rep.rows() == []

    def test_report_lengths_and_columns(self):
        env = frozen_env()
        rep = train(DdpgAgent(env.obs_dim, env.action_dim), env, 3, np.random.default_rng(0))
        assert len(rep.sum_rate) == len(rep.reward) == len(rep.critic_loss) == len(rep.decision_latency) == 3
        assert list(rep.rows()[0]) == ["episode", "sum_rate_bps", "reward", "critic_loss", "qos_violations"]
        assert list(rep.rows(True)[0])[-1] == "decision_latency_s"

    def test_bit_identical_with_seed(self):
        def run():
            env = IrsVlcEnv(build_scene(), EnvConfig(num_users=2, blockage_count=1, max_steps=10), seed=0)
            agent = DdpgAgent(env.obs_dim, env.action_dim, seed=0)
            rep = train(agent, env, 4, np.random.default_rng(0))
            return rep.rows(), b"".join(p.tobytes() for p in agent.actor.params)

        a, b = run(), run()
        assert a[1] == b[1]
        assert repr(a[0]) == repr(b[0])

    def test_actions_legal(self):
        env = IrsVlcEnv(build_scene(), EnvConfig(num_users=2, blockage_count=2, max_steps=20), seed=1)
        train(DdpgAgent(env.obs_dim, env.action_dim, seed=1), env, 5, np.random.default_rng(1))
        assert env.actions_applied > 0 and env.angle_violations == 0


@pytest.fixture(scope="module")
def trained_ddpg():
    env = frozen_env(seed=0)
    agent = DdpgAgent(env.obs_dim, env.action_dim, seed=0)
    train(agent, env, 300, np.random.default_rng(0))
    env.reset(0)
    return agent, env


class TestFrozenScene:
    def test_ddpg_near_grid_optimum(self, trained_ddpg):
        agent, env = trained_ddpg
        _, best = exhaustive_search(env, 50)
        yaw, roll = env.action_to_angles(agent.act(env.observation()))
        assert env.sum_rate_for_angles(yaw, roll) >= 0.95 * best

    def test_dql_quantisation_gap(self, trained_ddpg):
        agent, env = trained_ddpg
        ddpg_rate = env.sum_rate_for_angles(*env.action_to_angles(agent.act(env.observation())))
        denv = frozen_env(seed=0)
        dql = DqlAgent(denv.obs_dim, denv.action_dim, DqlConfig(levels=5), seed=0)
        dql_train(dql, denv, 100, np.random.default_rng(0))
        denv.reset(0)
        dql_rate = denv.sum_rate_for_angles(*denv.action_to_angles(dql.act(denv.observation())))
        _, grid5_best = exhaustive_search(denv, 5)
        assert dql_rate <= grid5_best + 1e-6
        assert dql_rate <= ddpg_rate


class TestDql:
    def test_levels(self):
        assert quantized_levels(1).tolist() == [0.0]
        assert quantized_levels(5).tolist() == [-1.0, -0.5, 0.0, 0.5, 1.0]
        with pytest.raises(ValueError):
            quantized_levels(0)

    def test_single_level_fixed_rate(self):
        env = frozen_env()
        agent = DqlAgent(env.obs_dim, env.action_dim, DqlConfig(levels=1, batch_size=4))
        rep = dql_train(agent, env, 5, np.random.default_rng(0))
        fixed = env.sum_rate_for_angles(np.zeros(1), np.zeros(1))
        assert all(r == pytest.approx(fixed, rel=1e-12) for r in rep.sum_rate)

    def test_epsilon_one_uniform(self):
        agent = DqlAgent(3, 4, DqlConfig(levels=5, eps_initial=1.0))
        rng = np.random.default_rng(0)
        acts = np.array([agent.act(np.zeros(3), True, rng) for _ in range(5000)])
        idx = agent.action_indices(acts).ravel()
        counts = np.bincount(idx, minlength=5) / idx.size
        assert np.allclose(counts, 0.2, atol=0.01)

    def test_greedy_is_per_head_argmax(self):
        agent = DqlAgent(3, 2, DqlConfig(levels=3))
        s = np.array([0.2, -0.1, 0.4])
        q = agent.q.predict(s).reshape(2, 3)
        assert np.array_equal(dql_select(agent, s, False, None), agent.levels[q.argmax(axis=1)])

    def test_update_reduces_loss_on_fixed_batch(self):
        rng = np.random.default_rng(1)
        agent = DqlAgent(4, 2, DqlConfig(levels=3, gamma=0.0))
        batch = random_batch(rng, 4, 2)
        batch.actions = quantized_levels(3)[rng.integers(0, 3, (32, 2))]
        first = agent.update(batch)
        for _ in range(200):
            last = agent.update(batch)
        assert last < first

    def test_checkpoint_roundtrip(self, tmp_path):
        agent = DqlAgent(4, 2, seed=1)
        agent.save(tmp_path / "q.npz")
        back = DqlAgent.load(tmp_path / "q.npz")
        s = np.array([0.3, 0.1, 0.0, -0.5])
        assert np.array_equal(agent.act(s), back.act(s))


class TestRandomOrientation:
    def test_length_and_seed(self):
        a = random_orientation_policy(9, np.random.default_rng(3))
        b = random_orientation_policy(9, np.random.default_rng(3))
        assert a.shape == (18,) and np.array_equal(a, b)

    def test_uniform_histogram(self):
        angles = random_orientation_policy(50_000, np.random.default_rng(0)) * math.pi / 2
        counts, _ = np.histogram(angles, bins=10, range=(-math.pi / 2, math.pi / 2))
        assert np.all(np.abs(counts / 10_000 - 1) < 0.05)

    def test_static_through_episode(self):
        agent = RandomOrientationAgent(4)
        agent.begin_episode(np.random.default_rng(0))
        first = agent.act(None)
        assert all(np.array_equal(first, agent.act(None)) for _ in range(5))


class TestExhaustiveSearch:
    def test_single_level(self):
        env = frozen_env()
        action, rate = exhaustive_search(env, 1)
        assert action.tolist() == [0.0, 0.0]
        assert rate == env.sum_rate_for_angles([0.0], [0.0])

    def test_symmetric_users(self):
        cfg = EnvConfig(num_users=2, fixed_users=((1.75, 3.0), (3.25, 3.0)), terminate_on_qos=False)
        env = IrsVlcEnv(ONE_MIRROR_SCENE, cfg, seed=0)
        env.reset(0)
        action, rate = exhaustive_search(env, 21)
        yaw, roll = action * math.pi / 2
        mirrored = env.sum_rate_for_angles([-yaw], [roll])
        assert mirrored == pytest.approx(rate, rel=1e-12)
        # lexicographic tie-break keeps the non-positive yaw
        assert yaw <= 1e-12

    def test_matches_nested_loops(self):
        scene = build_scene(mirrors=MirrorArrayConfig(rows=1, cols=2))
        cfg = EnvConfig(num_users=2, fixed_users=((1.0, 4.0), (3.5, 3.5)), fixed_blockages=((1.3, 3.5),),
                        terminate_on_qos=False)
        env = IrsVlcEnv(scene, cfg, seed=0)
        env.reset(0)
        grid = angle_grid(5)
        best, best_angles = -1.0, None
        for y0 in grid:
            for y1 in grid:
                for r0 in grid:
                    for r1 in grid:
                        rate = env.sum_rate_for_angles([y0, y1], [r0, r1])
                        if rate > best:
                            best, best_angles = rate, (y0, y1, r0, r1)
        action, rate = exhaustive_search(env, 5)
        assert rate == best
        assert np.array_equal(action * math.pi / 2, np.array(best_angles))

    def test_enumeration_order_invariant(self):
        env = frozen_env()
        grid = angle_grid(9)
        combos = np.array(list(itertools.product(range(9), repeat=2)))
        perm = np.random.default_rng(0).permutation(len(combos))
        rates = env.sum_rates_batch(grid[combos[perm, :1]], grid[combos[perm, 1:]])
        _, best = exhaustive_search(env, 9)
        assert rates.max() == best

    def test_budget_refusal(self):
        env = IrsVlcEnv(build_scene(), EnvConfig(num_users=1), seed=0)
        env.reset(0)
        with pytest.raises(SearchBudgetError, match="387420489"):
            exhaustive_search(env, 3, budget=1000)

    def test_policy_wrapper(self):
        env = frozen_env()
        pol = ExhaustivePolicy(env, 7)
        assert np.array_equal(pol.act(None), exhaustive_search(env, 7)[0])
