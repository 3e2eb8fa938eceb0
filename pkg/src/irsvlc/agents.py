"""Mirror-orientation agents: DDPG actor-critic, quantised deep Q-learning,
random fixed orientation and grid exhaustive search."""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .env import IrsVlcEnv
from .neural import (
    AdamState,
    Batch,
    Mlp,
    ReplayBuffer,
    Transition,
    adam_step,
    load_networks,
    save_networks,
    soft_update,
)


def _from_dict(cls, data, section):
    from .scene import ConfigError

    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{section}.{sorted(unknown)[0]}", "unknown key")
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    return cls(**kw)


@dataclass(frozen=True)
class DdpgConfig:
    actor_hidden: tuple[int, ...] = (128, 64)
    critic_hidden: tuple[int, ...] = (256, 128)
    actor_lr: float = 1e-3
    critic_lr: float = 1e-2
    gamma: float = 0.9
    tau: float = 0.01
    buffer_size: int = 10_000
    batch_size: int = 32
    # Gaussian action-noise std, decayed multiplicatively once per episode
    noise_initial: float = 0.995
    noise_final: float = 1e-4
    noise_decay: float = 0.99

    @classmethod
    def from_dict(cls, data) -> "DdpgConfig":
        return _from_dict(cls, data, "ddpg")


@dataclass(frozen=True)
class DqlConfig:
    levels: int = 5
    hidden: tuple[int, ...] = (256, 128)
    lr: float = 1e-3
    gamma: float = 0.9
    tau: float = 0.01
    buffer_size: int = 10_000
    batch_size: int = 32
    eps_initial: float = 0.995
    eps_final: float = 1e-4
    eps_decay: float = 0.99

    @classmethod
    def from_dict(cls, data) -> "DqlConfig":
        return _from_dict(cls, data, "dql")


# --------------------------------------------------------------------------- DDPG


class DdpgAgent:
    """Deterministic policy-gradient actor-critic with target networks."""

    kind = "ddpg"

    def __init__(self, obs_dim: int, action_dim: int, config: DdpgConfig | None = None, seed: int = 0):
        self.config = cfg = config or DdpgConfig()
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        rng = np.random.default_rng(seed)
        n_hidden = len(cfg.actor_hidden)
        self.actor = Mlp([obs_dim, *cfg.actor_hidden, action_dim], ["relu"] * n_hidden + ["tanh"], rng)
        n_hidden = len(cfg.critic_hidden)
        self.critic = Mlp([obs_dim + action_dim, *cfg.critic_hidden, 1], ["relu"] * n_hidden + ["identity"], rng)
        self.actor_target = self.actor.copy()
        self.critic_target = self.critic.copy()
        self.actor_opt = AdamState(lr=cfg.actor_lr)
        self.critic_opt = AdamState(lr=cfg.critic_lr)
        self.buffer = ReplayBuffer(cfg.buffer_size)
        self.noise_scale = cfg.noise_initial

    def begin_episode(self, rng=None):
        pass

    def end_episode(self):
        cfg = self.config
        self.noise_scale = max(cfg.noise_final, self.noise_scale * cfg.noise_decay)

    def act(self, state, explore: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
        state = np.asarray(state, dtype=float)
        if state.shape != (self.obs_dim,):
            raise ValueError(f"state must have length {self.obs_dim}, got shape {state.shape}")
        a = self.actor.predict(state)
        if explore and self.noise_scale > 0:
            a = a + rng.normal(0.0, self.noise_scale, size=a.shape)
        return np.clip(a, -1.0, 1.0)

    def critic_step(self, batch: Batch) -> float:
        """One Adam step of the critic toward the bootstrapped Bellman targets."""
        cfg = self.config
        a2 = self.actor_target.predict(batch.next_states)
        q2 = self.critic_target.predict(np.hstack([batch.next_states, a2]))[:, 0]
        y = batch.rewards + cfg.gamma * (~batch.dones) * q2
        x = np.hstack([batch.states, batch.actions])
        q = self.critic.forward(x)[:, 0]
        err = q - y
        grads, _ = self.critic.backward(x, (2.0 * err / len(err))[:, None])
        adam_step(self.critic.params, grads, self.critic_opt)
        return float(np.mean(err**2))

    def actor_gradients(self, states):
        """Policy-gradient parameter gradients (for descent) and the mean Q."""
        n = len(states)
        mu = self.actor.forward(states)
        x = np.hstack([states, mu])
        q = self.critic.forward(x)
        _, g_in = self.critic.backward(x, np.full((n, 1), -1.0 / n))
        grads, _ = self.actor.backward(states, g_in[:, self.obs_dim :])
        return grads, float(q.mean())

    def update(self, batch: Batch) -> tuple[float, float]:
        loss = self.critic_step(batch)
        grads, objective = self.actor_gradients(batch.states)
        adam_step(self.actor.params, grads, self.actor_opt)
        soft_update(self.critic_target, self.critic, self.config.tau)
        soft_update(self.actor_target, self.actor, self.config.tau)
        return loss, objective

    def observe(self, tr: Transition, rng: np.random.Generator):
        self.buffer.push(tr)
        if len(self.buffer) < self.config.batch_size:
            return None
        return self.update(self.buffer.sample(self.config.batch_size, rng))

    def save(self, path) -> None:
        header = {"kind": self.kind, "obs_dim": self.obs_dim, "action_dim": self.action_dim,
                  "config": asdict(self.config), "noise_scale": self.noise_scale}
        save_networks(path, {"actor": self.actor, "critic": self.critic,
                             "actor_target": self.actor_target, "critic_target": self.critic_target}, header)

    @classmethod
    def load(cls, path) -> "DdpgAgent":
        nets, header = load_networks(path)
        cfg = DdpgConfig.from_dict(header["config"])
        agent = cls(header["obs_dim"], header["action_dim"], cfg)
        agent.actor, agent.critic = nets["actor"], nets["critic"]
        agent.actor_target, agent.critic_target = nets["actor_target"], nets["critic_target"]
        agent.noise_scale = header["noise_scale"]
        return agent


def ddpg_select_action(agent: DdpgAgent, state, explore: bool, rng) -> np.ndarray:
    return agent.act(state, explore, rng)


def ddpg_update(agent: DdpgAgent, minibatch: Batch) -> tuple[float, float]:
    if len(minibatch) < agent.config.batch_size:
        raise RuntimeError(f"minibatch of {len(minibatch)} is smaller than batch size {agent.config.batch_size}")
    return agent.update(minibatch)


# --------------------------------------------------------------------------- DQL


def quantized_levels(levels: int) -> np.ndarray:
    """Normalised action values for ``levels`` equally spaced angles."""
    if levels < 1:
        raise ValueError("need at least one quantisation level")
    if levels == 1:
        return np.zeros(1)
    return np.linspace(-1.0, 1.0, levels)


class DqlAgent:
    """Deep Q-learning over quantised angles with one L-way head per angle."""

    kind = "dql"

    def __init__(self, obs_dim: int, action_dim: int, config: DqlConfig | None = None, seed: int = 0):
        self.config = cfg = config or DqlConfig()
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.levels = quantized_levels(cfg.levels)
        rng = np.random.default_rng(seed)
        n_hidden = len(cfg.hidden)
        self.q = Mlp([obs_dim, *cfg.hidden, action_dim * cfg.levels], ["relu"] * n_hidden + ["identity"], rng)
        self.q_target = self.q.copy()
        self.opt = AdamState(lr=cfg.lr)
        self.buffer = ReplayBuffer(cfg.buffer_size)
        self.epsilon = cfg.eps_initial

    def begin_episode(self, rng=None):
        pass

    def end_episode(self):
        cfg = self.config
        self.epsilon = max(cfg.eps_final, self.epsilon * cfg.eps_decay)

    def _heads(self, out):
        return out.reshape(*out.shape[:-1], self.action_dim, self.config.levels)

    def greedy_indices(self, state) -> np.ndarray:
        return np.argmax(self._heads(self.q.predict(np.asarray(state, dtype=float))), axis=-1)

    def act(self, state, explore: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
        state = np.asarray(state, dtype=float)
        if state.shape != (self.obs_dim,):
            raise ValueError(f"state must have length {self.obs_dim}, got shape {state.shape}")
        if explore and rng.random() < self.epsilon:
            idx = rng.integers(0, self.config.levels, size=self.action_dim)
        else:
            idx = self.greedy_indices(state)
        return self.levels[idx]

    def action_indices(self, actions) -> np.ndarray:
        n = self.config.levels
        if n == 1:
            return np.zeros(np.shape(actions), dtype=int)
        return np.rint((np.asarray(actions) + 1.0) / 2.0 * (n - 1)).astype(int)

    def update(self, batch: Batch) -> float:
        cfg = self.config
        n, heads = len(batch), self.action_dim
        q_next = self._heads(self.q_target.predict(batch.next_states)).max(axis=-1)
        y = batch.rewards[:, None] + cfg.gamma * (~batch.dones)[:, None] * q_next
        out = self.q.forward(batch.states)
        q = self._heads(out)
        idx = self.action_indices(batch.actions)
        rows = np.arange(n)[:, None]
        cols = np.arange(heads)[None, :]
        err = q[rows, cols, idx] - y
        g = np.zeros_like(q)
        g[rows, cols, idx] = 2.0 * err / (n * heads)
        grads, _ = self.q.backward(batch.states, g.reshape(out.shape))
        adam_step(self.q.params, grads, self.opt)
        soft_update(self.q_target, self.q, cfg.tau)
        return float(np.mean(err**2))

    def observe(self, tr: Transition, rng: np.random.Generator):
        self.buffer.push(tr)
        if len(self.buffer) < self.config.batch_size:
            return None
        return self.update(self.buffer.sample(self.config.batch_size, rng)), float("nan")

    def save(self, path) -> None:
        header = {"kind": self.kind, "obs_dim": self.obs_dim, "action_dim": self.action_dim,
                  "config": asdict(self.config), "epsilon": self.epsilon}
        save_networks(path, {"q": self.q, "q_target": self.q_target}, header)

    @classmethod
    def load(cls, path) -> "DqlAgent":
        nets, header = load_networks(path)
        agent = cls(header["obs_dim"], header["action_dim"], DqlConfig.from_dict(header["config"]))
        agent.q, agent.q_target = nets["q"], nets["q_target"]
        agent.epsilon = header["epsilon"]
        return agent


# --------------------------------------------------------------------------- baselines


def random_orientation_policy(num_mirrors: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random yaw/roll for every mirror, as a normalised action."""
    return rng.uniform(-1.0, 1.0, size=2 * num_mirrors)


class RandomOrientationAgent:
    """Draws one random orientation per episode and holds it."""

    kind = "random"

    def __init__(self, num_mirrors: int):
        self.num_mirrors = num_mirrors
        self.action = np.zeros(2 * num_mirrors)

    def begin_episode(self, rng):
        self.action = random_orientation_policy(self.num_mirrors, rng)

    def end_episode(self):
        pass

    def act(self, state, explore=False, rng=None):
        return self.action.copy()

    def observe(self, tr, rng):
        return None


def angle_grid(levels: int) -> np.ndarray:
    if levels < 1:
        raise ValueError("need at least one grid level")
    if levels == 1:
        return np.zeros(1)
    return np.linspace(-math.pi / 2, math.pi / 2, levels)


class SearchBudgetError(ValueError):
    pass


def exhaustive_search(env: IrsVlcEnv, grid_levels: int, budget: int = 1_000_000,
                      chunk: int = 4096) -> tuple[np.ndarray, float]:
    """Best grid orientation for the env's current (frozen) users and blockages.

    Grid points are visited in lexicographic order over
    ``(yaw_0..yaw_{M-1}, roll_0..roll_{M-1})``; the first maximum wins ties.
    Returns the normalised action and its sum rate.
    """
    m = env.num_mirrors
    total = grid_levels ** (2 * m)
    if total > budget:
        raise SearchBudgetError(
            f"exhaustive search needs {total} evaluations ({grid_levels}^{2 * m}); budget is {budget}"
        )
    grid = angle_grid(grid_levels)
    best_rate, best_idx = -math.inf, None
    combos = itertools.product(range(grid_levels), repeat=2 * m)
    while True:
        idx = np.array(list(itertools.islice(combos, chunk)), dtype=int).reshape(-1, 2 * m)
        if len(idx) == 0:
            break
        angles = grid[idx]
        rates = env.sum_rates_batch(angles[:, :m], angles[:, m:])
        j = int(np.argmax(rates))
        if rates[j] > best_rate:
            best_rate, best_idx = float(rates[j]), idx[j]
    return grid[best_idx] / (math.pi / 2), best_rate


class ExhaustivePolicy:
    """Re-runs the grid search on every decision (tiny arrays only)."""

    kind = "exhaustive"

    def __init__(self, env: IrsVlcEnv, grid_levels: int, budget: int = 1_000_000):
        self.env = env
        self.grid_levels = grid_levels
        self.budget = budget

    def begin_episode(self, rng=None):
        pass

    def end_episode(self):
        pass

    def act(self, state, explore=False, rng=None):
        return exhaustive_search(self.env, self.grid_levels, self.budget)[0]

    def observe(self, tr, rng):
        return None


# --------------------------------------------------------------------------- training


@dataclass
class TrainReport:
    sum_rate: list[float] = field(default_factory=list)
    reward: list[float] = field(default_factory=list)
    critic_loss: list[float] = field(default_factory=list)
    qos_violations: list[int] = field(default_factory=list)
    decision_latency: list[float] = field(default_factory=list)
    steps: list[int] = field(default_factory=list)

    def __len__(self):
        return len(self.sum_rate)

    def rows(self, include_timing: bool = False) -> list[dict]:
        out = []
        for i in range(len(self)):
            row = {
                "episode": i,
                "sum_rate_bps": self.sum_rate[i],
                "reward": self.reward[i],
                "critic_loss": self.critic_loss[i],
                "qos_violations": self.qos_violations[i],
            }
            if include_timing:
                row["decision_latency_s"] = self.decision_latency[i]
            out.append(row)
        return out


def train(agent, env: IrsVlcEnv, episodes: int, rng: np.random.Generator,
          max_steps: int | None = None, trace=None) -> TrainReport:
    """Run the act / step / store / update loop for ``episodes`` episodes.

    Per episode the report holds the mean per-step sum rate, the total
    reward, the mean critic (or Q) loss, the total QoS violations and the
    mean wall-clock time of one action selection.  ``trace`` is an optional
    callback ``(episode, step, env, outcome)``.
    """
    report = TrainReport()
    budget = max_steps or env.config.max_steps
    for ep in range(episodes):
        state = env.reset(seed=int(rng.integers(2**31)))
        agent.begin_episode(rng)
        rates, rewards, losses, viol, lat = [], [], [], 0, 0.0
        for t in range(budget):
            t0 = time.perf_counter()
            action = agent.act(state, True, rng)
            lat += time.perf_counter() - t0
            out = env.step(action)
            res = agent.observe(Transition(state, action, out.reward, out.observation, out.done), rng)
            if res is not None:
                losses.append(res[0])
            rates.append(float(out.per_user_rates.sum()))
            rewards.append(out.reward)
            viol += out.qos_violations
            if trace is not None:
                trace(ep, t, env, out)
            state = out.observation
            if out.done:
                break
        agent.end_episode()
        report.sum_rate.append(float(np.mean(rates)))
        report.reward.append(float(np.sum(rewards)))
        report.critic_loss.append(float(np.mean(losses)) if losses else float("nan"))
        report.qos_violations.append(viol)
        report.decision_latency.append(lat / len(rates))
        report.steps.append(len(rates))
    return report


def dql_train(agent: DqlAgent, env: IrsVlcEnv, episodes: int, rng, max_steps=None) -> TrainReport:
    return train(agent, env, episodes, rng, max_steps)


def dql_select(agent: DqlAgent, state, explore: bool, rng) -> np.ndarray:
    return agent.act(state, explore, rng)
