"""Episodic MDP wrapper around the IRS-assisted VLC scene."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Any, Mapping

import numpy as np

from .channel import (
    ChannelReport,
    NoiseModel,
    calibrate_noise_variance,
    evaluate_channel,
    irs_gain,
    los_gain,
    sinr,
    user_rate,
)
from .dynamics import (
    BlockageCylinder,
    UserState,
    los_blocked_mask,
    new_user,
    place_blockages,
    place_blockages_mhcp,
    rwp_step,
    sample_rwp_stationary,
    segments_blocked,
    static_user,
)
from .scene import ConfigError, MirrorState, Scene

HALF_PI = math.pi / 2

# log10 range used to squash channel gains into [-1, 1]
GAIN_FLOOR = 1e-14
GAIN_CEIL = 1e-3


@dataclass(frozen=True)
class EnvConfig:
    num_users: int = 5
    min_rate: float | tuple[float, ...] = 1e6
    dt: float = 0.1
    max_steps: int = 200
    speed_range: tuple[float, float] = (0.0, 2.0)
    pause_time: float = 0.0
    initial_distribution: str = "stationary"  # or "uniform"
    # users pinned at these ground positions and never moving
    fixed_users: tuple[tuple[float, float], ...] | None = None

    blockage_count: int | None = 0
    blockage_intensity: float | None = None  # per m^2, used when blockage_count is None
    blockage_diameter: float = 0.4
    blockage_height: float = 1.8
    hard_core_radius: float = 0.6
    fixed_blockages: tuple[tuple[float, float], ...] | None = None
    irs_path_blockage: bool = True

    reference_snr_db: float = 20.0
    reference_power: float = 2.0  # optical power (W) at which reference_snr_db holds
    noise_variance: float | None = None  # None -> calibrated from reference_snr_db
    residual_interference: float = 0.0
    sinr_power_exponent: int = 2

    reward_norm: float | None = None  # None -> minimum rate
    penalty_weight: float = 1.0
    penalty_rule: str = "unmet"  # "unmet" penalises R_k < R_min; "printed" penalises R_k > R_min
    terminate_on_qos: bool = True

    def __post_init__(self):
        if self.num_users < 1:
            raise ConfigError("num_users", "need at least one user")
        rates = np.atleast_1d(np.asarray(self.min_rate, dtype=float))
        if rates.size not in (1, self.num_users) or np.any(rates <= 0):
            raise ConfigError("min_rate", "one positive rate or one per user")
        if not self.dt > 0:
            raise ConfigError("dt", "must be positive")
        if self.max_steps < 1:
            raise ConfigError("max_steps", "must be at least 1")
        if self.initial_distribution not in ("stationary", "uniform"):
            raise ConfigError("initial_distribution", "must be 'stationary' or 'uniform'")
        if self.fixed_users is not None and len(self.fixed_users) != self.num_users:
            raise ConfigError("fixed_users", "need one position per user")
        if self.penalty_rule not in ("unmet", "printed"):
            raise ConfigError("penalty_rule", "must be 'unmet' or 'printed'")
        if self.sinr_power_exponent not in (1, 2):
            raise ConfigError("sinr_power_exponent", "must be 1 or 2")
        if self.penalty_weight < 0:
            raise ConfigError("penalty_weight", "must be non-negative")

    @property
    def min_rates(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.min_rate, dtype=float), (self.num_users,)).copy()

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "EnvConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"env.{sorted(unknown)[0]}", "unknown key")
        kw = dict(data)
        for key in ("speed_range", "min_rate"):
            if isinstance(kw.get(key), list):
                kw[key] = tuple(kw[key])
        for key in ("fixed_users", "fixed_blockages"):
            if kw.get(key) is not None:
                kw[key] = tuple(tuple(p) for p in kw[key])
        return cls(**kw)


@dataclass
class StepOutcome:
    observation: np.ndarray
    reward: float
    per_user_rates: np.ndarray
    qos_violations: int
    done: bool
    report: ChannelReport = field(repr=False)


def compute_reward(per_user_rates, min_rates, reward_norm: float = 1e6,
                   penalty_weight: float = 1.0, rule: str = "unmet") -> float:
    """Normalised sum rate minus a penalty per QoS-violating user."""
    rates = np.asarray(per_user_rates, dtype=float)
    mins = np.asarray(min_rates, dtype=float)
    if rates.shape != mins.shape:
        raise ValueError(f"rate list length {rates.shape} != minimum-rate length {mins.shape}")
    if rule == "unmet":
        penalised = np.count_nonzero(rates < mins)
    elif rule == "printed":
        penalised = np.count_nonzero(rates > mins)
    else:
        raise ValueError(f"unknown penalty rule {rule!r}")
    return float(rates.sum() / reward_norm - penalty_weight * penalised)


def normalize_gain(g):
    lo, hi = math.log10(GAIN_FLOOR), math.log10(GAIN_CEIL)
    u = np.log10(np.asarray(g, dtype=float) + GAIN_FLOOR)
    return np.clip(2 * (u - lo) / (hi - lo) - 1, -1.0, 1.0)


def denormalize_gain(v):
    lo, hi = math.log10(GAIN_FLOOR), math.log10(GAIN_CEIL)
    u = (np.asarray(v, dtype=float) + 1) / 2 * (hi - lo) + lo
    return 10.0**u - GAIN_FLOOR


class IrsVlcEnv:
    """Mirror-orientation MDP.

    Actions are ``2M`` values in [-1, 1]: the first ``M`` set mirror yaw and
    the last ``M`` mirror roll, each scaled by pi/2.  Observations stack
    normalised user ground positions (2K), log-scaled aggregate channel
    gains (K), scaled mirror angles (2M) and scaled minimum rates (K).
    """

    def __init__(self, scene: Scene, config: EnvConfig | None = None, seed: int | None = None):
        self.scene = scene
        self.config = config or EnvConfig()
        cfg = self.config
        noise_var = cfg.noise_variance
        if noise_var is None:
            noise_var = calibrate_noise_variance(scene, cfg.reference_snr_db, cfg.reference_power,
                                                 cfg.sinr_power_exponent)
        self.noise = NoiseModel(noise_var, cfg.residual_interference)
        self.reward_norm = cfg.reward_norm or float(cfg.min_rates.min())
        self.num_mirrors = scene.mirrors.count
        self.action_dim = 2 * self.num_mirrors
        self.obs_dim = 4 * cfg.num_users + 2 * self.num_mirrors
        self.rng = np.random.default_rng(seed)
        self.mirror: MirrorState = scene.initial_mirror_state()
        self.users: list[UserState] = []
        self.blockages: list[BlockageCylinder] = []
        self.report: ChannelReport | None = None
        self.t = 0
        # safety counters: every emitted angle must lie in [-pi/2, pi/2]
        self.actions_applied = 0
        self.angle_violations = 0

    # -- setup ---------------------------------------------------------------
    def _spawn_users(self) -> list[UserState]:
        cfg, room = self.config, self.scene.room
        rates = cfg.min_rates
        if cfg.fixed_users is not None:
            return [static_user((x, y, room.receiver_height), r) for (x, y), r in zip(cfg.fixed_users, rates)]
        if cfg.initial_distribution == "stationary":
            xy = sample_rwp_stationary(room, cfg.num_users, self.rng)
        else:
            xy = np.column_stack([
                self.rng.uniform(0, room.width_x, cfg.num_users),
                self.rng.uniform(0, room.depth_y, cfg.num_users),
            ])
        return [new_user(p, room, self.rng, r, cfg.speed_range, cfg.pause_time) for p, r in zip(xy, rates)]

    def _spawn_blockages(self) -> list[BlockageCylinder]:
        cfg, room = self.config, self.scene.room
        if cfg.fixed_blockages is not None:
            return [BlockageCylinder(tuple(c), cfg.blockage_diameter, cfg.blockage_height) for c in cfg.fixed_blockages]
        if cfg.blockage_count is not None:
            return place_blockages(room, cfg.blockage_count, cfg.hard_core_radius, self.rng,
                                   cfg.blockage_diameter, cfg.blockage_height)
        return place_blockages_mhcp(room, cfg.blockage_intensity or 0.0, cfg.hard_core_radius, self.rng,
                                    cfg.blockage_diameter, cfg.blockage_height)

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.blockages = self._spawn_blockages()
        self.users = self._spawn_users()
        self.mirror = self.scene.initial_mirror_state()
        self.t = 0
        self.report = self._channel(self.mirror)
        return self.observation()

    # -- channel ---------------------------------------------------------------
    @property
    def user_positions(self) -> np.ndarray:
        return np.array([u.position for u in self.users])

    def _channel(self, mirror: MirrorState) -> ChannelReport:
        pos = self.user_positions
        blocked = los_blocked_mask(self.scene.ap, pos, self.blockages)
        irs_blocked = None
        if self.config.irs_path_blockage and self.blockages:
            irs_blocked = segments_blocked(mirror.centers[None, :, :], pos[:, None, :], self.blockages)
        return evaluate_channel(self.scene, mirror, pos, blocked, self.noise,
                                irs_blocked=irs_blocked, power_exponent=self.config.sinr_power_exponent)

    def sum_rate_for_angles(self, yaw, roll) -> float:
        """Sum rate for the given mirror angles with users and blockages held fixed."""
        mirror = MirrorState(np.asarray(yaw, dtype=float), np.asarray(roll, dtype=float), self.mirror.centers)
        return float(self._channel(mirror).rate.sum())

    def sum_rates_batch(self, yaw, roll) -> np.ndarray:
        """Vectorised :meth:`sum_rate_for_angles` over ``(G, M)`` angle arrays."""
        yaw = np.asarray(yaw, dtype=float)[:, None, :]
        roll = np.asarray(roll, dtype=float)[:, None, :]
        scene, pos = self.scene, self.user_positions
        blocked = los_blocked_mask(scene.ap, pos, self.blockages)
        h_los = los_gain(scene.ap, scene.led, scene.receiver, pos)
        mirror = MirrorState(yaw, roll, self.mirror.centers)
        h_irs = irs_gain(scene.ap, mirror, scene.mirrors, scene.led, scene.receiver, pos)
        if self.config.irs_path_blockage and self.blockages:
            h_irs = np.where(segments_blocked(mirror.centers[None, :, :], pos[:, None, :], self.blockages), 0.0, h_irs)
        g = sinr(h_los, blocked, h_irs, scene.receiver, scene.led.transmit_power, self.noise,
                 self.config.sinr_power_exponent)
        return user_rate(g, scene.receiver.bandwidth, len(pos)).sum(axis=-1)

    # -- MDP -------------------------------------------------------------------
    def action_to_angles(self, action) -> tuple[np.ndarray, np.ndarray]:
        a = np.clip(np.asarray(action, dtype=float), -1.0, 1.0)
        angles = a * HALF_PI
        self.actions_applied += 1
        if np.any(np.abs(angles) > HALF_PI):
            self.angle_violations += 1
        m = self.num_mirrors
        return angles[:m], angles[m:]

    def observation(self) -> np.ndarray:
        cfg, room = self.config, self.scene.room
        pos = self.user_positions
        xy = np.column_stack([2 * pos[:, 0] / room.width_x - 1, 2 * pos[:, 1] / room.depth_y - 1]).ravel()
        gains = normalize_gain(self.report.total_gain)
        angles = np.concatenate([self.mirror.yaw, self.mirror.roll]) / HALF_PI
        rmin = cfg.min_rates / self.scene.receiver.bandwidth
        return np.concatenate([xy, gains, angles, np.clip(rmin, 0.0, 1.0)])

    def step(self, action, dt: float | None = None) -> StepOutcome:
        action = np.asarray(action, dtype=float)
        if action.shape != (self.action_dim,):
            raise ValueError(f"action must have length {self.action_dim}, got shape {action.shape}")
        if not np.all(np.isfinite(action)):
            raise ValueError("action contains non-finite values")
        if self.report is None:
            raise RuntimeError("call reset() before step()")
        dt = self.config.dt if dt is None else dt
        yaw, roll = self.action_to_angles(action)
        self.mirror.set_angles(yaw, roll)
        room = self.scene.room
        self.users = [rwp_step(u, dt, room, self.rng) for u in self.users]
        self.report = self._channel(self.mirror)
        rates = self.report.rate
        mins = self.config.min_rates
        violations = int(np.count_nonzero(rates < mins))
        reward = compute_reward(rates, mins, self.reward_norm, self.config.penalty_weight, self.config.penalty_rule)
        self.t += 1
        done = self.t >= self.config.max_steps or (self.config.terminate_on_qos and violations == 0)
        return StepOutcome(self.observation(), reward, rates.copy(), violations, done, self.report)

    def angle_columns(self) -> list[str]:
        m = self.num_mirrors
        return [f"yaw_{i}" for i in range(m)] + [f"roll_{i}" for i in range(m)]


def trace_rows(episode: int, step: int, env: IrsVlcEnv, outcome: StepOutcome) -> list[dict]:
    """CSV rows (one per user) describing the state after a step."""
    angles = np.concatenate([env.mirror.yaw, env.mirror.roll])
    cols = env.angle_columns()
    mins = env.config.min_rates
    rows = []
    for k, u in enumerate(env.users):
        row = {
            "episode": episode,
            "step": step,
            "user_id": k,
            "x": u.position[0],
            "y": u.position[1],
            "rate_bps": float(outcome.per_user_rates[k]),
            "qos_met": int(outcome.per_user_rates[k] >= mins[k]),
            "reward": outcome.reward,
        }
        row.update(zip(cols, (float(a) for a in angles)))
        rows.append(row)
    return rows


def denormalize_observation(obs, env: IrsVlcEnv) -> dict[str, np.ndarray]:
    """Invert :meth:`IrsVlcEnv.observation` back to physical units."""
    k, m = env.config.num_users, env.num_mirrors
    room = env.scene.room
    obs = np.asarray(obs, dtype=float)
    xy = obs[: 2 * k].reshape(k, 2)
    pos = np.column_stack([(xy[:, 0] + 1) / 2 * room.width_x, (xy[:, 1] + 1) / 2 * room.depth_y])
    gains = denormalize_gain(obs[2 * k : 3 * k])
    angles = obs[3 * k : 3 * k + 2 * m] * HALF_PI
    rmin = obs[3 * k + 2 * m :] * env.scene.receiver.bandwidth
    return {"positions": pos, "gains": gains, "yaw": angles[:m], "roll": angles[m:], "min_rates": rmin}

