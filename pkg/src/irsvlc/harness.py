"""Experiment runner: config files, policy evaluation, sweeps, figure presets, CSV output."""

from __future__ import annotations

import csv
import itertools
import logging
import math
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .agents import (
    DdpgAgent,
    DdpgConfig,
    DqlAgent,
    DqlConfig,
    ExhaustivePolicy,
    RandomOrientationAgent,
    TrainReport,
    train,
)
from .channel import ber_ook
from .env import EnvConfig, IrsVlcEnv, trace_rows
from .scene import ConfigError, Scene, scene_from_dict

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

log = logging.getLogger(__name__)

POLICIES = ("ddpg", "dql", "random", "exhaustive")
INCOMPLETE_MARKER = "INCOMPLETE"


@dataclass(frozen=True)
class ExperimentConfig:
    scene: Mapping[str, Any] = field(default_factory=dict)
    env: EnvConfig = field(default_factory=EnvConfig)
    ddpg: DdpgConfig = field(default_factory=DdpgConfig)
    dql: DqlConfig = field(default_factory=DqlConfig)
    policies: tuple[str, ...] = ("ddpg", "random")
    episodes: int = 1000
    eval_horizon: int = 500
    eval_episodes: int = 1
    exhaustive_levels: int = 3
    seeds: tuple[int, ...] = (0,)
    powers: tuple[float, ...] = (2.0,)
    blockage_counts: tuple[int, ...] = (0,)
    # empty means "use the scene's own array size"
    irs_sizes: tuple[tuple[int, int], ...] = ()
    velocities: tuple[float | None, ...] = (None,)
    snr_db: tuple[float | None, ...] = (None,)
    output_dir: str = "results"
    workers: int = 1
    timing: bool = False

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("experiment.seeds", "seed list is empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("experiment.seeds", "seeds must be distinct")
        for name in ("powers", "blockage_counts", "velocities", "snr_db", "policies"):
            if not getattr(self, name):
                raise ConfigError(f"experiment.{name}", "sweep axis is empty")
        for p in self.policies:
            if p not in POLICIES:
                raise ConfigError("experiment.policies", f"unknown policy {p!r}")
        if self.episodes < 0 or self.eval_horizon < 1 or self.eval_episodes < 1:
            raise ConfigError("experiment.episodes", "episode counts must be positive")
        if self.workers < 1:
            raise ConfigError("experiment.workers", "need at least one worker")
        # fail early on a bad scene
        scene = scene_from_dict(self.scene)
        if not self.irs_sizes:
            object.__setattr__(self, "irs_sizes", ((scene.mirrors.rows, scene.mirrors.cols),))

    def sweep_points(self) -> list[dict]:
        axes = itertools.product(self.powers, self.blockage_counts, self.irs_sizes, self.velocities, self.snr_db)
        return [
            {"power_w": p, "blockages": b, "irs_rows": s[0], "irs_cols": s[1], "velocity_mps": v, "snr_db": snr}
            for p, b, s, v, snr in axes
        ]


_EXPERIMENT_KEYS = {f.name for f in fields(ExperimentConfig)} - {"scene", "env", "ddpg", "dql"}


def config_from_dict(data: Mapping[str, Any]) -> ExperimentConfig:
    unknown = set(data) - {"scene", "env", "ddpg", "dql", "experiment"}
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown section")
    exp = dict(data.get("experiment", {}))
    bad = set(exp) - _EXPERIMENT_KEYS
    if bad:
        raise ConfigError(f"experiment.{sorted(bad)[0]}", "unknown key")
    for key in ("policies", "seeds", "powers", "blockage_counts", "velocities", "snr_db"):
        if key in exp:
            exp[key] = tuple(exp[key])
    if "irs_sizes" in exp:
        exp["irs_sizes"] = tuple(tuple(s) for s in exp["irs_sizes"])
    return ExperimentConfig(
        scene=data.get("scene", {}),
        env=EnvConfig.from_dict(data.get("env", {})),
        ddpg=DdpgConfig.from_dict(data.get("ddpg", {})),
        dql=DqlConfig.from_dict(data.get("dql", {})),
        **exp,
    )


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        return config_from_dict(tomllib.load(fh))


# ----------------------------------------------------------------------------- CSV


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def emit_csv(rows: Sequence[Mapping[str, Any]], path) -> Path:
    """Write ``rows`` (dicts sharing the first row's keys) atomically to ``path``."""
    if not rows:
        raise ValueError("no rows to write")
    path = Path(path)
    header = list(rows[0].keys())
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(row[k]) for k in header])
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"failed to write {path}: {exc}") from exc
    return path


def read_csv(path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# ----------------------------------------------------------------------------- building blocks


def build_point(cfg: ExperimentConfig, point: Mapping[str, Any]) -> tuple[Scene, EnvConfig]:
    """Scene and env config for one sweep point."""
    data = {k: dict(v) for k, v in cfg.scene.items()}
    data.setdefault("led", {})["transmit_power"] = point["power_w"]
    mirrors = data.setdefault("mirrors", {})
    mirrors["rows"], mirrors["cols"] = point["irs_rows"], point["irs_cols"]
    scene = scene_from_dict(data)
    env_cfg = replace(cfg.env, blockage_count=point["blockages"])
    if point.get("velocity_mps") is not None:
        v = point["velocity_mps"]
        env_cfg = replace(env_cfg, speed_range=(v, v))
    if point.get("snr_db") is not None:
        env_cfg = replace(env_cfg, reference_snr_db=point["snr_db"], noise_variance=None)
    return scene, env_cfg


def make_agent(policy: str, env: IrsVlcEnv, cfg: ExperimentConfig, seed: int):
    if policy == "ddpg":
        return DdpgAgent(env.obs_dim, env.action_dim, cfg.ddpg, seed=seed)
    if policy == "dql":
        return DqlAgent(env.obs_dim, env.action_dim, cfg.dql, seed=seed)
    if policy == "random":
        return RandomOrientationAgent(env.num_mirrors)
    if policy == "exhaustive":
        return ExhaustivePolicy(env, cfg.exhaustive_levels)
    raise ValueError(f"unknown policy {policy!r}")


@dataclass
class EvalResult:
    """Per-seed metric values plus mean/std aggregates."""

    per_seed: dict[str, list[float]]
    seeds: list[int]
    angle_violations: int = 0

    def mean(self, metric: str) -> float:
        return float(np.mean(self.per_seed[metric]))

    def std(self, metric: str) -> float:
        return float(np.std(self.per_seed[metric]))


def evaluate_policy(agent, env: IrsVlcEnv, horizon: int, seeds: Iterable[int], timing: bool = False) -> EvalResult:
    """Run ``agent`` without exploration for ``horizon`` steps per seed.

    Metrics per seed: mean sum rate, mean per-user OOK BER, fraction of
    user-steps violating QoS, mean reward and (optionally) mean decision
    latency.
    """
    seeds = list(seeds)
    eval_env = IrsVlcEnv(env.scene, replace(env.config, max_steps=horizon, terminate_on_qos=False))
    if isinstance(agent, ExhaustivePolicy):
        agent.env = eval_env
    keys = ["sum_rate_bps", "ber", "qos_violation_fraction", "reward"] + (["latency_s"] if timing else [])
    per_seed = {k: [] for k in keys}
    for seed in seeds:
        state = eval_env.reset(seed)
        agent.begin_episode(np.random.default_rng(seed))
        rates = bers = viol = rew = lat = 0.0
        for _ in range(horizon):
            t0 = time.perf_counter()
            action = agent.act(state, False)
            lat += time.perf_counter() - t0
            out = eval_env.step(action)
            rates += out.per_user_rates.sum()
            bers += float(np.mean(ber_ook(out.report.sinr)))
            viol += out.qos_violations / len(out.per_user_rates)
            rew += out.reward
            state = out.observation
        per_seed["sum_rate_bps"].append(rates / horizon)
        per_seed["ber"].append(bers / horizon)
        per_seed["qos_violation_fraction"].append(viol / horizon)
        per_seed["reward"].append(rew / horizon)
        if timing:
            per_seed["latency_s"].append(lat / horizon)
    if eval_env.angle_violations:
        raise AssertionError(f"{eval_env.angle_violations} actions mapped outside [-pi/2, pi/2]")
    return EvalResult(per_seed, seeds, eval_env.angle_violations)


def eval_seeds_for(seed: int, n: int) -> list[int]:
    return [10_000 + 100 * seed + i for i in range(n)]


def run_point(cfg: ExperimentConfig, point: Mapping[str, Any], seed: int) -> list[dict]:
    """Train (when needed) and evaluate every policy at one sweep point for one seed."""
    scene, env_cfg = build_point(cfg, point)
    rows = []
    for policy in cfg.policies:
        env = IrsVlcEnv(scene, env_cfg, seed=seed)
        agent = make_agent(policy, env, cfg, seed)
        if policy in ("ddpg", "dql") and cfg.episodes:
            train(agent, env, cfg.episodes, np.random.default_rng(seed))
        if env.angle_violations:
            raise AssertionError(f"{env.angle_violations} training actions mapped outside [-pi/2, pi/2]")
        res = evaluate_policy(agent, env, cfg.eval_horizon, eval_seeds_for(seed, cfg.eval_episodes), cfg.timing)
        for metric, values in res.per_seed.items():
            rows.append({"policy": policy, **point, "seed": seed, "metric": metric,
                         "value": float(np.mean(values)), "aggregation": "seed"})
    return rows


def aggregate(rows: Sequence[Mapping[str, Any]]) -> list[dict]:
    """Mean/std over seeds for every (scenario, metric); order follows first appearance."""
    groups: dict[tuple, list[float]] = {}
    template: dict[tuple, dict] = {}
    for r in rows:
        if r["aggregation"] != "seed":
            continue
        key = tuple((k, r[k]) for k in r if k not in ("seed", "value", "aggregation"))
        groups.setdefault(key, []).append((r["seed"], r["value"]))
        template.setdefault(key, dict(r))
    out = []
    for key, pairs in groups.items():
        # sort by seed so the result does not depend on completion order
        values = [v for _, v in sorted(pairs)]
        for agg, val in (("mean", float(np.mean(values))), ("std", float(np.std(values)))):
            row = dict(template[key])
            row.update(seed="all", value=val, aggregation=agg)
            out.append(row)
    return out


def _run_job(args):
    cfg, point, seed = args
    return run_point(cfg, point, seed)


def run_experiment(cfg: ExperimentConfig, output_dir=None) -> Path:
    """Run the full sweep and write ``results.csv``; returns its path."""
    out = Path(output_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    marker = out / INCOMPLETE_MARKER
    marker.write_text("run in progress or aborted; files in this directory may be partial\n")
    jobs = [(cfg, p, s) for p in cfg.sweep_points() for s in cfg.seeds]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = [_run_job(j) for j in jobs]
    rows = [r for chunk in results for r in chunk]
    path = emit_csv(rows + aggregate(rows), out / "results.csv")
    marker.unlink()
    return path


# ----------------------------------------------------------------------------- presets


def preset_config(name: str, seed: int = 0, episodes: int | None = None,
                  eval_horizon: int | None = None, workers: int = 1, timing: bool = False) -> ExperimentConfig:
    """Scenario definitions mirroring the published figure setups."""
    env = EnvConfig(num_users=5, min_rate=1e6)
    common = dict(seeds=(seed,), workers=workers, timing=timing, env=env,
                  episodes=1000 if episodes is None else episodes,
                  eval_horizon=500 if eval_horizon is None else eval_horizon)
    if name == "fig3":
        return ExperimentConfig(policies=("ddpg", "dql", "random"), irs_sizes=((7, 7), (10, 10)),
                                powers=(2.0,), **common)
    if name == "fig4":
        return ExperimentConfig(policies=("ddpg", "random"), irs_sizes=((10, 10),), powers=(1.0, 2.0, 3.0, 4.0),
                                blockage_counts=(0, 1, 2), velocities=(1.0,), **common)
    if name == "fig5":
        return ExperimentConfig(policies=("ddpg",), irs_sizes=((10, 10),), velocities=(0.5, 1.0, 2.0),
                                snr_db=(0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0), **common)
    raise ValueError(f"unknown preset {name!r}; choose fig3, fig4 or fig5")


def run_training_curves(cfg: ExperimentConfig, output_dir) -> Path:
    """Per-episode sum rate for each policy and IRS size (training curves)."""
    rows = []
    for point in cfg.sweep_points():
        scene, env_cfg = build_point(cfg, point)
        for seed in cfg.seeds:
            for policy in cfg.policies:
                env = IrsVlcEnv(scene, env_cfg, seed=seed)
                agent = make_agent(policy, env, cfg, seed)
                rep = train(agent, env, cfg.episodes, np.random.default_rng(seed))
                for r in rep.rows(cfg.timing):
                    rows.append({"policy": policy, **point, "seed": seed, **r})
    return emit_csv(rows, Path(output_dir) / "training_curves.csv")


def run_preset(name: str, output_dir, **kwargs) -> list[Path]:
    cfg = preset_config(name, **kwargs)
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    if name == "fig3":
        marker = out / INCOMPLETE_MARKER
        marker.write_text("run in progress or aborted; files in this directory may be partial\n")
        paths.append(run_training_curves(cfg, out))
        marker.unlink()
    paths.append(run_experiment(cfg, out))
    return paths


# ----------------------------------------------------------------------------- single runs


def train_single(cfg: ExperimentConfig, policy: str, seed: int, output_dir, trace: bool = False):
    """Train one agent at the first sweep point; writes report CSV and checkpoint."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    scene, env_cfg = build_point(cfg, cfg.sweep_points()[0])
    env = IrsVlcEnv(scene, env_cfg, seed=seed)
    agent = make_agent(policy, env, cfg, seed)
    trace_buf = []
    hook = (lambda ep, t, e, o: trace_buf.extend(trace_rows(ep, t, e, o))) if trace else None
    report: TrainReport = train(agent, env, cfg.episodes, np.random.default_rng(seed), trace=hook)
    if env.angle_violations:
        raise AssertionError(f"{env.angle_violations} actions mapped outside [-pi/2, pi/2]")
    paths = []
    if len(report):
        paths.append(emit_csv(report.rows(cfg.timing), out / f"train_{policy}_seed{seed}.csv"))
    if trace_buf:
        paths.append(emit_csv(trace_buf, out / f"trace_{policy}_seed{seed}.csv"))
    if hasattr(agent, "save"):
        ckpt = out / f"{policy}_seed{seed}.npz"
        agent.save(ckpt)
        paths.append(ckpt)
    return agent, report, paths


def load_agent(path):
    from .neural import load_networks

    _, header = load_networks(path)
    cls = {"ddpg": DdpgAgent, "dql": DqlAgent}[header["kind"]]
    return cls.load(path)


def eval_single(cfg: ExperimentConfig, policy: str, seeds: Sequence[int], output_dir,
                checkpoint=None) -> Path:
    scene, env_cfg = build_point(cfg, cfg.sweep_points()[0])
    env = IrsVlcEnv(scene, env_cfg, seed=seeds[0])
    if checkpoint is not None:
        agent = load_agent(checkpoint)
        policy = agent.kind
    else:
        agent = make_agent(policy, env, cfg, seeds[0])
    res = evaluate_policy(agent, env, cfg.eval_horizon, seeds, cfg.timing)
    point = cfg.sweep_points()[0]
    rows = []
    for metric, values in res.per_seed.items():
        for s, v in zip(res.seeds, values):
            rows.append({"policy": policy, **point, "seed": s, "metric": metric, "value": v, "aggregation": "seed"})
    return emit_csv(rows + aggregate(rows), Path(output_dir) / f"eval_{policy}.csv")
