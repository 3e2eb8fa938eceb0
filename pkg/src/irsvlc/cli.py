"""Command line entry point: ``irsvlc {train,eval,sweep,preset}``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from . import harness
from .harness import ExperimentConfig


def _load(args) -> ExperimentConfig:
    cfg = harness.load_config(args.config) if args.config else ExperimentConfig()
    changes = {}
    if getattr(args, "episodes", None) is not None:
        changes["episodes"] = args.episodes
    if getattr(args, "eval_horizon", None) is not None:
        changes["eval_horizon"] = args.eval_horizon
    if getattr(args, "seeds", None):
        changes["seeds"] = tuple(args.seeds)
    if getattr(args, "workers", None) is not None:
        changes["workers"] = args.workers
    if getattr(args, "timing", False):
        changes["timing"] = True
    return replace(cfg, **changes) if changes else cfg


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="irsvlc", description="IRS mirror orientation for indoor VLC")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seeds=True):
        sp.add_argument("--config", help="TOML experiment config")
        sp.add_argument("--out", default="results", help="output directory")
        sp.add_argument("--episodes", type=int)
        sp.add_argument("--eval-horizon", type=int)
        sp.add_argument("--timing", action="store_true", help="record wall-clock latency columns")
        if seeds:
            sp.add_argument("--seeds", type=int, nargs="+")

    t = sub.add_parser("train", help="train one agent")
    common(t, seeds=False)
    t.add_argument("--agent", choices=["ddpg", "dql", "random"], default="ddpg")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--trace", action="store_true", help="also write per-step episode traces")

    e = sub.add_parser("eval", help="evaluate a policy or checkpoint")
    common(e)
    e.add_argument("--agent", choices=list(harness.POLICIES), default="random")
    e.add_argument("--checkpoint", help="trained agent .npz")

    s = sub.add_parser("sweep", help="run the configured sweep")
    common(s)
    s.add_argument("--workers", type=int)

    pr = sub.add_parser("preset", help="reproduce a figure scenario")
    pr.add_argument("name", choices=["fig3", "fig4", "fig5"])
    pr.add_argument("--out", default="results")
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--episodes", type=int)
    pr.add_argument("--eval-horizon", type=int)
    pr.add_argument("--workers", type=int, default=1)
    pr.add_argument("--timing", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "train":
            cfg = _load(args)
            _, _, paths = harness.train_single(cfg, args.agent, args.seed, args.out, trace=args.trace)
        elif args.command == "eval":
            cfg = _load(args)
            seeds = list(args.seeds or cfg.seeds)
            paths = [harness.eval_single(cfg, args.agent, seeds, args.out, args.checkpoint)]
        elif args.command == "sweep":
            cfg = _load(args)
            paths = [harness.run_experiment(cfg, args.out)]
        else:
            paths = harness.run_preset(args.name, args.out, seed=args.seed, episodes=args.episodes,
                                       eval_horizon=args.eval_horizon, workers=args.workers, timing=args.timing)
    except Exception as exc:  # noqa: BLE001 - any failure becomes a diagnostic + exit code
        print(f"irsvlc: error: {exc}", file=sys.stderr)
        return 1
    for path in paths:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
