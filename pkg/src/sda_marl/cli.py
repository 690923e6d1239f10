"""Command-line entry points.

    sda-marl train --scenario auv2_t1 --algo sda_marl --seed 0
    sda-marl eval --checkpoint runs/auv2_t1_sda_marl_seed0 --episodes 20
    sda-marl suite --presets auv2_t1,auv4_t2 --algos sda_marl,maddpg \
                   --seeds 0..4 --out runs/suite
    sda-marl sweep-t --values 5,10,20,50 --out runs/sweep

Training runs at the desk-scale schedule unless --paper-scale is
given.  --config points at a JSON file that may override the scenario
and any train field; unknown keys are errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import harness, metrics, scenario, trainer
from .scenario import ConfigError, PRESET_NAMES


def _parse_seeds(text):
    """Accept "0..4" ranges and comma lists like "0,2,5"."""
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(x) for x in text.split(",") if x != ""]


def _parse_list(text):
    return [x.strip() for x in text.split(",") if x.strip()]


def _load_scenario_and_overrides(args):
    """Resolve the scenario plus train overrides.

    A --config file wins over --scenario; its train section becomes
    the override dict applied on top of the chosen profile.
    """
    if getattr(args, "config", None):
        cfg = scenario.load_scenario(args.config)
        return cfg, dict(cfg.train)
    if getattr(args, "scenario", None):
        return scenario.preset(args.scenario), {}
    raise ConfigError("need --scenario or --config")


def _base_config(args, seed, overrides):
    maker = harness.paper_config if args.paper_scale else harness.desk_config
    return maker(seed=seed, **overrides)


def cmd_train(args):
    cfg, overrides = _load_scenario_and_overrides(args)
    config = _base_config(args, args.seed, overrides)
    out = args.out or os.path.join(
        "runs", f"{cfg.name}_{args.algo}_seed{args.seed}")
    result = trainer.train(cfg, config, algo=args.algo, out_dir=out)
    last = result.episodes[-1]
    print(f"finished {len(result.episodes)} episodes "
          f"({result.update_cycles} update cycles) in {result.wall_time:.1f}s")
    print(f"final episode: reward {last['mean_cum_reward']:.3f} "
          f"accuracy {last['accuracy']:.3f}")
    print(f"run dir: {out}")
    return 0


def cmd_eval(args):
    cfg_path = os.path.join(args.checkpoint, "config.json")
    with open(cfg_path) as fh:
        snapshot = json.load(fh)
    cfg = scenario.from_dict({
        k: v for k, v in snapshot["scenario"].items()
    })
    ckpt_dir = os.path.join(args.checkpoint, "checkpoints", "final")
    actors = trainer.load_actors(ckpt_dir, cfg.n_auvs)
    horizon = snapshot["train"]["episode_len"]
    traj_path = os.path.join(args.checkpoint, "eval_traj.jsonl")
    records = trainer.evaluate(actors, cfg, args.episodes, seed=args.seed,
                               horizon=horizon, traj_path=traj_path)
    for rec in records:
        print(json.dumps(rec, sort_keys=True))
    acc = sum(r["accuracy"] for r in records) / len(records)
    rew = sum(r["mean_cum_reward"] for r in records) / len(records)
    print(f"mean over {len(records)} episodes: "
          f"accuracy {acc:.3f} reward {rew:.3f}", file=sys.stderr)
    return 0


def cmd_suite(args):
    presets = _parse_list(args.presets)
    for p in presets:
        scenario.preset(p)  # validate early, with the available-name message
    algos = _parse_list(args.algos)
    for a in algos:
        if a not in trainer.ALGORITHMS:
            raise ConfigError(
                f"unknown algorithm {a!r}; available: "
                f"{', '.join(trainer.ALGORITHMS)}")
    seeds = _parse_seeds(args.seeds)
    overrides = {}
    if args.config:
        overrides = dict(scenario.load_scenario(args.config).train)
    base = _base_config(args, seeds[0], overrides)
    rows = harness.run_suite(presets, algos, seeds, args.out,
                             base_config=base,
                             eval_episodes=args.eval_episodes)
    for row in rows:
        print(f"{row['preset']:10s} {row['algo']:22s} "
              f"accuracy {row['accuracy_mean']:.3f}+-{row['accuracy_sd']:.3f} "
              f"reward {row['reward_mean']:.2f}+-{row['reward_sd']:.2f}")
    print(f"summary: {os.path.join(args.out, 'summary.csv')}")
    return 0


def cmd_sweep_t(args):
    values = [int(x) for x in _parse_list(args.values)]
    seeds = _parse_seeds(args.seeds)
    overrides = {}
    if args.config:
        overrides = dict(scenario.load_scenario(args.config).train)
    base = _base_config(args, seeds[0], overrides)
    rows = harness.sweep_diffusion_steps(values, args.preset, seeds, args.out,
                                         base_config=base)
    for row in rows:
        print(f"T={row['diffusion_steps']:3d} "
              f"reward {row['reward_final_mean']:.2f} "
              f"accuracy {row['accuracy_final_mean']:.3f} "
              f"sample {1e3 * row['sample_seconds_per_batch']:.2f} ms/batch")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sda-marl",
        description="Multi-AUV underwater tracking: train, evaluate, sweep.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one run")
    p.add_argument("--scenario", choices=PRESET_NAMES)
    p.add_argument("--algo", default="sda_marl", choices=trainer.ALGORITHMS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="JSON scenario/train override file")
    p.add_argument("--paper-scale", action="store_true",
                   help="full-scale schedule instead of the desk profile")
    p.add_argument("--out", help="run directory (default: runs/<auto>)")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved run")
    p.add_argument("--checkpoint", required=True,
                   help="run directory containing config.json and checkpoints/")
    p.add_argument("--episodes", type=int, default=20)
    p.add_argument("--seed", type=int, default=12345)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("suite", help="preset x algorithm x seed grid")
    p.add_argument("--presets", required=True)
    p.add_argument("--algos", required=True)
    p.add_argument("--seeds", default="0")
    p.add_argument("--out", required=True)
    p.add_argument("--eval-episodes", type=int, default=20)
    p.add_argument("--config", help="JSON with shared train overrides")
    p.add_argument("--paper-scale", action="store_true")
    p.set_defaults(fn=cmd_suite)

    p = sub.add_parser("sweep-t", help="sweep reverse-chain length")
    p.add_argument("--values", default="5,10,20,50")
    p.add_argument("--preset", default="auv2_t1", choices=PRESET_NAMES)
    p.add_argument("--seeds", default="0")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON with shared train overrides")
    p.add_argument("--paper-scale", action="store_true")
    p.set_defaults(fn=cmd_sweep_t)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, metrics.TruncatedLog, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
