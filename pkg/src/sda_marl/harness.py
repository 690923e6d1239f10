"""Experiment harness: run grids, evaluate, summarise.

Two run profiles exist.  The full-scale profile uses the TrainConfig
defaults (4000 episodes of 400 steps); the desk profile shrinks the
schedule so a full preset grid finishes on one workstation core while
exercising the identical code path.  Suite output is one directory per
(preset, algo, seed) run containing the resolved config snapshot, the
training metrics JSONL, checkpoints, and evaluation logs; summaries
are recomputed from those files, never from in-memory state, so the
CSVs stay reproducible from the raw artefacts.
"""

from __future__ import annotations

import csv
import json
import os
import subprocess
import time

import numpy as np

from . import diffusion
from .scenario import preset
from .trainer import TrainConfig, evaluate, resolve_config, train

DESK_OVERRIDES = {
    "n_episodes": 300,
    "episode_len": 100,
    "batch_size": 128,
    "update_interval": 10,
    "min_buffer": 2000,
    "explore_sigma": 0.15,
    "n_candidates": 2,
    "diffusion_steps": 5,
    "ema_interval": 1,
    "ema_decay": 0.95,
    "eta": 0.0,
    "lambda_bc": 0.3,
    "lambda_bc_final": 0.05,
}


def desk_config(seed=0, **extra):
    """Workstation-scale schedule; same algorithm, smaller everything."""
    overrides = dict(DESK_OVERRIDES)
    overrides.update(extra)
    return resolve_config(TrainConfig(seed=seed), overrides)


def paper_config(seed=0, **extra):
    """Full-scale schedule (the TrainConfig defaults)."""
    return resolve_config(TrainConfig(seed=seed), extra)


def build_tag():
    """Git describe when available, else the package version."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=10,
            cwd=os.path.dirname(os.path.abspath(__file__)))
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.TimeoutExpired):
        pass
    from importlib.metadata import PackageNotFoundError, version
    try:
        return "v" + version("sda-marl")
    except PackageNotFoundError:
        return "unreleased"


def run_dir(out_root, preset_name, algo, seed):
    return os.path.join(out_root, preset_name, algo, f"seed{seed}")


def _run_one(preset_name, algo, seed, out_root, base_config, eval_episodes):
    scenario = preset(preset_name)
    config = resolve_config(base_config, {"seed": seed})
    if scenario.train:
        config = resolve_config(config, scenario.train)
    rdir = run_dir(out_root, preset_name, algo, seed)
    result = train(scenario, config, algo=algo, out_dir=rdir)
    actors = [a.actor for a in result.agents]
    eval_records = evaluate(
        actors, scenario, eval_episodes, seed=seed + 10_000,
        horizon=config.episode_len,
        traj_path=os.path.join(rdir, "eval_traj.jsonl"))
    with open(os.path.join(rdir, "eval_metrics.jsonl"), "w") as fh:
        for rec in eval_records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return result


def _read_jsonl(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def summarise_suite(out_root, presets, algos, seeds):
    """Aggregate evaluation metrics over seeds x episodes per cell.

    Reads the eval_metrics.jsonl files back from disk and returns one
    row per (preset, algo).  Standard deviations are population SDs
    over the pooled per-episode values.
    """
    rows = []
    for preset_name in presets:
        for algo in algos:
            pool = {"accuracy": [], "vel_diff_mean": [], "reward": [],
                    "path": []}
            for seed in seeds:
                rdir = run_dir(out_root, preset_name, algo, seed)
                for rec in _read_jsonl(os.path.join(rdir, "eval_metrics.jsonl")):
                    pool["accuracy"].append(rec["accuracy"])
                    pool["vel_diff_mean"].append(rec["vel_diff_mean"])
                    pool["reward"].append(rec["mean_cum_reward"])
                    pool["path"].append(float(np.mean(rec["path_length"])))
            rows.append({
                "preset": preset_name,
                "algo": algo,
                "n_seeds": len(seeds),
                "eval_episodes": len(pool["accuracy"]) // max(len(seeds), 1),
                "accuracy_mean": float(np.mean(pool["accuracy"])),
                "accuracy_sd": float(np.std(pool["accuracy"])),
                "vel_diff_mean": float(np.mean(pool["vel_diff_mean"])),
                "vel_diff_sd": float(np.std(pool["vel_diff_mean"])),
                "path_length_mean": float(np.mean(pool["path"])),
                "path_length_sd": float(np.std(pool["path"])),
                "reward_mean": float(np.mean(pool["reward"])),
                "reward_sd": float(np.std(pool["reward"])),
            })
    return rows


def _write_csv(path, rows):
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


def reward_curves(out_root, presets, algos, seeds):
    """Per-episode training reward, averaged over seeds."""
    rows = []
    for preset_name in presets:
        for algo in algos:
            per_seed = []
            for seed in seeds:
                rdir = run_dir(out_root, preset_name, algo, seed)
                recs = _read_jsonl(os.path.join(rdir, "metrics.jsonl"))
                per_seed.append([r["mean_cum_reward"] for r in recs])
            arr = np.array(per_seed)
            for ep in range(arr.shape[1]):
                rows.append({
                    "preset": preset_name, "algo": algo, "episode": ep,
                    "reward_mean": float(arr[:, ep].mean()),
                    "reward_sd": float(arr[:, ep].std()),
                })
    return rows


def run_suite(presets, algos, seeds, out_root, base_config=None,
              eval_episodes=20):
    """Full grid of runs plus CSV summaries; returns the summary rows."""
    base_config = base_config or desk_config()
    os.makedirs(out_root, exist_ok=True)
    for preset_name in presets:
        for algo in algos:
            for seed in seeds:
                _run_one(preset_name, algo, seed, out_root, base_config,
                         eval_episodes)
    rows = summarise_suite(out_root, presets, algos, seeds)
    _write_csv(os.path.join(out_root, "summary.csv"), rows)
    _write_csv(os.path.join(out_root, "reward_curves.csv"),
               reward_curves(out_root, presets, algos, seeds))
    return rows


def sample_time_per_step(steps, obs_dim=15, batch=128, repeats=5, hidden=64):
    """Mean wall seconds for one reverse-chain batch at the given T."""
    rng = np.random.default_rng(0)
    sched = diffusion.default_schedule(steps)
    policy = diffusion.DiffusionPolicy.create(obs_dim, 3, sched, rng,
                                              hidden=hidden)
    obs = rng.standard_normal((batch, obs_dim))
    diffusion.sample_action_batch(policy, obs, rng)  # warm path once
    t0 = time.perf_counter()
    for _ in range(repeats):
        diffusion.sample_action_batch(policy, obs, rng)
    return (time.perf_counter() - t0) / repeats


def sweep_diffusion_steps(values, preset_name, seeds, out_root,
                          base_config=None, final_window=50):
    """Train the full algorithm at several reverse-chain lengths.

    Writes one run dir per (T, seed) plus sweep_summary.csv with the
    final-window training reward, evaluation-free by design: the sweep
    compares training behaviour and sampling cost across T.
    """
    base_config = base_config or desk_config()
    os.makedirs(out_root, exist_ok=True)
    rows = []
    for steps in values:
        rewards_final = []
        acc_final = []
        for seed in seeds:
            config = resolve_config(base_config,
                                    {"seed": seed, "diffusion_steps": steps})
            scenario = preset(preset_name)
            rdir = os.path.join(out_root, f"T{steps}", f"seed{seed}")
            result = train(scenario, config, algo="sda_marl", out_dir=rdir)
            tail = result.episodes[-final_window:]
            rewards_final.append(np.mean([r["mean_cum_reward"] for r in tail]))
            acc_final.append(np.mean([r["accuracy"] for r in tail]))
        rows.append({
            "diffusion_steps": steps,
            "reward_final_mean": float(np.mean(rewards_final)),
            "accuracy_final_mean": float(np.mean(acc_final)),
            "sample_seconds_per_batch": sample_time_per_step(steps),
        })
    _write_csv(os.path.join(out_root, "sweep_summary.csv"), rows)
    return rows
