"""Dual-decision multi-agent training loop.

Each AUV owns two decision systems sharing one replay stream:

* a deterministic actor with twin centralised critics and their
  targets (the acting policy), and
* a diffusion policy with its own distinct twin critics and targets
  (the supervising policy), present only when diffusion is enabled.

One training episode proceeds as: harvest one demonstration episode on
a side world (quality-gated, stored with source tag 1), then roll the
training world with the actors plus exploration noise (stored with
source tag 0), updating every agent whenever the buffer is warm and
the global step counter hits the update interval.

Updates per cycle draw a single mixed batch.  Normal critics bootstrap
through candidate joint actions sampled from every agent's EMA
diffusion policy (or, without diffusion, the single joint action given
by the target actors): the target is

    y = r + gamma * (1 - done) * min_k max_c Q_k_target(s', a_c)

pessimistic across the twin and optimistic across candidates.  Actors
descend -Q1 plus an anneal-weighted behaviour-cloning pull toward EMA
diffusion samples.  Diffusion agents train on a dedicated
harvested-only batch drawn alongside the mixed one: denoising loss
plus eta times -Q from one of their own critics picked uniformly,
backpropagated through the full reverse chain.

Baseline mode (maddpg / ablation_no_diffusion) runs the identical code
path with diffusion machinery disabled; because all random streams are
split by purpose, both baselines are bitwise identical to each other
and share every pre-update rollout with the full algorithm.
"""

from __future__ import annotations

import dataclasses
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint, diffusion, metrics, nets
from .diffusion import DiffusionPolicy, default_schedule
from .env import assign_targets  # noqa: F401  (re-export: tasking lives here too)
from .quality import harvest_episode
from .replay import BufferUnderfilled, ReplayBuffer, Transition
from .scenario import ConfigError, build_world

ALGORITHMS = ("sda_marl", "maddpg", "ablation_no_diffusion")


@dataclass
class TrainConfig:
    """Knobs for one training run (defaults are full-scale)."""

    n_episodes: int = 4000
    episode_len: int = 400
    batch_size: int = 256
    update_interval: int = 400     # global env steps between update cycles
    min_buffer: int = 4000        # warmup size before any update
    buffer_capacity: int = 1_000_000
    gamma: float = 0.95
    tau: float = 1e-2
    lr: float = 1e-3
    hidden: int = 256
    explore_sigma: float = 0.1
    n_candidates: int = 5
    diffusion_steps: int = 20
    ema_interval: int = 5
    ema_decay: float = 0.995
    eta: float = 1.0
    lambda_bc: float = 0.5
    lambda_bc_final: float = 0.1
    seed: int = 0
    use_diffusion: bool = True
    use_harvest: bool = True
    save_interval: int = 0        # episodes between checkpoints; 0 = final only


def resolve_config(base, overrides):
    """Apply a dict of overrides, rejecting unknown field names."""
    valid = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = set(overrides) - valid
    if unknown:
        raise ConfigError(
            f"unknown train config keys: {', '.join(sorted(unknown))}")
    return dataclasses.replace(base, **overrides)


def config_for_algo(config, algo):
    """Specialise a config for one of the named algorithms."""
    if algo not in ALGORITHMS:
        raise ConfigError(
            f"unknown algorithm {algo!r}; available: {', '.join(ALGORITHMS)}")
    if algo == "sda_marl":
        return config
    return dataclasses.replace(config, use_diffusion=False, use_harvest=False,
                               lambda_bc=0.0, lambda_bc_final=0.0,
                               n_candidates=1)


@dataclass
class AgentNets:
    """Every network belonging to one AUV."""

    actor: nets.Mlp
    actor_target: nets.Mlp
    q1: nets.Mlp
    q2: nets.Mlp
    q1_target: nets.Mlp
    q2_target: nets.Mlp
    opt_actor: nets.AdamState
    opt_q1: nets.AdamState
    opt_q2: nets.AdamState
    diffusion: DiffusionPolicy | None = None
    dq1: nets.Mlp | None = None
    dq2: nets.Mlp | None = None
    dq1_target: nets.Mlp | None = None
    dq2_target: nets.Mlp | None = None
    opt_eps: nets.AdamState | None = None
    opt_dq1: nets.AdamState | None = None
    opt_dq2: nets.AdamState | None = None
    diffusion_updates: int = 0


@dataclass
class TrainResult:
    agents: list
    episodes: list = field(default_factory=list)  # one metrics dict each
    update_cycles: int = 0
    wall_time: float = 0.0


# ---------------------------------------------------------------------------
# update-rule building blocks (module level so they can be tested in isolation)
# ---------------------------------------------------------------------------


def critic_target(target_pair, next_joint_obs, candidate_actions, rewards,
                  dones, gamma):
    """Pessimistic-twin, optimistic-candidate bootstrap target.

    candidate_actions has shape (n_candidates, batch, joint_action_dim);
    each twin target critic scores every candidate, keeps its best, and
    the smaller of the two bests bootstraps.  Terminal rows collapse to
    the raw reward.
    """
    c, b, _ = candidate_actions.shape
    best = []
    for q in target_pair:
        scores = np.empty((c, b))
        for j in range(c):
            qin = np.concatenate([next_joint_obs, candidate_actions[j]], axis=1)
            scores[j] = nets.forward_batch(q, qin)[0][:, 0]
        best.append(scores.max(axis=0))
    pessimistic = np.minimum(best[0], best[1])
    return rewards + gamma * (1.0 - dones) * pessimistic


def critic_update(critics, optimizers, joint_obs, joint_actions_flat, y):
    """One MSE step on both critics against a shared target."""
    qin = np.concatenate([joint_obs, joint_actions_flat], axis=1)
    b = qin.shape[0]
    losses = []
    for q, opt in zip(critics, optimizers):
        qv, tape = nets.forward_batch(q, qin)
        err = qv - y[:, None]
        losses.append(float(np.mean(err * err)))
        grads, _ = nets.backward(q, tape, (2.0 / b) * err)
        nets.adam_step(q.params(), grads, opt)
    return losses


def ddpg_actor_update(agent, agent_index, obs_i, joint_obs, joint_actions,
                      lambda_bc, anchor):
    """Deterministic policy-gradient step with optional cloning pull.

    The actor's action replaces its own column in the batch's joint
    action; the first critic scores the result and its action gradient
    is chained back through the actor.  anchor (EMA diffusion samples)
    adds lambda_bc * mean squared distance when given.
    """
    b = obs_i.shape[0]
    a_pi, tape_a = nets.forward_batch(agent.actor, obs_i)
    acts = joint_actions.copy()
    acts[:, agent_index, :] = a_pi
    flat = acts.reshape(b, -1)
    qin = np.concatenate([joint_obs, flat], axis=1)
    qv, tape_q = nets.forward_batch(agent.q1, qin)
    loss_pg = -float(np.mean(qv))
    _, dqin = nets.backward(agent.q1, tape_q, np.full((b, 1), -1.0 / b))
    off = joint_obs.shape[1] + 3 * agent_index
    d_a = dqin[:, off:off + 3].copy()
    loss_bc = 0.0
    if anchor is not None and lambda_bc > 0.0:
        diff = a_pi - anchor
        loss_bc = lambda_bc * float(np.mean(np.sum(diff * diff, axis=1)))
        d_a += (2.0 * lambda_bc / b) * diff
    grads, _ = nets.backward(agent.actor, tape_a, d_a)
    nets.adam_step(agent.actor.params(), grads, agent.opt_actor)
    return loss_pg + loss_bc, loss_pg, loss_bc


def diffusion_actor_loss(agent, agent_index, sub, joint_obs, joint_actions,
                         eta, rng):
    """Combined denoising + value loss for the diffusion policy.

    Returns (loss, grads, info).  The value term rolls the reverse
    chain with frozen noise, scores it with one of the agent's own
    critics chosen uniformly at random, and backpropagates the critic's
    action gradient through every denoising step.
    """
    policy = agent.diffusion
    obs_i = sub["obs"][:, agent_index, :]
    act_i = sub["actions"][:, agent_index, :]
    b = obs_i.shape[0]
    t = rng.integers(1, policy.schedule.steps + 1, size=b)
    eps = rng.standard_normal((b, policy.action_dim))
    loss_bc, grads = diffusion.denoising_loss_terms(policy, obs_i, act_i, t, eps)

    a_hat, trace = diffusion.rollout_sample(policy, obs_i, rng, use_ema=False)
    acts = joint_actions.copy()
    acts[:, agent_index, :] = a_hat
    qin = np.concatenate([joint_obs, acts.reshape(b, -1)], axis=1)
    pick = int(rng.integers(2))
    critic = agent.dq1 if pick == 0 else agent.dq2
    qv, tape_q = nets.forward_batch(critic, qin)
    loss_q = -float(np.mean(qv))
    if eta != 0.0:
        _, dqin = nets.backward(critic, tape_q, np.full((b, 1), -1.0 / b))
        off = joint_obs.shape[1] + 3 * agent_index
        d_a = eta * dqin[:, off:off + 3]
        for g, gq in zip(grads, diffusion.rollout_backward(policy, trace, d_a)):
            g += gq
    total = loss_bc + eta * loss_q
    return total, grads, {"bc": loss_bc, "q": loss_q, "critic_index": pick}


# ---------------------------------------------------------------------------
# the trainer
# ---------------------------------------------------------------------------


class Trainer:
    def __init__(self, scenario, config, algo="sda_marl"):
        self.scenario = scenario
        self.algo = algo
        self.config = config_for_algo(config, algo)
        cfg = self.config
        self.world = build_world(scenario, cfg.episode_len)
        self.harvest_world = build_world(scenario, cfg.episode_len)
        self.buffer = ReplayBuffer(cfg.buffer_capacity)

        root = np.random.SeedSequence(cfg.seed)
        (s_env, s_explore, s_buffer, s_init, s_harvest, s_dinit,
         s_diff) = root.spawn(7)
        self.env_rng = np.random.default_rng(s_env)
        self.explore_rng = np.random.default_rng(s_explore)
        self.buffer_rng = np.random.default_rng(s_buffer)
        self.harvest_rng = np.random.default_rng(s_harvest)
        self.diffusion_rng = np.random.default_rng(s_diff)

        init_rng = np.random.default_rng(s_init)
        dinit_rng = np.random.default_rng(s_dinit)
        n = scenario.n_auvs
        obs_dim = self.world.obs_dim
        joint_in = n * (obs_dim + 3)
        self.obs_dim = obs_dim
        self.n_agents = n

        self.agents = []
        for _ in range(n):
            actor = nets.Mlp.create(obs_dim, 3, init_rng, hidden=cfg.hidden,
                                    out_act=nets.TANH)
            q1 = nets.Mlp.create(joint_in, 1, init_rng, hidden=cfg.hidden,
                                 out_act=nets.IDENTITY)
            q2 = nets.Mlp.create(joint_in, 1, init_rng, hidden=cfg.hidden,
                                 out_act=nets.IDENTITY)
            agent = AgentNets(
                actor=actor, actor_target=actor.copy(),
                q1=q1, q2=q2, q1_target=q1.copy(), q2_target=q2.copy(),
                opt_actor=nets.AdamState.for_params(actor.params(), lr=cfg.lr),
                opt_q1=nets.AdamState.for_params(q1.params(), lr=cfg.lr),
                opt_q2=nets.AdamState.for_params(q2.params(), lr=cfg.lr),
            )
            if cfg.use_diffusion:
                sched = default_schedule(cfg.diffusion_steps)
                pol = DiffusionPolicy.create(obs_dim, 3, sched, dinit_rng,
                                             hidden=cfg.hidden)
                dq1 = nets.Mlp.create(joint_in, 1, dinit_rng, hidden=cfg.hidden,
                                      out_act=nets.IDENTITY)
                dq2 = nets.Mlp.create(joint_in, 1, dinit_rng, hidden=cfg.hidden,
                                      out_act=nets.IDENTITY)
                agent.diffusion = pol
                agent.dq1, agent.dq2 = dq1, dq2
                agent.dq1_target, agent.dq2_target = dq1.copy(), dq2.copy()
                agent.opt_eps = nets.AdamState.for_params(pol.net.params(),
                                                          lr=cfg.lr)
                agent.opt_dq1 = nets.AdamState.for_params(dq1.params(), lr=cfg.lr)
                agent.opt_dq2 = nets.AdamState.for_params(dq2.params(), lr=cfg.lr)
            self.agents.append(agent)

        self.t_total = 0
        self.update_cycles = 0

    # -- policy helpers ----------------------------------------------------

    def _act(self, obs, noise_rng, sigma):
        noise = sigma * noise_rng.standard_normal((self.n_agents, 3)) \
            if sigma > 0.0 else 0.0
        acts = np.stack([nets.forward(a.actor, obs[i])
                         for i, a in enumerate(self.agents)])
        return np.clip(acts + noise, -1.0, 1.0)

    def _candidates(self, next_obs):
        """(n_candidates, batch, joint_action) for bootstrap targets."""
        cfg = self.config
        b = next_obs.shape[0]
        if cfg.use_diffusion:
            cands = np.empty((cfg.n_candidates, b, 3 * self.n_agents))
            for j in range(cfg.n_candidates):
                for k, agent in enumerate(self.agents):
                    cands[j, :, 3 * k:3 * k + 3] = diffusion.sample_action_batch(
                        agent.diffusion, next_obs[:, k, :], self.diffusion_rng,
                        use_ema=True)
            return cands
        cands = np.empty((1, b, 3 * self.n_agents))
        for k, agent in enumerate(self.agents):
            cands[0, :, 3 * k:3 * k + 3] = nets.forward_batch(
                agent.actor_target, next_obs[:, k, :])[0]
        return cands

    def _lambda_bc(self, episode):
        cfg = self.config
        if cfg.n_episodes <= 1:
            return cfg.lambda_bc
        frac = episode / (cfg.n_episodes - 1)
        return cfg.lambda_bc + (cfg.lambda_bc_final - cfg.lambda_bc) * frac

    # -- one update cycle ---------------------------------------------------

    def update_cycle(self, lambda_bc=None):
        """One full parameter update for every agent; returns loss stats."""
        cfg = self.config
        if lambda_bc is None:
            lambda_bc = cfg.lambda_bc
        batch = self.buffer.sample(cfg.batch_size, "any", self.buffer_rng)
        b = cfg.batch_size
        joint_obs = batch["obs"].reshape(b, -1)
        joint_act = batch["actions"].reshape(b, -1)
        next_obs = batch["next_obs"]
        joint_next = next_obs.reshape(b, -1)
        cands = self._candidates(next_obs)

        sub = None
        cands_sub = None
        if cfg.use_diffusion:
            n_harvested = self.buffer.count(1)
            if n_harvested > 0:
                sub = self.buffer.sample(min(cfg.batch_size, n_harvested),
                                         "only_1", self.buffer_rng)
                cands_sub = self._candidates(sub["next_obs"])

        stats = {"critic": [], "actor": [], "bc": [], "diff_bc": [],
                 "diff_q": [], "diff_critic": []}
        for i, agent in enumerate(self.agents):
            y = critic_target((agent.q1_target, agent.q2_target), joint_next,
                              cands, batch["rewards"][:, i], batch["done"],
                              cfg.gamma)
            l1, l2 = critic_update((agent.q1, agent.q2),
                                   (agent.opt_q1, agent.opt_q2),
                                   joint_obs, joint_act, y)
            stats["critic"].append(0.5 * (l1 + l2))

            anchor = None
            if cfg.use_diffusion and lambda_bc > 0.0:
                anchor = diffusion.sample_action_batch(
                    agent.diffusion, batch["obs"][:, i, :],
                    self.diffusion_rng, use_ema=True)
            _, loss_pg, loss_bc = ddpg_actor_update(
                agent, i, batch["obs"][:, i, :], joint_obs, batch["actions"],
                lambda_bc, anchor)
            stats["actor"].append(loss_pg)
            stats["bc"].append(loss_bc)

            if sub is not None:
                sb = sub["obs"].shape[0]
                y_d = critic_target(
                    (agent.dq1_target, agent.dq2_target),
                    sub["next_obs"].reshape(sb, -1), cands_sub,
                    sub["rewards"][:, i], sub["done"], cfg.gamma)
                dl = critic_update((agent.dq1, agent.dq2),
                                   (agent.opt_dq1, agent.opt_dq2),
                                   sub["obs"].reshape(sb, -1),
                                   sub["actions"].reshape(sb, -1), y_d)
                stats["diff_critic"].append(0.5 * sum(dl))
                _, grads, info = diffusion_actor_loss(
                    agent, i, sub, sub["obs"].reshape(sb, -1), sub["actions"],
                    cfg.eta, self.diffusion_rng)
                nets.adam_step(agent.diffusion.net.params(), grads,
                               agent.opt_eps)
                stats["diff_bc"].append(info["bc"])
                stats["diff_q"].append(info["q"])
                agent.diffusion_updates += 1
                if agent.diffusion_updates % cfg.ema_interval == 0:
                    nets.ema_update(agent.diffusion.ema_net,
                                    agent.diffusion.net, cfg.ema_decay)
                nets.soft_update(agent.dq1_target, agent.dq1, cfg.tau)
                nets.soft_update(agent.dq2_target, agent.dq2, cfg.tau)

        for agent in self.agents:
            nets.soft_update(agent.actor_target, agent.actor, cfg.tau)
            nets.soft_update(agent.q1_target, agent.q1, cfg.tau)
            nets.soft_update(agent.q2_target, agent.q2, cfg.tau)
        self.update_cycles += 1
        for key in stats:
            stats[key] = float(np.mean(stats[key])) if stats[key] else None
        return stats

    # -- episodes ------------------------------------------------------------

    def run_episode(self, episode):
        """Harvest (if enabled), then roll and train; returns metrics."""
        cfg = self.config
        harvested = 0
        if cfg.use_harvest:
            harvested = harvest_episode(
                self.harvest_world, [a.actor for a in self.agents],
                self.scenario.quality, self.buffer, self.harvest_rng,
                cfg.explore_sigma, nets.forward)

        obs = self.world.reset(self.env_rng)
        lam = self._lambda_bc(episode)
        traj = metrics.TrajectoryRecorder(self.world)
        cycle_stats = []
        for _ in range(cfg.episode_len):
            acts = self._act(obs, self.explore_rng, cfg.explore_sigma)
            next_obs, rewards, done, _ = self.world.step(acts)
            self.buffer.push(Transition(obs, acts, rewards, next_obs,
                                        bool(done), 0))
            traj.record(rewards)
            self.t_total += 1
            if (len(self.buffer) >= cfg.min_buffer
                    and self.t_total % cfg.update_interval == 0):
                cycle_stats.append(self.update_cycle(lam))
            obs = next_obs
            if done:
                break

        record = traj.summarise()
        record.update({
            "episode": episode,
            "seed": cfg.seed,
            "algo": self.algo,
            "harvested": harvested,
            "buffer_interaction": self.buffer.count(0),
            "buffer_harvested": self.buffer.count(1),
            "updates": self.update_cycles,
            "lambda_bc": lam,
        })
        for key in ("critic", "actor", "diff_bc", "diff_q"):
            vals = [s[key] for s in cycle_stats if s[key] is not None]
            record[f"{key}_loss"] = float(np.mean(vals)) if vals else None
        return record

    def run(self, out_dir=None):
        cfg = self.config
        start = time.perf_counter()
        writer = None
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
            self._write_config(out_dir)
            writer = open(os.path.join(out_dir, "metrics.jsonl"), "w")
        result = TrainResult(agents=self.agents)
        try:
            for episode in range(cfg.n_episodes):
                t0 = time.perf_counter()
                try:
                    record = self.run_episode(episode)
                except Exception:
                    if out_dir is not None:
                        self.save_checkpoints(
                            os.path.join(out_dir, "checkpoints", "abort"))
                    raise
                record["wall_time"] = time.perf_counter() - t0
                result.episodes.append(record)
                if writer is not None:
                    writer.write(json.dumps(record, sort_keys=True) + "\n")
                    writer.flush()
                if (out_dir is not None and cfg.save_interval > 0
                        and (episode + 1) % cfg.save_interval == 0):
                    self.save_checkpoints(os.path.join(
                        out_dir, "checkpoints", f"ep{episode + 1}"))
            if out_dir is not None:
                self.save_checkpoints(
                    os.path.join(out_dir, "checkpoints", "final"))
        finally:
            if writer is not None:
                writer.close()
        result.update_cycles = self.update_cycles
        result.wall_time = time.perf_counter() - start
        return result

    # -- persistence ----------------------------------------------------------

    def _write_config(self, out_dir):
        from . import harness
        from . import scenario as scenario_mod
        snapshot = {
            "algo": self.algo,
            "seed": self.config.seed,
            "build_tag": harness.build_tag(),
            "kernel_backend": __import__("sda_marl.kernels",
                                         fromlist=["BACKEND"]).BACKEND,
            "scenario": scenario_mod.to_dict(self.scenario),
            "train": dataclasses.asdict(self.config),
        }
        with open(os.path.join(out_dir, "config.json"), "w") as fh:
            json.dump(snapshot, fh, indent=2, sort_keys=True)

    def save_checkpoints(self, dirpath):
        os.makedirs(dirpath, exist_ok=True)
        for i, agent in enumerate(self.agents):
            checkpoint.save_mlp(agent.actor,
                                os.path.join(dirpath, f"agent{i}_actor.ckpt"))
            checkpoint.save_mlp(agent.q1,
                                os.path.join(dirpath, f"agent{i}_q1.ckpt"))
            checkpoint.save_mlp(agent.q2,
                                os.path.join(dirpath, f"agent{i}_q2.ckpt"))
            if agent.diffusion is not None:
                checkpoint.save_diffusion(
                    agent.diffusion,
                    os.path.join(dirpath, f"agent{i}_diffusion.ckpt"))


def train(scenario, config, algo="sda_marl", out_dir=None):
    """Build a Trainer and run it to completion."""
    return Trainer(scenario, config, algo=algo).run(out_dir=out_dir)


def load_actors(dirpath, n_agents):
    return [checkpoint.load_mlp(
        os.path.join(dirpath, f"agent{i}_actor.ckpt"), nets.TANH)
        for i in range(n_agents)]


def evaluate(actors, scenario, episodes, seed, horizon, traj_path=None):
    """Noise-free rollouts with frozen actors; returns per-episode metrics."""
    world = build_world(scenario, horizon)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    records = []
    writer = open(traj_path, "w") if traj_path is not None else None
    try:
        for episode in range(episodes):
            obs = world.reset(rng)
            traj = metrics.TrajectoryRecorder(world)
            if writer is not None:
                traj.write_jsonl_header(writer, episode, horizon)
            for _ in range(horizon):
                acts = np.clip(np.stack([nets.forward(actors[i], obs[i])
                                         for i in range(world.n_auvs)]),
                               -1.0, 1.0)
                obs, rewards, done, _ = world.step(acts)
                traj.record(rewards)
                if writer is not None:
                    traj.write_jsonl_step(writer, episode)
                if done:
                    break
            record = traj.summarise()
            record["episode"] = episode
            record["seed"] = seed
            records.append(record)
    finally:
        if writer is not None:
            writer.close()
    return records
