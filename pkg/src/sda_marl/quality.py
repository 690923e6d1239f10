"""Movement-quality labelling and demonstration harvesting.

A step is high quality for one AUV when its displacement both points
toward where the target was and actually shortens the distance to it.
Harvested episodes run on a separate world instance under the current
actors plus exploration noise; a team step is stored (tagged source 1)
when at least max(1, floor(N/3)) of the N AUVs moved well.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .replay import SOURCE_HARVESTED, Transition


@dataclass
class QualityParams:
    min_displacement: float = 1e-3   # below this the step is noise
    angle_threshold: float = np.pi / 4


def assess_quality(p_prev, p_curr, p_target, params):
    """Label one movement 1 (useful) or 0 (not).

    The movement must be at least min_displacement long, point within
    angle_threshold of the direction from the previous position to the
    target, and end closer to the target than it started.  Degenerate
    geometry (no movement, or starting exactly on the target) is 0.
    Scale- and rotation-invariant apart from the displacement floor.
    """
    p_prev = np.asarray(p_prev, dtype=np.float64)
    p_curr = np.asarray(p_curr, dtype=np.float64)
    p_target = np.asarray(p_target, dtype=np.float64)
    move = p_curr - p_prev
    move_len = np.linalg.norm(move)
    if move_len < params.min_displacement:
        return 0
    to_target = p_target - p_prev
    dist_prev = np.linalg.norm(to_target)
    if dist_prev == 0.0:
        return 0
    cos_angle = np.dot(move, to_target) / (move_len * dist_prev)
    if cos_angle <= np.cos(params.angle_threshold):
        return 0
    if np.linalg.norm(p_curr - p_target) >= dist_prev:
        return 0
    return 1


def quality_gate(n_agents):
    """Minimum count of well-moving AUVs for a team step to be kept."""
    return max(1, n_agents // 3)


def harvest_episode(world, actors, params, buffer, rng, sigma, forward_fn):
    """Run one episode and bank the well-executed team steps.

    Actions come from the given per-agent actors with additive Gaussian
    exploration of scale sigma.  Labels are judged against the target
    positions from before the step (the geometry the agents reacted
    to).  Returns the number of transitions stored.
    """
    n = world.n_auvs
    gate = quality_gate(n)
    obs = world.reset(rng)
    stored = 0
    for _ in range(world.horizon):
        noise = sigma * rng.standard_normal((n, 3))
        acts = np.stack([forward_fn(actors[i], obs[i]) for i in range(n)])
        acts = np.clip(acts + noise, -1.0, 1.0)
        prev_pos = world.state.auv_pos.copy()
        prev_target = world.state.target_pos[world.state.assigned].copy()
        next_obs, rewards, done, _ = world.step(acts)
        labels = sum(
            assess_quality(prev_pos[i], world.state.auv_pos[i],
                           prev_target[i], params)
            for i in range(n)
        )
        if labels >= gate:
            buffer.push(Transition(obs, acts, rewards, next_obs, bool(done),
                                   SOURCE_HARVESTED))
            stored += 1
        obs = next_obs
        if done:
            break
    return stored
