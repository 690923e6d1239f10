"""Movement-quality labels and demonstration harvesting."""

import numpy as np
import pytest

from sda_marl.env import (CollisionParams, FluidParams, UnderwaterWorld,
                          WorldParams)
from sda_marl.quality import (QualityParams, assess_quality, harvest_episode,
                              quality_gate)
from sda_marl.replay import ReplayBuffer

P = QualityParams()


def brute_force_label(p_prev, p_curr, p_target, params):
    """Independent re-derivation used as the oracle."""
    move = p_curr - p_prev
    if np.sqrt(np.sum(move ** 2)) < params.min_displacement:
        return 0
    rel = p_target - p_prev
    rel_len = np.sqrt(np.sum(rel ** 2))
    if rel_len == 0.0:
        return 0
    cos = float(np.dot(move, rel) / (np.linalg.norm(move) * rel_len))
    closer = np.linalg.norm(p_curr - p_target) < rel_len
    return int(cos > np.cos(params.angle_threshold) and closer)


def test_straight_approach_is_good():
    assert assess_quality(np.zeros(3), np.array([0.1, 0, 0]),
                          np.array([1.0, 0, 0]), P) == 1


def test_perpendicular_move_is_bad():
    assert assess_quality(np.zeros(3), np.array([0, 0.1, 0]),
                          np.array([1.0, 0, 0]), P) == 0


def test_tiny_move_is_bad():
    assert assess_quality(np.zeros(3), np.full(3, 1e-5),
                          np.array([1.0, 0, 0]), P) == 0


def test_starting_on_target_is_bad():
    assert assess_quality(np.zeros(3), np.array([0.1, 0, 0]),
                          np.zeros(3), P) == 0


def test_angle_threshold_bites():
    target = np.array([10.0, 0, 0])
    for deg, expect in ((40.0, 1), (50.0, 0)):
        a = np.deg2rad(deg)
        curr = 0.05 * np.array([np.cos(a), np.sin(a), 0.0])
        assert assess_quality(np.zeros(3), curr, target, P) == expect


def test_overshoot_is_bad():
    # aligned with the target direction but ends up farther away
    assert assess_quality(np.zeros(3), np.array([0.25, 0, 0]),
                          np.array([0.1, 0, 0]), P) == 0


def test_matches_brute_force_oracle():
    rng = np.random.default_rng(0)
    for _ in range(2000):
        p_prev = rng.uniform(-1, 1, 3)
        p_curr = p_prev + rng.uniform(-0.05, 0.05, 3)
        p_target = rng.uniform(-1, 1, 3)
        assert assess_quality(p_prev, p_curr, p_target, P) == \
            brute_force_label(p_prev, p_curr, p_target, P)


def test_rotation_invariance():
    rng = np.random.default_rng(1)
    for _ in range(300):
        p_prev = rng.uniform(-0.5, 0.5, 3)
        p_curr = p_prev + rng.uniform(-0.05, 0.05, 3)
        p_target = rng.uniform(-0.5, 0.5, 3)
        base = assess_quality(p_prev, p_curr, p_target, P)
        # random rotation via QR
        q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        rot = assess_quality(q @ p_prev, q @ p_curr, q @ p_target, P)
        assert base == rot


def test_scale_invariance_with_scaled_floor():
    rng = np.random.default_rng(2)
    for _ in range(300):
        p_prev = rng.uniform(-0.5, 0.5, 3)
        p_curr = p_prev + rng.uniform(-0.05, 0.05, 3)
        p_target = rng.uniform(-0.5, 0.5, 3)
        s = 7.0
        scaled = QualityParams(min_displacement=s * P.min_displacement,
                               angle_threshold=P.angle_threshold)
        base = assess_quality(p_prev, p_curr, p_target, P)
        big = assess_quality(p_prev, p_prev + s * (p_curr - p_prev),
                             p_prev + s * (p_target - p_prev), scaled)
        assert base == big


def test_gate_sizes():
    assert quality_gate(1) == 1
    assert quality_gate(2) == 1
    assert quality_gate(3) == 1
    assert quality_gate(6) == 2
    assert quality_gate(8) == 2


# ---------------------------------------------------------------------------
# harvesting
# ---------------------------------------------------------------------------


def _calm_world(n_auvs, horizon):
    return UnderwaterWorld(
        n_auvs, 1, horizon=horizon,
        world=WorldParams(current_uniform=(0.0, 0.0, 0.0),
                          vortex_strength=0.0, max_thrust=0.4,
                          target_speed=0.0),
        fluid=FluidParams(drag_coef=0.0, lift_coef=0.0,
                          virtual_mass_coef=0.0, damping=0.5),
        collision=CollisionParams(contact_force=0.0),
    )


def test_stationary_policy_harvests_nothing():
    world = _calm_world(2, horizon=20)
    buf = ReplayBuffer(1000)
    stored = harvest_episode(
        world, [None, None], P, buf, np.random.default_rng(3), sigma=0.0,
        forward_fn=lambda actor, obs: np.zeros(3))
    assert stored == 0
    assert len(buf) == 0


def test_scripted_pursuit_harvests_every_step():
    world = _calm_world(2, horizon=30)
    buf = ReplayBuffer(1000)

    def chase(actor, obs):
        rel = obs[6:9]  # first target slot
        norm = np.linalg.norm(rel)
        return rel / norm if norm > 0 else np.zeros(3)

    stored = harvest_episode(world, [None, None], P, buf,
                             np.random.default_rng(4), sigma=0.0,
                             forward_fn=chase)
    assert stored == 30
    assert len(buf) == 30
    assert buf.count(1) == 30 and buf.count(0) == 0


def test_harvest_deterministic_under_seed():
    counts = []
    for _ in range(2):
        world = UnderwaterWorld(2, 1, horizon=25)
        buf = ReplayBuffer(1000)
        from sda_marl import nets
        rng = np.random.default_rng(5)
        actors = [nets.Mlp.create(world.obs_dim, 3, rng, hidden=8)
                  for _ in range(2)]
        counts.append(harvest_episode(
            world, actors, P, buf, np.random.default_rng(6), sigma=0.1,
            forward_fn=nets.forward))
    assert counts[0] == counts[1]
