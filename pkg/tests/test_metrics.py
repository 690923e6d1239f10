"""Episode metrics and trajectory logs."""

import io
import json

import numpy as np
import pytest

from sda_marl import metrics
from sda_marl.env import UnderwaterWorld
from sda_marl.metrics import (TrajectoryRecorder, TruncatedLog,
                              compute_from_arrays, compute_metrics_from_log,
                              load_trajectory)


def _arrays(steps, n_auvs=2, n_targets=1):
    """Small all-zero trajectory block (AUVs glued to the target)."""
    return dict(
        start_pos=np.zeros((n_auvs, 3)),
        pos=np.zeros((steps, n_auvs, 3)),
        vel=np.zeros((steps, n_auvs, 3)),
        target_pos=np.zeros((steps, n_targets, 3)),
        target_vel=np.zeros((steps, n_targets, 3)),
        rewards=np.zeros((steps, n_auvs)),
        assigned=np.zeros(n_auvs, dtype=int),
    )


def test_glued_to_target_scores_perfectly():
    m = compute_from_arrays(**_arrays(10))
    assert m["accuracy"] == 1.0
    assert m["vel_diff_mean"] == 0.0
    assert m["vel_diff_sd"] == 0.0
    assert m["path_length"] == [0.0, 0.0]
    assert m["mean_cum_reward"] == 0.0
    assert m["steps"] == 10


def test_straight_line_path_length():
    a = _arrays(100)
    # unit speed along x, snapshot every 0.1 time units
    a["pos"][:, 0, 0] = 0.1 * np.arange(1, 101)
    m = compute_from_arrays(**a)
    assert m["path_length"][0] == pytest.approx(10.0)
    assert m["path_length"][1] == 0.0


def test_accuracy_counts_steps_within_threshold():
    a = _arrays(4, n_auvs=1)
    a["pos"][:, 0, 0] = [0.01, 0.05, 0.2, 0.5]
    m = compute_from_arrays(**a, threshold=0.08)
    assert m["accuracy"] == 0.5


def test_accuracy_threshold_is_strict():
    a = _arrays(1, n_auvs=1)
    a["pos"][0, 0, 0] = 0.08
    assert compute_from_arrays(**a, threshold=0.08)["accuracy"] == 0.0


def test_velocity_difference_statistics():
    a = _arrays(2, n_auvs=1)
    a["vel"][0, 0, 0] = 1.0
    a["vel"][1, 0, 0] = 3.0
    m = compute_from_arrays(**a)
    assert m["vel_diff_mean"] == pytest.approx(2.0)
    assert m["vel_diff_sd"] == pytest.approx(1.0)  # population deviation


def test_assignment_picks_the_right_target():
    a = _arrays(1, n_auvs=2, n_targets=2)
    a["target_pos"] = np.array([[[0.0, 0, 0], [5.0, 0, 0]]])
    a["pos"] = np.array([[[0.0, 0, 0], [5.0, 0, 0]]])
    a["assigned"] = np.array([0, 1])
    assert compute_from_arrays(**a)["accuracy"] == 1.0
    a["assigned"] = np.array([1, 0])
    assert compute_from_arrays(**a)["accuracy"] == 0.0


def test_mean_cum_reward_averages_over_agents():
    a = _arrays(3)
    a["rewards"] = np.array([[1.0, 0.0], [2.0, 0.0], [3.0, 1.0]])
    assert compute_from_arrays(**a)["mean_cum_reward"] == pytest.approx(3.5)


def test_empty_trajectory_rejected():
    with pytest.raises(ValueError, match="empty"):
        compute_from_arrays(**_arrays(0))


# ---------------------------------------------------------------------------
# recorder and JSONL round trip
# ---------------------------------------------------------------------------


def test_recorder_needs_reset_world():
    world = UnderwaterWorld(2, 1, horizon=10)
    with pytest.raises(RuntimeError, match="reset"):
        TrajectoryRecorder(world)


def _roll(world, recorder, fh, steps, rng):
    for _ in range(steps):
        acts = rng.uniform(-1, 1, (world.n_auvs, 3))
        _, rewards, _, _ = world.step(acts)
        recorder.record(rewards)
        if fh is not None:
            recorder.write_jsonl_step(fh, 0)


def test_jsonl_round_trip_reproduces_metrics(tmp_path):
    rng = np.random.default_rng(0)
    world = UnderwaterWorld(2, 1, horizon=15)
    world.reset(rng)
    rec = TrajectoryRecorder(world)
    path = tmp_path / "traj.jsonl"
    with open(path, "w") as fh:
        rec.write_jsonl_header(fh, 0, 15)
        _roll(world, rec, fh, 15, rng)
    direct = rec.summarise()
    from_log = compute_metrics_from_log(str(path))
    assert len(from_log) == 1
    replayed = {k: v for k, v in from_log[0].items() if k != "episode"}
    for key in direct:
        if key == "path_length":
            np.testing.assert_allclose(replayed[key], direct[key], atol=1e-12)
        else:
            assert replayed[key] == pytest.approx(direct[key], abs=1e-12)


def test_truncated_log_rejected(tmp_path):
    rng = np.random.default_rng(1)
    world = UnderwaterWorld(2, 1, horizon=10)
    world.reset(rng)
    rec = TrajectoryRecorder(world)
    path = tmp_path / "short.jsonl"
    with open(path, "w") as fh:
        rec.write_jsonl_header(fh, 0, 10)
        _roll(world, rec, fh, 4, rng)  # stops early
    with pytest.raises(TruncatedLog, match="horizon 10"):
        load_trajectory(str(path))


def test_non_contiguous_steps_rejected(tmp_path):
    base = {"auv_pos": [[0, 0, 0]], "auv_vel": [[0, 0, 0]],
            "target_pos": [[0, 0, 0]], "target_vel": [[0, 0, 0]],
            "assigned": [0], "rewards": [0.0]}
    path = tmp_path / "gap.jsonl"
    with open(path, "w") as fh:
        for step in (0, 1, 3):
            rec = dict(base, episode=0, step=step)
            if step == 0:
                rec["horizon"] = 3
            fh.write(json.dumps(rec) + "\n")
    with pytest.raises(TruncatedLog, match="non-contiguous"):
        load_trajectory(str(path))


def test_header_carries_horizon_and_zero_rewards():
    rng = np.random.default_rng(2)
    world = UnderwaterWorld(3, 1, horizon=5)
    world.reset(rng)
    rec = TrajectoryRecorder(world)
    buf = io.StringIO()
    rec.write_jsonl_header(buf, 7, 5)
    header = json.loads(buf.getvalue())
    assert header["episode"] == 7
    assert header["step"] == 0
    assert header["horizon"] == 5
    assert header["rewards"] == [0.0, 0.0, 0.0]
    assert len(header["auv_pos"]) == 3
    assert header["assigned"] == world.state.assigned.tolist()


def test_default_threshold_value():
    assert metrics.ACCURACY_THRESHOLD == 0.08
