"""Episode metrics and trajectory logging.

Metrics per episode: tracking accuracy (fraction of steps within the
accuracy threshold of the assigned target), velocity-difference mean
and standard deviation against the assigned target, per-AUV path
length, and mean cumulative reward across agents.

Trajectory logs are JSONL, one record per step.  Step 0 is the
post-reset state (zero rewards) and carries the intended horizon;
subsequent records hold the post-step state and that step's rewards.
A log whose episodes stop short of their declared horizon is rejected.
"""

from __future__ import annotations

import json

import numpy as np

ACCURACY_THRESHOLD = 0.08


class TruncatedLog(ValueError):
    """Trajectory log ends before the declared horizon."""


def compute_from_arrays(start_pos, pos, vel, target_pos, target_vel,
                        rewards, assigned, threshold=ACCURACY_THRESHOLD):
    """Metrics from stacked per-step arrays.

    pos/vel are (steps, n_auvs, 3) post-step states; target arrays are
    (steps, n_targets, 3); start_pos is the post-reset AUV position
    block used to anchor path length.
    """
    steps = pos.shape[0]
    if steps == 0:
        raise ValueError("empty trajectory")
    idx = np.asarray(assigned)
    d_t = np.linalg.norm(pos - target_pos[:, idx, :], axis=2)      # (L, N)
    accuracy = float(np.mean(d_t < threshold))
    vd = np.linalg.norm(vel - target_vel[:, idx, :], axis=2)
    full_path = np.concatenate([start_pos[None, :, :], pos], axis=0)
    seg = np.linalg.norm(np.diff(full_path, axis=0), axis=2)       # (L, N)
    return {
        "accuracy": accuracy,
        "vel_diff_mean": float(np.mean(vd)),
        "vel_diff_sd": float(np.std(vd)),
        "path_length": [float(x) for x in seg.sum(axis=0)],
        "mean_cum_reward": float(np.mean(np.sum(rewards, axis=0))),
        "steps": int(steps),
    }


class TrajectoryRecorder:
    """Accumulates post-step snapshots of one episode of a world."""

    def __init__(self, world):
        s = world.state
        if s is None:
            raise RuntimeError("recorder needs a reset world")
        self.start_pos = s.auv_pos.copy()
        self.assigned = s.assigned.copy()
        self.pos, self.vel, self.tpos, self.tvel, self.rewards = \
            [], [], [], [], []
        self._world = world

    def record(self, rewards):
        s = self._world.state
        self.pos.append(s.auv_pos.copy())
        self.vel.append(s.auv_vel.copy())
        self.tpos.append(s.target_pos.copy())
        self.tvel.append(s.target_vel.copy())
        self.rewards.append(np.asarray(rewards, dtype=np.float64).copy())

    def summarise(self, threshold=ACCURACY_THRESHOLD):
        return compute_from_arrays(
            self.start_pos, np.stack(self.pos), np.stack(self.vel),
            np.stack(self.tpos), np.stack(self.tvel),
            np.stack(self.rewards), self.assigned, threshold)

    # -- JSONL ---------------------------------------------------------------

    def _state_fields(self):
        s = self._world.state
        return {
            "auv_pos": s.auv_pos.tolist(),
            "auv_vel": s.auv_vel.tolist(),
            "target_pos": s.target_pos.tolist(),
            "target_vel": s.target_vel.tolist(),
            "assigned": s.assigned.tolist(),
        }

    def write_jsonl_header(self, fh, episode, horizon):
        rec = {"episode": episode, "step": 0, "horizon": horizon,
               "rewards": [0.0] * self._world.n_auvs}
        rec.update(self._state_fields())
        fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def write_jsonl_step(self, fh, episode):
        rec = {"episode": episode, "step": len(self.pos),
               "rewards": [float(x) for x in self.rewards[-1]]}
        rec.update(self._state_fields())
        fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_trajectory(path):
    """Parse a trajectory log into per-episode arrays.

    Returns {episode: {"start_pos", "pos", "vel", "target_pos",
    "target_vel", "rewards", "assigned"}} and enforces contiguous step
    indices reaching each episode's declared horizon.
    """
    episodes = {}
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            episodes.setdefault(rec["episode"], []).append(rec)
    out = {}
    for ep, recs in episodes.items():
        recs.sort(key=lambda r: r["step"])
        steps = [r["step"] for r in recs]
        if steps != list(range(len(recs))):
            raise TruncatedLog(
                f"episode {ep}: non-contiguous steps {steps[:5]}...")
        horizon = recs[0].get("horizon")
        if horizon is not None and len(recs) - 1 < horizon:
            raise TruncatedLog(
                f"episode {ep}: {len(recs) - 1} steps logged, "
                f"horizon {horizon} declared")
        out[ep] = {
            "start_pos": np.array(recs[0]["auv_pos"]),
            "pos": np.array([r["auv_pos"] for r in recs[1:]]),
            "vel": np.array([r["auv_vel"] for r in recs[1:]]),
            "target_pos": np.array([r["target_pos"] for r in recs[1:]]),
            "target_vel": np.array([r["target_vel"] for r in recs[1:]]),
            "rewards": np.array([r["rewards"] for r in recs[1:]]),
            "assigned": np.array(recs[0]["assigned"]),
        }
    return out


def compute_metrics_from_log(path, threshold=ACCURACY_THRESHOLD):
    """Per-episode metric dicts recomputed from a trajectory log."""
    loaded = load_trajectory(path)
    out = []
    for ep in sorted(loaded):
        data = loaded[ep]
        rec = compute_from_arrays(
            data["start_pos"], data["pos"], data["vel"], data["target_pos"],
            data["target_vel"], data["rewards"], data["assigned"], threshold)
        rec["episode"] = ep
        out.append(rec)
    return out
