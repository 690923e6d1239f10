"""Ring replay buffer with source-tagged joint transitions.

Each entry stores one team transition: per-agent observations, actions,
rewards, next observations, a shared done flag, and a source tag (0 =
ordinary interaction, 1 = harvested demonstration).  The buffer keeps
exact per-source counts through eviction so tests and training can rely
on the bookkeeping.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SOURCE_INTERACTION = 0
SOURCE_HARVESTED = 1


class BufferUnderfilled(RuntimeError):
    """Not enough matching entries to fill the requested batch."""

    def __init__(self, message, available):
        super().__init__(message)
        self.available = available


@dataclass
class Transition:
    obs: np.ndarray          # (n_agents, obs_dim)
    actions: np.ndarray      # (n_agents, action_dim)
    rewards: np.ndarray      # (n_agents,)
    next_obs: np.ndarray     # (n_agents, obs_dim)
    done: bool
    source: int

    def __post_init__(self):
        if self.source not in (SOURCE_INTERACTION, SOURCE_HARVESTED):
            raise ValueError(f"source must be 0 or 1, got {self.source}")


class ReplayBuffer:
    """Fixed-capacity ring; oldest entries are overwritten first."""

    def __init__(self, capacity):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self._entries = []
        self._next = 0
        self._sources = np.zeros(self.capacity, dtype=np.int8)
        self._counts = [0, 0]

    def __len__(self):
        return len(self._entries)

    def count(self, source):
        return self._counts[source]

    def push(self, transition):
        if len(self._entries) < self.capacity:
            self._entries.append(transition)
        else:
            evicted = self._entries[self._next]
            self._counts[evicted.source] -= 1
            self._entries[self._next] = transition
        self._sources[self._next] = transition.source
        self._counts[transition.source] += 1
        self._next = (self._next + 1) % self.capacity

    def sample(self, batch_size, filter_mode, rng):
        """Uniform sample (with replacement) as stacked arrays.

        filter_mode "any" (alias "mixed") draws from everything stored;
        "only_1" draws from harvested entries alone and signals
        BufferUnderfilled when fewer than batch_size exist.
        """
        size = len(self._entries)
        if filter_mode in ("any", "mixed"):
            if size < batch_size:
                raise BufferUnderfilled(
                    f"buffer holds {size} < batch {batch_size}", size)
            idx = rng.integers(0, size, size=batch_size)
        elif filter_mode == "only_1":
            pool = np.flatnonzero(self._sources[:size] == SOURCE_HARVESTED)
            if pool.shape[0] < batch_size:
                raise BufferUnderfilled(
                    f"{pool.shape[0]} harvested entries < batch {batch_size}",
                    pool.shape[0])
            idx = pool[rng.integers(0, pool.shape[0], size=batch_size)]
        else:
            raise ValueError(f"unknown filter mode {filter_mode!r}")
        entries = [self._entries[i] for i in idx]
        return {
            "obs": np.stack([e.obs for e in entries]),
            "actions": np.stack([e.actions for e in entries]),
            "rewards": np.stack([e.rewards for e in entries]),
            "next_obs": np.stack([e.next_obs for e in entries]),
            "done": np.array([e.done for e in entries], dtype=np.float64),
            "source": np.array([e.source for e in entries], dtype=np.int64),
            "indices": idx,
        }
