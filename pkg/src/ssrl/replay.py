"""Ranking buffer and threshold-filtered ring buffer of state-action pairs."""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ssrl.core import Trajectory, episodic_reward


class EmptyBufferError(RuntimeError):
    pass


class BatchSample(NamedTuple):
    observations: np.ndarray
    actions: np.ndarray


@dataclass(frozen=True)
class RankedPair:
    observation: np.ndarray
    action: object
    episodic_reward: float
    seq: int
    episode: int = -1


class _Contents(NamedTuple):
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    seqs: np.ndarray
    episodes: np.ndarray


def _actions_array(traj: Trajectory) -> np.ndarray:
    if isinstance(traj.actions[0], np.ndarray):
        return np.stack(traj.actions).astype(np.float64)
    return np.asarray(traj.actions, dtype=np.int64)


class RankingBuffer:
    """Keeps the ``capacity`` pairs with the highest source-episode reward.

    Pairs are ordered by (episodic reward desc, insertion seq desc), so at
    equal reward newer pairs win. Contents are swapped in as a whole under a
    write lock; readers take the current snapshot without locking and never
    observe a half-inserted episode.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self._contents: _Contents | None = None
        self._next_seq = 0
        self._next_episode = 0
        self._lock = threading.Lock()

    def __len__(self) -> int:
        c = self._contents
        return 0 if c is None else len(c.rewards)

    def insert_episode(self, traj: Trajectory, key: float | None = None,
                       episode: int | None = None) -> int:
        """Add every pair of ``traj`` and truncate to capacity.

        ``key`` overrides the ranking reward (used for shaped rewards).
        Returns how many of the new pairs were retained.
        """
        reward = episodic_reward(traj) if key is None else float(key)
        n = len(traj)
        acts = _actions_array(traj)
        with self._lock:
            if episode is None:
                episode = self._next_episode
            self._next_episode = max(self._next_episode, episode + 1)
            seqs = np.arange(self._next_seq, self._next_seq + n, dtype=np.int64)
            self._next_seq += n
            new = _Contents(np.asarray(traj.observations), acts, np.full(n, reward),
                            seqs, np.full(n, episode, dtype=np.int64))
            old = self._contents
            if old is not None:
                new = _Contents(*(np.concatenate([o, x]) for o, x in zip(old, new)))
            order = np.lexsort((-new.seqs, -new.rewards))[: self.capacity]
            kept = _Contents(*(a[order] for a in new))
            for a in kept:
                a.setflags(write=False)
            self._contents = kept
            return int(np.count_nonzero(kept.seqs >= seqs[0]))

    def snapshot(self) -> _Contents:
        c = self._contents
        if c is None:
            raise EmptyBufferError("buffer is empty")
        return c

    def pairs(self) -> list[RankedPair]:
        c = self._contents
        if c is None:
            return []
        return [RankedPair(c.obs[i], c.actions[i], float(c.rewards[i]), int(c.seqs[i]), int(c.episodes[i]))
                for i in range(len(c.rewards))]

    def sample_batch(self, n: int, rng: np.random.Generator) -> BatchSample:
        """Draw ``n`` pairs uniformly with replacement."""
        c = self.snapshot()
        idx = rng.integers(0, len(c.rewards), size=n)
        return BatchSample(c.obs[idx], c.actions[idx])

    def min_retained_reward(self) -> float:
        return float(self.snapshot().rewards[-1])

    def max_retained_reward(self) -> float:
        return float(self.snapshot().rewards[0])

    def episode_ids(self) -> set[int]:
        c = self._contents
        return set() if c is None else set(np.unique(c.episodes).tolist())

    def dump(self) -> str:
        """Snapshot in trajectory line format with the episodic reward appended."""
        c = self._contents
        if c is None:
            return ""
        lines = []
        for i in range(len(c.rewards)):
            a = c.actions[i]
            act = ",".join(repr(float(x)) for x in a) if np.ndim(a) else str(int(a))
            state = ",".join(repr(float(x)) for x in c.obs[i])
            reward = repr(float(c.rewards[i]))
            lines.append(f"{i}\t{state}\t{act}\t{reward}\t{reward}\n")
        return "".join(lines)


class RingBuffer:
    """Fixed-capacity circular store fed only with episodes above a threshold."""

    def __init__(self, capacity: int, threshold: float = 0.0):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.threshold = float(threshold)
        self._obs = None
        self._actions = None
        self._rewards = np.zeros(self.capacity)
        self._size = 0
        self._cursor = 0
        self._lock = threading.RLock()

    def __len__(self) -> int:
        return self._size

    def _allocate(self, obs_dim: int, acts: np.ndarray):
        self._obs = np.zeros((self.capacity, obs_dim))
        self._actions = np.zeros((self.capacity,) + acts.shape[1:], dtype=acts.dtype)

    def ring_insert(self, traj: Trajectory, threshold: float | None = None, key: float | None = None) -> bool:
        """Write all pairs of ``traj`` if its reward clears the threshold."""
        threshold = self.threshold if threshold is None else float(threshold)
        reward = episodic_reward(traj) if key is None else float(key)
        if reward < threshold:
            return False
        acts = _actions_array(traj)
        obs = np.asarray(traj.observations)
        n = len(traj)
        if n > self.capacity:
            obs, acts, n = obs[-self.capacity:], acts[-self.capacity:], self.capacity
        with self._lock:
            if self._obs is None:
                self._allocate(obs.shape[1], acts)
            idx = (self._cursor + np.arange(n)) % self.capacity
            self._obs[idx] = obs
            self._actions[idx] = acts
            self._rewards[idx] = reward
            self._cursor = int((self._cursor + n) % self.capacity)
            self._size = min(self.capacity, self._size + n)
        return True

    # common name used by the trainer for both buffer kinds
    def insert_episode(self, traj: Trajectory, key: float | None = None, episode: int | None = None) -> int:
        return len(traj) if self.ring_insert(traj, key=key) else 0

    def sample_batch(self, n: int, rng: np.random.Generator) -> BatchSample:
        with self._lock:
            if self._size == 0:
                raise EmptyBufferError("buffer is empty")
            idx = rng.integers(0, self._size, size=n)
            return BatchSample(self._obs[idx].copy(), self._actions[idx].copy())

    def contents(self) -> BatchSample:
        """Stored pairs from oldest to newest."""
        with self._lock:
            if self._size < self.capacity:
                order = np.arange(self._size)
            else:
                order = (self._cursor + np.arange(self.capacity)) % self.capacity
            return BatchSample(self._obs[order].copy(), self._actions[order].copy())

    def min_retained_reward(self) -> float:
        with self._lock:
            if self._size == 0:
                raise EmptyBufferError("buffer is empty")
            return float(self._rewards[: self._size].min())

    def max_retained_reward(self) -> float:
        with self._lock:
            if self._size == 0:
                raise EmptyBufferError("buffer is empty")
            return float(self._rewards[: self._size].max())
