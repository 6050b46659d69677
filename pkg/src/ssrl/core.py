"""Trajectories, returns and the environment interface shared by every module."""
from __future__ import annotations

import abc
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

DISCRETE = "discrete"
CONTINUOUS = "continuous"


class InvalidActionError(ValueError):
    """An action does not fit the environment's action space."""


@dataclass(frozen=True)
class EnvSpec:
    observation_dim: int
    action_kind: str
    action_count_or_dim: int
    max_episode_steps: int
    deterministic: bool = False
    action_low: float = -1.0
    action_high: float = 1.0

    def __post_init__(self):
        if self.action_kind not in (DISCRETE, CONTINUOUS):
            raise ValueError(f"unknown action kind {self.action_kind!r}")
        if self.observation_dim < 1 or self.action_count_or_dim < 1 or self.max_episode_steps < 1:
            raise ValueError(f"EnvSpec sizes must be >= 1: {self}")

    @property
    def discrete(self) -> bool:
        return self.action_kind == DISCRETE

    def check_action(self, action):
        """Return ``action`` in canonical form or raise :class:`InvalidActionError`."""
        if self.discrete:
            if isinstance(action, (bool, np.bool_)):
                raise InvalidActionError(f"boolean is not an action index: {action!r}")
            try:
                index = int(action)
            except (TypeError, ValueError):
                raise InvalidActionError(f"discrete action must be an integer, got {action!r}")
            if index != action or not 0 <= index < self.action_count_or_dim:
                raise InvalidActionError(
                    f"action {action!r} outside [0, {self.action_count_or_dim})")
            return index
        vec = np.asarray(action, dtype=np.float64).reshape(-1)
        if vec.shape[0] != self.action_count_or_dim or not np.all(np.isfinite(vec)):
            raise InvalidActionError(
                f"continuous action must be {self.action_count_or_dim} finite values, got {action!r}")
        return vec


class Environment(abc.ABC):
    """Single-threaded episodic environment.

    Implementations are reproducible: the same ``reset`` seed followed by the
    same actions yields the same observations and rewards.
    """

    @abc.abstractmethod
    def reset(self, seed: int | None = None) -> np.ndarray:
        """Start an episode. ``seed=None`` continues the internal random stream."""

    @abc.abstractmethod
    def step(self, action) -> tuple[np.ndarray, float, bool]:
        """Advance one timestep; returns (observation, reward, done)."""

    @abc.abstractmethod
    def spec(self) -> EnvSpec:
        ...

    def state_id(self) -> int | None:
        """Discrete id of the current state, or None for continuous-state envs."""
        return None


@dataclass(frozen=True)
class Trajectory:
    """One episode: steps ``t = 0..T`` of (observation, action, reward).

    ``state_ids`` is optional; when present it has one entry per step plus the
    id of the state reached after the final step.
    """

    observations: np.ndarray
    actions: tuple
    rewards: np.ndarray
    state_ids: tuple[int, ...] | None = None
    truncated: bool = field(default=False, compare=False)

    def __post_init__(self):
        obs = np.array(self.observations, dtype=np.float64, copy=True)
        if obs.ndim == 1:
            obs = obs.reshape(-1, 1)
        rewards = np.array(self.rewards, dtype=np.float64, copy=True).reshape(-1)
        actions = tuple(a.copy() if isinstance(a, np.ndarray) else a for a in self.actions)
        n = len(actions)
        if n == 0:
            raise ValueError("trajectory must contain at least one step")
        if obs.shape[0] != n or rewards.shape[0] != n:
            raise ValueError(
                f"inconsistent trajectory lengths: obs={obs.shape[0]} actions={n} rewards={rewards.shape[0]}")
        if not np.all(np.isfinite(rewards)):
            raise ValueError("trajectory rewards must be finite")
        if self.state_ids is not None and len(self.state_ids) != n + 1:
            raise ValueError("state_ids needs one entry per step plus the final state")
        obs.setflags(write=False)
        rewards.setflags(write=False)
        for a in actions:
            if isinstance(a, np.ndarray):
                a.setflags(write=False)
        object.__setattr__(self, "observations", obs)
        object.__setattr__(self, "rewards", rewards)
        object.__setattr__(self, "actions", actions)
        if self.state_ids is not None:
            object.__setattr__(self, "state_ids", tuple(int(s) for s in self.state_ids))

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def terminal_timestep(self) -> int:
        return len(self.actions) - 1

    @property
    def steps(self) -> list[tuple[np.ndarray, object, float]]:
        return [(self.observations[t], self.actions[t], float(self.rewards[t])) for t in range(len(self))]

    def with_rewards(self, rewards: Sequence[float]) -> "Trajectory":
        return Trajectory(self.observations, self.actions, np.asarray(rewards, dtype=np.float64),
                          self.state_ids, self.truncated)

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (np.array_equal(self.observations, other.observations)
                and np.array_equal(self.rewards, other.rewards)
                and len(self.actions) == len(other.actions)
                and all(np.array_equal(a, b) for a, b in zip(self.actions, other.actions))
                and self.state_ids == other.state_ids)

    __hash__ = None


def episodic_reward(traj: Trajectory) -> float:
    """Undiscounted sum of rewards; the ranking key of the buffer."""
    return math.fsum(traj.rewards)


def discounted_return(traj: Trajectory, gamma: float) -> float:
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    if gamma == 1.0:
        return episodic_reward(traj)
    weights = gamma ** np.arange(len(traj))
    return math.fsum(weights * traj.rewards)


PolicyFn = Callable[[np.ndarray, np.random.Generator], object]


def rollout(env: Environment, policy_fn: PolicyFn, max_steps: int,
            rng: np.random.Generator, seed: int | None = None) -> Trajectory:
    """Run one episode of ``policy_fn`` in ``env``.

    The episode ends on the environment's done flag or after ``max_steps``
    steps, whichever comes first. Truncation carries no reward adjustment.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    spec = env.spec()
    obs = env.reset(seed)
    track_ids = env.state_id() is not None
    observations, actions, rewards, ids = [], [], [], []
    done = False
    while not done and len(actions) < max_steps:
        if track_ids:
            ids.append(env.state_id())
        action = spec.check_action(policy_fn(obs, rng))
        observations.append(np.asarray(obs, dtype=np.float64))
        actions.append(action)
        obs, reward, done = env.step(action)
        rewards.append(reward)
    if track_ids:
        ids.append(env.state_id())
    return Trajectory(np.asarray(observations), tuple(actions), np.asarray(rewards),
                      tuple(ids) if track_ids else None, truncated=not done)


def _format_action(action) -> str:
    if isinstance(action, np.ndarray):
        return ",".join(repr(float(x)) for x in action)
    return str(action)


def trajectory_lines(traj: Trajectory, extra: Iterable[str] = ()) -> Iterator[str]:
    """Yield ``t<TAB>state_csv<TAB>action<TAB>reward[<TAB>extra...]`` lines."""
    extra = tuple(extra)
    for t in range(len(traj)):
        state = ",".join(repr(float(x)) for x in traj.observations[t])
        cols = [str(t), state, _format_action(traj.actions[t]), repr(float(traj.rewards[t])), *extra]
        yield "\t".join(cols)


def dump_trajectory(traj: Trajectory) -> str:
    return "".join(line + "\n" for line in trajectory_lines(traj))


def load_trajectory(text: str) -> Trajectory:
    """Inverse of :func:`dump_trajectory`; ``#`` lines and extra trailing columns are ignored."""
    observations, actions, rewards = [], [], []
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) < 4:
            raise ValueError(f"malformed trajectory line: {line!r}")
        observations.append([float(x) for x in cols[1].split(",")])
        if "," in cols[2] or "." in cols[2] or "e" in cols[2].lower():
            actions.append(np.array([float(x) for x in cols[2].split(",")]))
        else:
            actions.append(int(cols[2]))
        rewards.append(float(cols[3]))
    return Trajectory(np.asarray(observations), tuple(actions), np.asarray(rewards))
