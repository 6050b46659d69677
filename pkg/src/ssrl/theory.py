"""Exact tabular machinery for checking the policy-improvement argument.

Everything here works on explicit finite MDPs with state rewards ``r(s)``:
transition counting over a set of whole trajectories, the
uniformly-distributed condition, the hypothetical (empirical) policy,
exact evaluation through discounted visitation frequencies, and a verifier
that ties them together.

Trajectories are indexed ``t = 0..T``; step ``t`` records ``(s_t, a_t,
s_{t+1})`` and earns ``r(s_t)``. Shorter trajectories are padded up to the
horizon when they end in an absorbing zero-reward state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ssrl.core import Trajectory
from ssrl.replay import RankingBuffer


class PreconditionError(ValueError):
    """The trajectory set violates the uniformly-distributed condition."""

    def __init__(self, message: str, max_deviation: float):
        super().__init__(message)
        self.max_deviation = max_deviation


@dataclass(frozen=True)
class TabularMDP:
    p0: np.ndarray
    P: np.ndarray
    r: np.ndarray
    gamma: float
    horizon: int

    def __post_init__(self):
        p0 = np.asarray(self.p0, dtype=np.float64)
        P = np.asarray(self.P, dtype=np.float64)
        r = np.asarray(self.r, dtype=np.float64)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValueError(f"P must have shape (S, A, S), got {P.shape}")
        n = P.shape[0]
        if p0.shape != (n,) or r.shape != (n,):
            raise ValueError("p0 and r must have one entry per state")
        if np.any(P < 0) or np.any(P > 1) or np.any(p0 < 0) or np.any(p0 > 1):
            raise ValueError("probabilities must lie in [0, 1]")
        if abs(p0.sum() - 1.0) > 1e-9 or np.any(np.abs(P.sum(axis=2) - 1.0) > 1e-9):
            raise ValueError("p0 and every P[s, a] row must sum to 1")
        if not np.all(np.isfinite(r)):
            raise ValueError("rewards must be finite")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if int(self.horizon) != self.horizon or self.horizon < 0:
            raise ValueError("horizon must be a non-negative integer")
        for name, value in (("p0", p0), ("P", P), ("r", r)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, "horizon", int(self.horizon))

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @property
    def n_actions(self) -> int:
        return self.P.shape[1]

    @property
    def deterministic(self) -> bool:
        return bool(np.all((self.P == 0) | (self.P == 1)) and np.all((self.p0 == 0) | (self.p0 == 1)))

    def is_absorbing(self, s: int) -> bool:
        return bool(np.all(self.P[s, :, s] == 1.0) and self.r[s] == 0.0)


@dataclass(frozen=True)
class TabularTrajectory:
    states: tuple[int, ...]
    actions: tuple[int, ...]
    next_states: tuple[int, ...]

    def __post_init__(self):
        if not (len(self.states) == len(self.actions) == len(self.next_states) >= 1):
            raise ValueError("tabular trajectory needs equal, non-zero numbers of states/actions/next states")
        for t in range(len(self.states) - 1):
            if self.next_states[t] != self.states[t + 1]:
                raise ValueError(f"next_states[{t}] does not match states[{t + 1}]")

    @classmethod
    def from_path(cls, states: Sequence[int], actions: Sequence[int]) -> "TabularTrajectory":
        """Build from ``s_0..s_{L}`` and ``a_0..a_{L-1}``."""
        states = [int(s) for s in states]
        if len(states) != len(actions) + 1:
            raise ValueError("need exactly one more state than actions")
        return cls(tuple(states[:-1]), tuple(int(a) for a in actions), tuple(states[1:]))

    @classmethod
    def from_trajectory(cls, traj: Trajectory) -> "TabularTrajectory":
        if traj.state_ids is None:
            raise ValueError("trajectory carries no discrete state ids")
        return cls.from_path(traj.state_ids, [int(a) for a in traj.actions])

    def __len__(self) -> int:
        return len(self.states)


def _as_tabular(trajs: Iterable) -> list[TabularTrajectory]:
    out = [t if isinstance(t, TabularTrajectory) else TabularTrajectory.from_trajectory(t) for t in trajs]
    if not out:
        raise ValueError("trajectory set must be non-empty")
    return out


def pad_to_horizon(traj: TabularTrajectory, mdp: TabularMDP) -> TabularTrajectory:
    """Extend ``traj`` to ``T + 1`` steps through its absorbing final state."""
    length = mdp.horizon + 1
    if len(traj) > length:
        raise ValueError(f"trajectory has {len(traj)} steps, horizon allows {length}")
    if len(traj) == length:
        return traj
    last = traj.next_states[-1]
    if not mdp.is_absorbing(last):
        raise ValueError(f"cannot pad: final state {last} is not absorbing with zero reward")
    k = length - len(traj)
    return TabularTrajectory(traj.states + (last,) * k, traj.actions + (0,) * k, traj.next_states + (last,) * k)


def transition_counts(trajs: Iterable, mdp: TabularMDP) -> np.ndarray:
    """Full count tensor ``C[t, s, a, s']`` for ``t = 0..T``."""
    trajs = [pad_to_horizon(t, mdp) for t in _as_tabular(trajs)]
    S, A = mdp.n_states, mdp.n_actions
    C = np.zeros((mdp.horizon + 1, S, A, S), dtype=np.int64)
    for tr in trajs:
        s, a, s2 = np.asarray(tr.states), np.asarray(tr.actions), np.asarray(tr.next_states)
        if s.min() < 0 or s.max() >= S or s2.min() < 0 or s2.max() >= S:
            raise ValueError("state id out of range")
        if a.min() < 0 or a.max() >= A:
            raise ValueError("action id out of range")
        np.add.at(C, (np.arange(len(s)), s, a, s2), 1)
    return C


def _check_index(value, bound: int, name: str):
    if value is None:
        return slice(None)
    if not 0 <= value < bound:
        raise ValueError(f"{name}={value} out of range [0, {bound})")
    return value


def count(trajs, mdp: TabularMDP, s=None, a=None, s_next=None, t=None) -> int:
    """``C(trajs, s, a, s', t)``; ``None`` is the wildcard (sum over that slot)."""
    C = trajs if isinstance(trajs, np.ndarray) else transition_counts(trajs, mdp)
    idx = (_check_index(t, C.shape[0], "t"), _check_index(s, mdp.n_states, "s"),
           _check_index(a, mdp.n_actions, "a"), _check_index(s_next, mdp.n_states, "s_next"))
    return int(C[idx].sum())


def is_uniformly_distributed(trajs, mdp: TabularMDP, tol: float = 1e-9) -> tuple[bool, float]:
    """Check empirical initial-state and transition frequencies against the MDP."""
    trajs = _as_tabular(trajs)
    C = transition_counts(trajs, mdp)
    n = len(trajs)
    worst = float(np.max(np.abs(mdp.p0 - C[0].sum(axis=(1, 2)) / n)))
    sa_t = C.sum(axis=3)
    visited = sa_t > 0
    if np.any(visited):
        freq = C[visited] / sa_t[visited][:, None]
        t_idx, s_idx, a_idx = np.nonzero(visited)
        worst = max(worst, float(np.max(np.abs(mdp.P[s_idx, a_idx] - freq))))
    return worst <= tol, worst


def hypothetical_policy(trajs, mdp: TabularMDP, per_timestep: bool = False) -> np.ndarray:
    """Empirical action frequencies of ``trajs``.

    The stationary form pools all timesteps, ``C(s, a, ., .) / C(s, ., ., .)``,
    and returns an ``(S, A)`` matrix. With ``per_timestep`` the frequencies
    are taken separately at every ``t``, giving ``(T + 1, S, A)``. Rows of
    unvisited states are uniform.
    """
    C = transition_counts(trajs, mdp).sum(axis=3)
    if not per_timestep:
        C = C.sum(axis=0)
    totals = C.sum(axis=-1, keepdims=True)
    uniform = np.full(C.shape, 1.0 / mdp.n_actions)
    with np.errstate(invalid="ignore", divide="ignore"):
        pi = np.where(totals > 0, C / np.maximum(totals, 1), uniform)
    return pi


def check_policy(policy: np.ndarray, mdp: TabularMDP) -> np.ndarray:
    policy = np.asarray(policy, dtype=np.float64)
    shape_ok = policy.shape == (mdp.n_states, mdp.n_actions) or policy.shape == (
        mdp.horizon + 1, mdp.n_states, mdp.n_actions)
    if not shape_ok:
        raise ValueError(f"policy shape {policy.shape} does not match the MDP")
    if np.any(policy < 0) or np.any(np.abs(policy.sum(axis=-1) - 1.0) > 1e-9):
        raise ValueError("policy rows must be probability vectors")
    return policy


def visitation_frequencies(policy: np.ndarray, mdp: TabularMDP) -> np.ndarray:
    """``p[t, s]``: probability of being in ``s`` at ``t`` under ``policy``.

    ``policy`` is ``(S, A)`` for a stationary policy or ``(T + 1, S, A)``
    for a time-indexed one.
    """
    policy = check_policy(policy, mdp)
    T = mdp.horizon
    p = np.empty((T + 1, mdp.n_states))
    p[0] = mdp.p0
    for t in range(T):
        pi_t = policy if policy.ndim == 2 else policy[t]
        # p[t+1][s] = sum_{s', a} p[t][s'] pi(a|s') P(s|s', a)
        p[t + 1] = np.einsum("i,ia,iaj->j", p[t], pi_t, mdp.P)
    return p


def discounted_visitation(policy: np.ndarray, mdp: TabularMDP) -> np.ndarray:
    p = visitation_frequencies(policy, mdp)
    return (mdp.gamma ** np.arange(mdp.horizon + 1)) @ p


def exact_return(policy: np.ndarray, mdp: TabularMDP) -> float:
    """Expected discounted return ``sum_s rho(s) r(s)``."""
    return float(discounted_visitation(policy, mdp) @ mdp.r)


def tabular_return(traj: TabularTrajectory, mdp: TabularMDP) -> float:
    """Discounted return of one trajectory, padded to the horizon."""
    traj = pad_to_horizon(traj, mdp)
    weights = mdp.gamma ** np.arange(len(traj))
    return math.fsum(weights * mdp.r[np.asarray(traj.states)])


def mean_return(trajs, mdp: TabularMDP) -> float:
    trajs = _as_tabular(trajs)
    return math.fsum(tabular_return(t, mdp) for t in trajs) / len(trajs)


def trajectories_improvement(trajs, policy: np.ndarray, mdp: TabularMDP) -> float:
    """Mean discounted return of ``trajs`` minus the exact return of ``policy``."""
    return mean_return(trajs, mdp) - exact_return(policy, mdp)


@dataclass(frozen=True)
class TheoremReport:
    equality_error: float
    delta: float
    return_hypothetical: float
    return_current: float
    mean_trajectory_return: float
    stationary_equality_error: float
    unvisited_mass: float
    holds: bool

    def lines(self) -> list[str]:
        return [
            f"equality_error={self.equality_error!r}",
            f"delta={self.delta!r}",
            f"return_hypothetical={self.return_hypothetical!r}",
            f"return_current={self.return_current!r}",
            f"mean_trajectory_return={self.mean_trajectory_return!r}",
            f"stationary_equality_error={self.stationary_equality_error!r}",
            f"unvisited_mass={self.unvisited_mass!r}",
            f"holds={'true' if self.holds else 'false'}",
        ]


def verify_theorem_1(trajs, current_policy: np.ndarray, mdp: TabularMDP, tol: float = 1e-9) -> TheoremReport:
    """Check that imitating ``trajs`` is at least as good as ``current_policy``.

    Builds the time-indexed hypothetical policy of ``trajs``, checks that its
    exact return equals the mean discounted return of the trajectories, and
    that a non-negative improvement ``delta`` implies the hypothetical policy
    is no worse than the current one. The stationary (time-pooled) policy is
    also evaluated and its equality error reported; that identity is only
    guaranteed when each state's action frequencies do not depend on ``t``.
    """
    trajs = _as_tabular(trajs)
    ok, deviation = is_uniformly_distributed(trajs, mdp, tol)
    if not ok:
        raise PreconditionError(
            f"trajectories are not uniformly distributed (max deviation {deviation:.6g})", deviation)
    mean_ret = mean_return(trajs, mdp)
    pi_t = hypothetical_policy(trajs, mdp, per_timestep=True)
    r_hyp = exact_return(pi_t, mdp)
    r_cur = exact_return(current_policy, mdp)
    delta = mean_ret - r_cur
    equality_error = abs(r_hyp - mean_ret)

    pi_s = hypothetical_policy(trajs, mdp)
    stationary_error = abs(exact_return(pi_s, mdp) - mean_ret)
    visited = transition_counts(trajs, mdp).sum(axis=(0, 2, 3)) > 0
    unvisited_mass = float(visitation_frequencies(pi_s, mdp)[:, ~visited].sum())

    improves = delta < 0 or r_hyp >= r_cur - tol
    return TheoremReport(equality_error, delta, r_hyp, r_cur, mean_ret, stationary_error,
                         unvisited_mass, equality_error <= tol and improves)


def filter_top(trajs, mdp: TabularMDP, fraction: float) -> list[TabularTrajectory]:
    """Keep the best ``ceil(fraction * n)`` trajectories via a ranking buffer.

    Each (padded) trajectory goes through :class:`RankingBuffer` keyed by its
    discounted return, with room for exactly that many whole episodes. Ties
    favour later trajectories, as in training.
    """
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    trajs = [pad_to_horizon(t, mdp) for t in _as_tabular(trajs)]
    keep = max(1, math.ceil(fraction * len(trajs)))
    length = mdp.horizon + 1
    buffer = RankingBuffer(keep * length)
    eye = np.eye(mdp.n_states)
    for i, tr in enumerate(trajs):
        episode = Trajectory(eye[list(tr.states)], tuple(tr.actions),
                             np.zeros(length), state_ids=tr.states + (tr.next_states[-1],))
        buffer.insert_episode(episode, key=tabular_return(tr, mdp), episode=i)
    return [trajs[i] for i in sorted(buffer.episode_ids())]


def random_deterministic_mdp(rng: np.random.Generator, n_states: int, n_actions: int,
                             horizon: int, gamma: float = 1.0) -> TabularMDP:
    """Random MDP with one-hot initial distribution and transitions."""
    P = np.zeros((n_states, n_actions, n_states))
    nxt = rng.integers(0, n_states, size=(n_states, n_actions))
    P[np.arange(n_states)[:, None], np.arange(n_actions)[None, :], nxt] = 1.0
    p0 = np.zeros(n_states)
    p0[rng.integers(n_states)] = 1.0
    r = rng.normal(size=n_states)
    return TabularMDP(p0, P, r, gamma, horizon)


def random_policy(rng: np.random.Generator, n_states: int, n_actions: int) -> np.ndarray:
    return rng.dirichlet(np.ones(n_actions), size=n_states)


def sample_trajectory(mdp: TabularMDP, policy: np.ndarray, rng: np.random.Generator) -> TabularTrajectory:
    """Draw one full-horizon trajectory directly from the tables."""
    policy = check_policy(policy, mdp)
    states, actions, nexts = [], [], []
    s = int(rng.choice(mdp.n_states, p=mdp.p0))
    for t in range(mdp.horizon + 1):
        pi = policy if policy.ndim == 2 else policy[t]
        a = int(rng.choice(mdp.n_actions, p=pi[s]))
        s2 = int(rng.choice(mdp.n_states, p=mdp.P[s, a]))
        states.append(s)
        actions.append(a)
        nexts.append(s2)
        s = s2
    return TabularTrajectory(tuple(states), tuple(actions), tuple(nexts))


def parse_mdp(text: str) -> TabularMDP:
    """Parse the plain-text MDP format.

    First line ``n_states n_actions gamma T``, then the p0 row, the reward
    row and ``n_states * n_actions`` transition rows ordered by state then
    action. Blank lines and ``#`` comments are ignored.
    """
    rows = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            rows.append(line.split())
    if not rows or len(rows[0]) != 4:
        raise ValueError("header must be 'n_states n_actions gamma T'")
    n, m, gamma, horizon = int(rows[0][0]), int(rows[0][1]), float(rows[0][2]), int(rows[0][3])
    if len(rows) != 3 + n * m:
        raise ValueError(f"expected {3 + n * m} rows, got {len(rows)}")
    body = [[float(x) for x in row] for row in rows[1:]]
    if any(len(row) != n for row in body):
        raise ValueError(f"every row after the header needs {n} values")
    P = np.asarray(body[2:]).reshape(n, m, n)
    return TabularMDP(np.asarray(body[0]), P, np.asarray(body[1]), gamma, horizon)


def format_mdp(mdp: TabularMDP) -> str:
    def row(values):
        return " ".join(repr(float(v)) for v in values)

    lines = [f"{mdp.n_states} {mdp.n_actions} {mdp.gamma!r} {mdp.horizon}", row(mdp.p0), row(mdp.r)]
    lines += [row(mdp.P[s, a]) for s in range(mdp.n_states) for a in range(mdp.n_actions)]
    return "\n".join(lines) + "\n"
