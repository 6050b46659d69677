"""Environments backed by explicit tabular MDPs."""
from __future__ import annotations

import numpy as np

from ssrl.core import DISCRETE, EnvSpec, Environment
from ssrl.theory import TabularMDP


class TabularEnv(Environment):
    """Samples ``p0`` and ``P`` from a seeded stream; observations are one-hot.

    Each step pays ``r(s_t)`` for the state being left, and an episode runs
    for exactly ``T + 1`` steps, so the discounted return of a rollout is
    ``sum_t gamma^t r(s_t)`` over ``t = 0..T``.
    """

    def __init__(self, mdp: TabularMDP, seed: int | None = None):
        if not isinstance(mdp, TabularMDP):
            raise TypeError("TabularEnv needs a TabularMDP")
        self.mdp = mdp
        self._rng = np.random.default_rng(seed)
        self._cdf0 = np.cumsum(mdp.p0)
        self._cdf = np.cumsum(mdp.P, axis=2)
        self.s = 0
        self._t = 0
        self._done = True

    def _draw(self, cdf: np.ndarray) -> int:
        return min(int(np.searchsorted(cdf, self._rng.random() * cdf[-1], side="right")), len(cdf) - 1)

    def _obs(self) -> np.ndarray:
        obs = np.zeros(self.mdp.n_states)
        obs[self.s] = 1.0
        return obs

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        self.s = self._draw(self._cdf0)
        self._t = 0
        self._done = False
        return self._obs()

    def step(self, action):
        if self._done:
            raise RuntimeError("step() called on a finished episode; call reset()")
        reward = float(self.mdp.r[self.s])
        self.s = self._draw(self._cdf[self.s, int(action)])
        self._t += 1
        self._done = self._t > self.mdp.horizon
        return self._obs(), reward, self._done

    def spec(self) -> EnvSpec:
        return EnvSpec(self.mdp.n_states, DISCRETE, self.mdp.n_actions, self.mdp.horizon + 1,
                       deterministic=self.mdp.deterministic)

    def state_id(self) -> int:
        return self.s


def tabular_env_from(mdp: TabularMDP, seed: int | None = None) -> TabularEnv:
    return TabularEnv(mdp, seed)


def chain_mdp(n: int, horizon: int | None = None, gamma: float = 1.0) -> TabularMDP:
    """Deterministic chain: action 0 advances toward the rewarding last state, others stay put.

    Only the last state pays (+1). With ``n=2`` this is the two-state problem
    where action 0 leads to the rewarding state and action 1 does not.
    """
    if n < 2:
        raise ValueError("a chain needs at least two states")
    horizon = n - 1 if horizon is None else horizon
    P = np.zeros((n, 2, n))
    for s in range(n):
        P[s, 0, min(s + 1, n - 1)] = 1.0
        P[s, 1, s] = 1.0
    p0 = np.zeros(n)
    p0[0] = 1.0
    r = np.zeros(n)
    r[-1] = 1.0
    return TabularMDP(p0, P, r, gamma, horizon)
