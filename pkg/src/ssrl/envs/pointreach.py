"""Planar point mass steered toward a goal; a small continuous-action task."""
from __future__ import annotations

import numpy as np

from ssrl.core import CONTINUOUS, EnvSpec, Environment

STEP_SCALE = 0.05
SUCCESS_RADIUS = 0.05
MAX_STEPS = 50
GOAL_RADIUS = 0.8


def pointreach_step(state, action) -> tuple[np.ndarray, float, bool]:
    """``state`` is (x, y, goal_x, goal_y); actions are clamped to [-1, 1]."""
    state = np.asarray(state, dtype=np.float64)
    pos, goal = state[:2], state[2:]
    dist = float(np.linalg.norm(pos - goal))
    if dist < SUCCESS_RADIUS:
        return state.copy(), -dist, True
    pos = pos + STEP_SCALE * np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
    dist = float(np.linalg.norm(pos - goal))
    return np.concatenate([pos, goal]), -dist, dist < SUCCESS_RADIUS


class PointReach(Environment):
    """Start at the origin; the goal sits at a random angle on a fixed-radius circle."""

    def __init__(self, seed: int | None = None, max_steps: int = MAX_STEPS):
        self.max_steps = max_steps
        self._rng = np.random.default_rng(seed)
        self.state = np.zeros(4)
        self._t = 0
        self._done = True

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        angle = self._rng.uniform(0.0, 2.0 * np.pi)
        self.state = np.array([0.0, 0.0, GOAL_RADIUS * np.cos(angle), GOAL_RADIUS * np.sin(angle)])
        self._t = 0
        self._done = False
        return self.state.copy()

    def step(self, action):
        if self._done:
            raise RuntimeError("step() called on a finished episode; call reset()")
        self.state, reward, reached = pointreach_step(self.state, action)
        self._t += 1
        self._done = reached or self._t >= self.max_steps
        return self.state.copy(), reward, self._done

    def spec(self) -> EnvSpec:
        return EnvSpec(4, CONTINUOUS, 2, self.max_steps)
