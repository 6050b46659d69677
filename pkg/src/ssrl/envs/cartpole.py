"""Cart-pole balancing with the classic constants and Euler integration."""
from __future__ import annotations

import math

import numpy as np

from ssrl.core import DISCRETE, EnvSpec, Environment, InvalidActionError

GRAVITY = 9.8
CART_MASS = 1.0
POLE_MASS = 0.1
TOTAL_MASS = CART_MASS + POLE_MASS
HALF_LENGTH = 0.5
POLE_MASS_LENGTH = POLE_MASS * HALF_LENGTH
FORCE_MAG = 10.0
TAU = 0.02
ANGLE_LIMIT = 12 * 2 * math.pi / 360
POSITION_LIMIT = 2.4
MAX_STEPS = 500


def dynamics(state, force: float) -> tuple[float, float, float, float]:
    """One Euler step of (x, x_dot, theta, theta_dot) under ``force``."""
    x, x_dot, theta, theta_dot = state
    cos, sin = math.cos(theta), math.sin(theta)
    temp = (force + POLE_MASS_LENGTH * theta_dot * theta_dot * sin) / TOTAL_MASS
    theta_acc = (GRAVITY * sin - cos * temp) / (
        HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos * cos / TOTAL_MASS))
    x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos / TOTAL_MASS
    return (x + TAU * x_dot, x_dot + TAU * x_acc, theta + TAU * theta_dot, theta_dot + TAU * theta_acc)


def out_of_bounds(state) -> bool:
    return abs(state[0]) > POSITION_LIMIT or abs(state[2]) > ANGLE_LIMIT


def cartpole_step(state, action: int) -> tuple[tuple, float, bool]:
    """Push left (0) or right (1); reward 1 for every step taken."""
    if action not in (0, 1):
        raise InvalidActionError(f"cart-pole action must be 0 or 1, got {action!r}")
    nxt = dynamics(state, FORCE_MAG if action == 1 else -FORCE_MAG)
    return nxt, 1.0, out_of_bounds(nxt)


class CartPole(Environment):
    def __init__(self, seed: int | None = None, max_steps: int = MAX_STEPS):
        self.max_steps = max_steps
        self._rng = np.random.default_rng(seed)
        self.state = (0.0, 0.0, 0.0, 0.0)
        self._t = 0
        self._done = True

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        self.state = tuple(float(v) for v in self._rng.uniform(-0.05, 0.05, size=4))
        self._t = 0
        self._done = False
        return np.array(self.state)

    def step(self, action):
        if self._done:
            raise RuntimeError("step() called on a finished episode; call reset()")
        self.state, reward, failed = cartpole_step(self.state, int(action))
        self._t += 1
        self._done = failed or self._t >= self.max_steps
        return np.array(self.state), reward, self._done

    def spec(self) -> EnvSpec:
        return EnvSpec(4, DISCRETE, 2, self.max_steps)
