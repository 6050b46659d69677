"""Fixed-layout 5x5 taxi: pick the passenger up bottom-left, drop off top-right."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from ssrl.core import DISCRETE, EnvSpec, Environment, InvalidActionError

SIZE = 5
UP, DOWN, LEFT, RIGHT, PICKUP, DROPOFF = range(6)
ACTION_NAMES = ("Up", "Down", "Left", "Right", "PickUp", "DropOff")
MOVES = {UP: (-1, 0), DOWN: (1, 0), LEFT: (0, -1), RIGHT: (0, 1)}

TAXI_START = (0, 0)
PASSENGER_CELL = (SIZE - 1, 0)
GOAL_CELL = (0, SIZE - 1)
MAX_STEPS = 200

STEP_PENALTY = -1.0
WRONG_ACTION_PENALTY = -10.0
DELIVERY_REWARD = 20.0
N_STATES = SIZE * SIZE * 2


@dataclass(frozen=True)
class TaxiState:
    taxi_row: int
    taxi_col: int
    in_taxi: bool = False

    def __post_init__(self):
        if not (0 <= self.taxi_row < SIZE and 0 <= self.taxi_col < SIZE):
            raise ValueError(f"taxi position {(self.taxi_row, self.taxi_col)} outside the grid")

    @property
    def cell(self) -> tuple[int, int]:
        return self.taxi_row, self.taxi_col

    @property
    def id(self) -> int:
        return (self.taxi_row * SIZE + self.taxi_col) * 2 + int(self.in_taxi)


def taxi_step(state: TaxiState, action: int) -> tuple[TaxiState, float, bool]:
    """Pure transition function; the step cap is enforced by :class:`Taxi`."""
    if not isinstance(action, (int, np.integer)) or not 0 <= action < 6:
        raise InvalidActionError(f"taxi action must be in [0, 6), got {action!r}")
    if action in MOVES:
        dr, dc = MOVES[action]
        row = min(max(state.taxi_row + dr, 0), SIZE - 1)
        col = min(max(state.taxi_col + dc, 0), SIZE - 1)
        return TaxiState(row, col, state.in_taxi), STEP_PENALTY, False
    if action == PICKUP:
        if not state.in_taxi and state.cell == PASSENGER_CELL:
            return TaxiState(state.taxi_row, state.taxi_col, True), STEP_PENALTY, False
        return state, WRONG_ACTION_PENALTY, False
    if state.in_taxi and state.cell == GOAL_CELL:
        return state, DELIVERY_REWARD, True
    return state, WRONG_ACTION_PENALTY, False


def observe(state: TaxiState) -> np.ndarray:
    obs = np.zeros(N_STATES)
    obs[state.id] = 1.0
    return obs


class Taxi(Environment):
    def __init__(self, seed: int | None = None, max_steps: int = MAX_STEPS):
        self.max_steps = max_steps
        self.state = TaxiState(*TAXI_START)
        self._t = 0
        self._done = True

    def reset(self, seed: int | None = None) -> np.ndarray:
        self.state = TaxiState(*TAXI_START)
        self._t = 0
        self._done = False
        return observe(self.state)

    def step(self, action):
        if self._done:
            raise RuntimeError("step() called on a finished episode; call reset()")
        self.state, reward, done = taxi_step(self.state, int(action))
        self._t += 1
        self._done = done or self._t >= self.max_steps
        return observe(self.state), reward, self._done

    def spec(self) -> EnvSpec:
        return EnvSpec(N_STATES, DISCRETE, 6, self.max_steps, deterministic=True)

    def state_id(self) -> int:
        return self.state.id


def optimal_return() -> float:
    """Best achievable episodic reward, by breadth-first search over (cell, passenger)."""
    start = TaxiState(*TAXI_START)
    frontier = deque([(start, 0.0)])
    best = {start: 0.0}
    result = -np.inf
    # every reward but the final delivery is a cost, so BFS by step count with
    # only the -1 moves/pickups is enough: wrong actions never help
    while frontier:
        state, total = frontier.popleft()
        for action in range(6):
            nxt, reward, done = taxi_step(state, action)
            value = total + reward
            if done:
                result = max(result, value)
                continue
            if reward == WRONG_ACTION_PENALTY:
                continue
            if nxt not in best or best[nxt] < value:
                best[nxt] = value
                frontier.append((nxt, value))
    return float(result)
