"""Chain-of-rooms gridworld with closed doors and a sparse goal reward.

A new layout is drawn on every reset: ``n_rooms`` rectangular rooms (side
``min_size..max_size`` including walls) attached one after another, each
sharing a wall with its predecessor through a single closed door. The agent
starts somewhere in the first room with a random heading; the goal sits in
the last room.

Observations are room-local: the current room's cells, padded to
``max_size x max_size``, one-hot over (wall, closed door, open door, goal,
agent) and followed by a one-hot heading.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ssrl.core import DISCRETE, EnvSpec, Environment, InvalidActionError

FLOOR, WALL, DOOR_CLOSED, DOOR_OPEN, GOAL = range(5)
TURN_LEFT, TURN_RIGHT, FORWARD, OPEN_DOOR, PICKUP, DROP, DONE, STAY = range(8)
N_ACTIONS = 8
# heading 0 faces +x, then clockwise
DIRECTIONS = ((1, 0), (0, 1), (-1, 0), (0, -1))
GOAL_PENALTY = 0.9
N_CHANNELS = 5


@dataclass(frozen=True)
class Room:
    x0: int
    y0: int
    w: int
    h: int

    @property
    def x1(self) -> int:
        return self.x0 + self.w - 1

    @property
    def y1(self) -> int:
        return self.y0 + self.h - 1

    def contains(self, x: int, y: int) -> bool:
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1

    def intersects(self, other: "Room") -> bool:
        return not (self.x1 < other.x0 or other.x1 < self.x0 or self.y1 < other.y0 or other.y1 < self.y0)

    def interior(self) -> list[tuple[int, int]]:
        return [(x, y) for y in range(self.y0 + 1, self.y1) for x in range(self.x0 + 1, self.x1)]


@dataclass
class MultiRoomGrid:
    grid: np.ndarray  # indexed [y, x]
    rooms: list[Room]
    doors: list[tuple[int, int]]
    agent: tuple[int, int]
    direction: int
    goal: tuple[int, int]
    max_steps: int
    steps: int = 0
    done: bool = False

    def room_index(self, x: int | None = None, y: int | None = None) -> int:
        if x is None:
            x, y = self.agent
        # a door cell belongs to both rooms; report the later one
        return max(i for i, room in enumerate(self.rooms) if room.contains(x, y))

    def copy(self) -> "MultiRoomGrid":
        return MultiRoomGrid(self.grid.copy(), list(self.rooms), list(self.doors), self.agent,
                             self.direction, self.goal, self.max_steps, self.steps, self.done)


def _place_next(rng: np.random.Generator, rooms: list[Room], entry_sides: list[int],
                min_size: int, max_size: int, grid_size: int):
    prev = rooms[-1]
    for _ in range(40):
        side = int(rng.integers(4))
        if entry_sides and side == entry_sides[-1]:
            continue
        w, h = (int(v) for v in rng.integers(min_size, max_size + 1, size=2))
        if side in (0, 2):
            dy = int(rng.integers(prev.y0 + 1, prev.y1))
            dx = prev.x1 if side == 0 else prev.x0
            y0 = dy - int(rng.integers(1, h - 1))
            x0 = dx if side == 0 else dx - w + 1
        else:
            dx = int(rng.integers(prev.x0 + 1, prev.x1))
            dy = prev.y1 if side == 1 else prev.y0
            x0 = dx - int(rng.integers(1, w - 1))
            y0 = dy if side == 1 else dy - h + 1
        room = Room(x0, y0, w, h)
        if x0 < 0 or y0 < 0 or room.x1 >= grid_size or room.y1 >= grid_size:
            continue
        if any(room.intersects(other) for other in rooms[:-1]):
            continue
        return room, (dx, dy), (side + 2) % 4
    return None


def generate(rng: np.random.Generator, n_rooms: int = 4, min_size: int = 4, max_size: int = 5,
             grid_size: int = 25, max_steps: int | None = None) -> MultiRoomGrid:
    """Draw a connected chain of rooms."""
    if min_size < 4:
        raise ValueError("rooms need side >= 4 so doors fit between the corners")
    max_steps = 20 * n_rooms * max_size if max_steps is None else max_steps
    for _ in range(1000):
        w, h = (int(v) for v in rng.integers(min_size, max_size + 1, size=2))
        rooms = [Room(int(rng.integers(0, grid_size - w + 1)), int(rng.integers(0, grid_size - h + 1)), w, h)]
        doors, entry_sides = [], []
        while len(rooms) < n_rooms:
            placed = _place_next(rng, rooms, entry_sides, min_size, max_size, grid_size)
            if placed is None:
                break
            room, door, entry = placed
            rooms.append(room)
            doors.append(door)
            entry_sides.append(entry)
        if len(rooms) == n_rooms:
            break
    else:
        raise RuntimeError("could not lay out rooms")

    grid = np.full((grid_size, grid_size), WALL, dtype=np.int8)
    for room in rooms:
        for x, y in room.interior():
            grid[y, x] = FLOOR
    for x, y in doors:
        grid[y, x] = DOOR_CLOSED
    first, last = rooms[0].interior(), rooms[-1].interior()
    agent = first[int(rng.integers(len(first)))]
    goal = last[int(rng.integers(len(last)))]
    while goal == agent:
        goal = last[int(rng.integers(len(last)))]
    grid[goal[1], goal[0]] = GOAL
    return MultiRoomGrid(grid, rooms, doors, agent, int(rng.integers(4)), goal, max_steps)


def goal_reward(steps_taken: int, max_steps: int) -> float:
    return 1.0 - GOAL_PENALTY * steps_taken / max_steps


def multiroom_step(state: MultiRoomGrid, action: int) -> tuple[MultiRoomGrid, float, bool]:
    """Advance ``state`` in place and return it with (reward, done)."""
    if not 0 <= action < N_ACTIONS:
        raise InvalidActionError(f"multiroom action must be in [0, {N_ACTIONS}), got {action!r}")
    if state.done:
        raise RuntimeError("episode already finished")
    state.steps += 1
    reward = 0.0
    x, y = state.agent
    dx, dy = DIRECTIONS[state.direction]
    fx, fy = x + dx, y + dy
    front = state.grid[fy, fx] if 0 <= fx < state.grid.shape[1] and 0 <= fy < state.grid.shape[0] else WALL
    if action == TURN_LEFT:
        state.direction = (state.direction - 1) % 4
    elif action == TURN_RIGHT:
        state.direction = (state.direction + 1) % 4
    elif action == FORWARD:
        if front in (FLOOR, DOOR_OPEN, GOAL):
            state.agent = (fx, fy)
            if front == GOAL:
                reward = goal_reward(state.steps, state.max_steps)
                state.done = True
    elif action == OPEN_DOOR:
        if front == DOOR_CLOSED:
            state.grid[fy, fx] = DOOR_OPEN
        elif front == DOOR_OPEN:
            state.grid[fy, fx] = DOOR_CLOSED
    if state.steps >= state.max_steps:
        state.done = True
    return state, reward, state.done


class MultiRoom(Environment):
    def __init__(self, seed: int | None = None, n_rooms: int = 4, max_size: int = 5,
                 min_size: int = 4, grid_size: int = 25, max_steps: int | None = None):
        self.n_rooms = n_rooms
        self.max_size = max_size
        self.min_size = min_size
        self.grid_size = grid_size
        self.max_steps = 20 * n_rooms * max_size if max_steps is None else max_steps
        self._rng = np.random.default_rng(seed)
        self.state: MultiRoomGrid | None = None

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        self.state = generate(self._rng, self.n_rooms, self.min_size, self.max_size,
                              self.grid_size, self.max_steps)
        return self.observe()

    def step(self, action):
        if self.state is None or self.state.done:
            raise RuntimeError("step() called on a finished episode; call reset()")
        _, reward, done = multiroom_step(self.state, int(action))
        return self.observe(), reward, done

    def observe(self) -> np.ndarray:
        s = self.state
        room = s.rooms[s.room_index()]
        k = self.max_size
        view = np.zeros((N_CHANNELS, k, k))
        cells = s.grid[room.y0:room.y1 + 1, room.x0:room.x1 + 1]
        h, w = cells.shape
        view[0, :h, :w] = cells == WALL
        view[1, :h, :w] = cells == DOOR_CLOSED
        view[2, :h, :w] = cells == DOOR_OPEN
        view[3, :h, :w] = cells == GOAL
        view[4, s.agent[1] - room.y0, s.agent[0] - room.x0] = 1.0
        heading = np.zeros(4)
        heading[s.direction] = 1.0
        return np.concatenate([view.ravel(), heading])

    def spec(self) -> EnvSpec:
        return EnvSpec(N_CHANNELS * self.max_size ** 2 + 4, DISCRETE, N_ACTIONS, self.max_steps)

    def state_id(self) -> int:
        """(room index, room-local cell, heading) packed into one int.

        Cells are measured from the room's corner so that counts are shared
        across layouts: the first room saturates quickly while rooms further
        down the chain stay novel.
        """
        s = self.state
        index = s.room_index()
        room = s.rooms[index]
        x, y = s.agent
        cell = (y - room.y0) * self.max_size + (x - room.x0)
        return (index * self.max_size ** 2 + cell) * 4 + s.direction
