"""Self-supervised training loop: collect episodes, keep the best pairs, regress onto them."""
from __future__ import annotations

import logging
import math
import os
import tempfile
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ssrl import policy as pn
from ssrl.config import ConfigError, TrainConfig
from ssrl.core import Environment, Trajectory, episodic_reward, rollout, trajectory_lines
from ssrl.envs import make_env
from ssrl.replay import RankingBuffer, RingBuffer

log = logging.getLogger(__name__)

CSV_HEADER = "step,episode_reward,rolling100,wallclock_s,buffer_min,buffer_max,loss"


# ---------------------------------------------------------------------------
# count-based exploration


class StateVisitCounts(dict):
    """Visit count ``N(s)`` per discrete state id."""

    def visit(self, state_id: int) -> int:
        n = self.get(state_id, 0) + 1
        self[state_id] = n
        return n

    @property
    def total(self) -> int:
        return sum(self.values())


def count_bonus(state_id: int, counts: StateVisitCounts, beta: float) -> float:
    """``beta / sqrt(N(s))`` for a state whose count already includes this visit."""
    if beta < 0:
        raise ValueError("beta must be >= 0")
    if beta == 0:
        return 0.0
    return beta / math.sqrt(counts[state_id])


def shape_trajectory(traj: Trajectory, counts: StateVisitCounts, beta: float) -> Trajectory:
    """Add the visit bonus of ``s_t`` to every reward, updating ``counts`` as it goes."""
    if beta == 0:
        return traj
    if traj.state_ids is None:
        raise ConfigError("count-based exploration needs an environment with discrete state ids")
    shaped = np.array(traj.rewards, dtype=np.float64)
    for t in range(len(traj)):
        sid = traj.state_ids[t]
        counts.visit(sid)
        shaped[t] += count_bonus(sid, counts, beta)
    return traj.with_rewards(shaped)


def shaped_rollout(env: Environment, policy_fn, counts: StateVisitCounts, beta: float,
                   rng: np.random.Generator, max_steps: int | None = None) -> tuple[Trajectory, Trajectory]:
    """Roll out once; return (shaped, raw) trajectories.

    The shaped episodic reward is the ranking key; the raw one is what gets reported.
    """
    raw = rollout(env, policy_fn, max_steps or env.spec().max_episode_steps, rng)
    return shape_trajectory(raw, counts, beta), raw


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class EpisodeRecord:
    step: int
    episode_reward: float
    rolling100: float
    wallclock_s: float
    buffer_min: float
    buffer_max: float
    loss: float

    def csv(self) -> str:
        return ",".join([str(self.step)] + [repr(float(v)) for v in (
            self.episode_reward, self.rolling100, self.wallclock_s, self.buffer_min, self.buffer_max, self.loss)])


@dataclass
class TrainMetrics:
    episodes: list[EpisodeRecord] = field(default_factory=list)
    # (buffer_min, buffer_max, mean_loss) per iteration
    iterations: list[tuple[float, float, float]] = field(default_factory=list)
    _window: deque = field(default_factory=lambda: deque(maxlen=100), repr=False)

    def add_episode(self, step: int, reward: float, wallclock: float, buffer_min: float,
                    buffer_max: float, loss: float) -> EpisodeRecord:
        if self.episodes and step <= self.episodes[-1].step:
            raise ValueError("episode steps must be strictly increasing")
        self._window.append(reward)
        rec = EpisodeRecord(step, reward, math.fsum(self._window) / len(self._window), wallclock,
                            buffer_min, buffer_max, loss)
        self.episodes.append(rec)
        return rec

    @property
    def rolling100(self) -> float:
        return self.episodes[-1].rolling100 if self.episodes else float("nan")

    def first_reaching(self, threshold: float) -> EpisodeRecord | None:
        for rec in self.episodes:
            if rec.rolling100 >= threshold:
                return rec
        return None

    def csv_text(self) -> str:
        return CSV_HEADER + "\n" + "".join(rec.csv() + "\n" for rec in self.episodes)

    def write_csv(self, path) -> None:
        atomic_write(path, self.csv_text())


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_metrics_csv(path) -> list[dict[str, float]]:
    lines = Path(path).read_text().splitlines()
    keys = lines[0].split(",")
    return [{k: float(v) for k, v in zip(keys, line.split(","))} for line in lines[1:] if line]


# ---------------------------------------------------------------------------
# policies


def head_for(env: Environment, config: TrainConfig) -> str:
    spec = env.spec()
    natural = pn.CATEGORICAL if spec.discrete else pn.GAUSSIAN
    if config.head != "auto" and config.head != natural:
        raise ConfigError(f"environment {config.env!r} needs a {natural} head, config asks for {config.head}")
    return natural


def make_sampler(params: pn.PolicyParams, sigma: float, low: float = -1.0, high: float = 1.0):
    """Stochastic policy function ``(obs, rng) -> action`` for data collection."""
    (W1, b1), (W2, b2), (W3, b3) = params.layers()
    head = params.head

    def act(obs, rng):
        out = np.tanh(np.tanh(obs @ W1 + b1) @ W2 + b2) @ W3 + b3
        return pn.sample_action(out, head, rng, sigma, low, high)

    return act


def make_greedy(params: pn.PolicyParams, low: float = -1.0, high: float = 1.0):
    def act(obs, rng=None):
        return pn.greedy_action(pn.forward(params, obs), params.head, low, high)

    return act


def evaluate(params: pn.PolicyParams, env: Environment, episodes: int = 1,
             seed: int | None = None) -> list[float]:
    """Episodic rewards of the greedy policy."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    spec = env.spec()
    if params.input_dim != spec.observation_dim or params.output_dim != spec.action_count_or_dim:
        raise pn.ShapeError(f"policy sizes {params.sizes} do not fit environment spec {spec}")
    greedy = make_greedy(params, spec.action_low, spec.action_high)
    rng = np.random.default_rng(seed)
    out = []
    for i in range(episodes):
        traj = rollout(env, greedy, spec.max_episode_steps, rng, seed=None if seed is None or i else seed)
        out.append(episodic_reward(traj))
    return out


# ---------------------------------------------------------------------------
# single-threaded trainer


def _streams(seed: int):
    init, act, batch = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(init), np.random.default_rng(act), np.random.default_rng(batch)


class Trainer:
    """State of one single-threaded run; :meth:`iteration` performs one loop of collect-rank-regress."""

    def __init__(self, config: TrainConfig, trace_dir=None):
        self.config = config.validate()
        self.env = make_env(config.env, config.seed)
        self.spec = self.env.spec()
        head = head_for(self.env, config)
        init_rng, self.act_rng, self.batch_rng = _streams(config.seed)
        self.params = pn.init_params(self.spec.observation_dim, self.spec.action_count_or_dim, head,
                                     init_rng, config.hidden)
        self.adam = pn.AdamState.zeros(self.params.flat.size, config.learning_rate)
        if config.ring_buffer:
            self.buffer = RingBuffer(config.ring_capacity, config.ring_threshold)
        else:
            self.buffer = RankingBuffer(config.buffer_size)
        self.counts = StateVisitCounts()
        self.metrics = TrainMetrics()
        self.steps = 0
        self.n_episodes = 0
        self.n_iterations = 0
        self.last_loss = float("nan")
        self.trace_dir = Path(trace_dir) if trace_dir and config.trace_every else None
        self.episode_store: dict[int, tuple[Trajectory, float]] = {}
        self._t0 = time.perf_counter()
        if config.beta > 0:
            self.env.reset(config.seed)
            if self.env.state_id() is None:
                raise ConfigError(f"count-based exploration is not supported on {config.env!r}")
        self._first_reset = True

    @property
    def done(self) -> bool:
        c = self.config
        if self.steps >= c.total_steps:
            return True
        return c.target_return is not None and len(self.metrics.episodes) >= 1 and \
            self.metrics.rolling100 >= c.target_return

    def _wallclock(self) -> float:
        return time.perf_counter() - self._t0 if self.config.record_wallclock else 0.0

    def collect_episode(self) -> Trajectory:
        c = self.config
        sampler = make_sampler(self.params, c.sigma, self.spec.action_low, self.spec.action_high)
        seed = c.seed if self._first_reset else None
        self._first_reset = False
        raw = rollout(self.env, sampler, self.spec.max_episode_steps, self.act_rng, seed=seed)
        key = episodic_reward(raw)
        if c.beta > 0:
            key = episodic_reward(shape_trajectory(raw, self.counts, c.beta))
        ep = self.n_episodes
        self.n_episodes += 1
        self.buffer.insert_episode(raw, key=key, episode=ep)
        if self.trace_dir is not None and isinstance(self.buffer, RankingBuffer):
            self.episode_store[ep] = (raw, key)
            live = self.buffer.episode_ids()
            for old in [k for k in self.episode_store if k not in live]:
                del self.episode_store[old]
        self.steps += len(raw)
        self.metrics.add_episode(self.steps, episodic_reward(raw), self._wallclock(), *self.buffer_range(),
                                 self.last_loss)
        return raw

    def buffer_range(self) -> tuple[float, float]:
        """(min, max) retained reward, nan while a thresholded buffer is still empty."""
        if len(self.buffer) == 0:
            return float("nan"), float("nan")
        return self.buffer.min_retained_reward(), self.buffer.max_retained_reward()

    def update(self) -> float:
        """Run the configured number of supervised steps; returns the mean loss."""
        c = self.config
        if len(self.buffer) == 0:
            return self.last_loss
        losses = []
        for _ in range(c.training_steps):
            batch = self.buffer.sample_batch(c.batch_size, self.batch_rng)
            loss, grad = pn.loss_and_grad(self.params, batch, c.entropy_coef)
            self.params, self.adam = pn.adam_step(self.params, grad, self.adam)
            losses.append(loss)
        self.last_loss = float(np.mean(losses))
        return self.last_loss

    def iteration(self) -> None:
        c = self.config
        episodes = steps = 0
        while not self.done:
            if c.rollout_unit == "episodes" and episodes >= c.rollout_steps:
                break
            if c.rollout_unit == "steps" and steps >= c.rollout_steps:
                break
            steps += len(self.collect_episode())
            episodes += 1
        if episodes == 0:
            return
        self.update()
        self.n_iterations += 1
        self.metrics.iterations.append((*self.buffer_range(), self.last_loss))
        if self.trace_dir is not None and self.n_iterations % c.trace_every == 0:
            self.export_trace()

    def run(self) -> tuple[pn.PolicyParams, TrainMetrics]:
        while not self.done:
            self.iteration()
        if self.trace_dir is not None and self.n_iterations % self.config.trace_every != 0:
            self.export_trace()
        return self.params, self.metrics

    def best_and_worst(self) -> tuple[tuple[Trajectory, float], tuple[Trajectory, float]] | None:
        if not self.episode_store:
            return None
        ranked = sorted(self.episode_store.items(), key=lambda kv: (kv[1][1], kv[0]))
        return ranked[-1][1], ranked[0][1]

    def export_trace(self) -> list[Path]:
        return export_buffer_trace(self, self.trace_dir)


def export_buffer_trace(trainer: Trainer, out_dir) -> list[Path]:
    """Write the best and worst buffered episodes for the current iteration."""
    if out_dir is None or not trainer.config.trace_every:
        return []
    pair = trainer.best_and_worst()
    if pair is None:
        return []
    out_dir = Path(out_dir)
    written = []
    for kind, (traj, key) in zip(("best", "worst"), pair):
        path = out_dir / f"trace_{trainer.n_iterations:06d}_{kind}.txt"
        header = f"# iteration={trainer.n_iterations} kind={kind} episodic_reward={key!r}\n"
        atomic_write(path, header + "".join(line + "\n" for line in trajectory_lines(traj)))
        written.append(path)
    return written


def train(config: TrainConfig, trace_dir=None) -> tuple[pn.PolicyParams, TrainMetrics]:
    """Train a policy with the ranking-buffer loop, or the threaded variant if configured."""
    if config.distributed:
        from ssrl.distributed import train_distributed
        params, metrics, _ = train_distributed(config)
        return params, metrics
    return Trainer(config, trace_dir).run()
