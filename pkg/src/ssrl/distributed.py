"""Threaded actors, workers and a single chief sharing one buffer.

Actors roll out episodes with the latest published parameters and push them
into the buffer. Workers sample batches and compute gradients against their
own (possibly stale) snapshot. The chief applies gradients one at a time
with Adam and publishes a new versioned snapshot after each.

Workers may only submit as many gradients as the single-threaded loop would
have applied for the data collected so far (``training_steps`` per
``rollout_steps`` episodes or steps), so a run consumes the same env-step
budget at the same update-to-data ratio.
"""
from __future__ import annotations

import queue
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from ssrl import policy as pn
from ssrl.config import TrainConfig
from ssrl.core import episodic_reward, rollout
from ssrl.envs import make_env
from ssrl.replay import RankingBuffer, RingBuffer
from ssrl.trainer import StateVisitCounts, TrainMetrics, head_for, make_sampler, shape_trajectory


class VersionedParams:
    """Atomically published (version, params) pair; readers always see a complete version."""

    def __init__(self, params: pn.PolicyParams):
        self._current = (0, params)

    def snapshot(self) -> tuple[int, pn.PolicyParams]:
        return self._current

    def publish(self, params: pn.PolicyParams) -> int:
        version = self._current[0] + 1
        self._current = (version, params)
        return version


@dataclass
class DistributedStats:
    submitted: int = 0
    applied: int = 0
    versions: list[int] = field(default_factory=list)
    max_buffer_len: int = 0
    episodes: int = 0

    @property
    def versions_monotone(self) -> bool:
        return all(b == a + 1 for a, b in zip(self.versions, self.versions[1:]))


class _Run:
    def __init__(self, config: TrainConfig):
        self.config = config.validate()
        probe = make_env(config.env, config.seed)
        self.spec = probe.spec()
        head = head_for(probe, config)
        seqs = np.random.SeedSequence(config.seed).spawn(1 + config.n_actors + config.n_workers)
        init_rng = np.random.default_rng(seqs[0])
        self.actor_seeds = seqs[1:1 + config.n_actors]
        self.worker_seeds = seqs[1 + config.n_actors:]
        params = pn.init_params(self.spec.observation_dim, self.spec.action_count_or_dim, head,
                                init_rng, config.hidden)
        self.shared = VersionedParams(params)
        self.adam = pn.AdamState.zeros(params.flat.size, config.learning_rate)
        if config.ring_buffer:
            self.buffer = RingBuffer(config.ring_capacity, config.ring_threshold)
        else:
            self.buffer = RankingBuffer(config.buffer_size)
        self.capacity = self.buffer.capacity
        self.grads: queue.Queue = queue.Queue()
        self.stop = threading.Event()
        self.lock = threading.Lock()
        self.data_ready = threading.Condition(self.lock)
        self.metrics = TrainMetrics()
        self.stats = DistributedStats()
        self.counts = StateVisitCounts()
        self.steps = 0
        self.collected_units = 0
        self.last_loss = float("nan")
        self.t0 = time.perf_counter()
        self.errors: list[BaseException] = []

    # -- budget ---------------------------------------------------------------
    def _update_allowance(self) -> int:
        c = self.config
        return (self.collected_units // c.rollout_steps) * c.training_steps - self.stats.submitted

    def _finished(self) -> bool:
        c = self.config
        if self.steps >= c.total_steps:
            return True
        return c.target_return is not None and bool(self.metrics.episodes) and \
            self.metrics.rolling100 >= c.target_return

    # -- threads --------------------------------------------------------------
    def actor(self, index: int) -> None:
        c = self.config
        rng = np.random.default_rng(self.actor_seeds[index])
        env = make_env(c.env, c.seed + 7919 * (index + 1))
        first = True
        while not self.stop.is_set():
            _, params = self.shared.snapshot()
            sampler = make_sampler(params, c.sigma, self.spec.action_low, self.spec.action_high)
            traj = rollout(env, sampler, self.spec.max_episode_steps, rng,
                           seed=c.seed + 7919 * (index + 1) if first else None)
            first = False
            with self.lock:
                if self.stop.is_set():
                    return
                key = episodic_reward(traj)
                if c.beta > 0:
                    key = episodic_reward(shape_trajectory(traj, self.counts, c.beta))
                self.buffer.insert_episode(traj, key=key)
                n = len(self.buffer)
                self.stats.max_buffer_len = max(self.stats.max_buffer_len, n)
                self.stats.episodes += 1
                self.steps += len(traj)
                self.collected_units += 1 if c.rollout_unit == "episodes" else len(traj)
                bmin = self.buffer.min_retained_reward() if n else float("nan")
                bmax = self.buffer.max_retained_reward() if n else float("nan")
                wall = time.perf_counter() - self.t0 if c.record_wallclock else 0.0
                self.metrics.add_episode(self.steps, episodic_reward(traj), wall, bmin, bmax, self.last_loss)
                if self._finished():
                    self.stop.set()
                self.data_ready.notify_all()

    def worker(self, index: int) -> None:
        c = self.config
        rng = np.random.default_rng(self.worker_seeds[index])
        while True:
            with self.lock:
                while not self.stop.is_set() and (len(self.buffer) == 0 or self._update_allowance() <= 0):
                    self.data_ready.wait(timeout=0.05)
                if self.stop.is_set():
                    return
                self.stats.submitted += 1
            _, params = self.shared.snapshot()
            batch = self.buffer.sample_batch(c.batch_size, rng)
            loss, grad = pn.loss_and_grad(params, batch, c.entropy_coef)
            self.grads.put((grad, loss))

    def _guard(self, fn, index):
        try:
            fn(index)
        except BaseException as exc:  # surfaced by the chief after shutdown
            self.errors.append(exc)
            self.stop.set()

    def chief(self) -> None:
        threads = [threading.Thread(target=self._guard, args=(self.actor, i), daemon=True)
                   for i in range(self.config.n_actors)]
        threads += [threading.Thread(target=self._guard, args=(self.worker, i), daemon=True)
                    for i in range(self.config.n_workers)]
        for th in threads:
            th.start()
        while True:
            try:
                grad, loss = self.grads.get(timeout=0.01)
            except queue.Empty:
                if self.stop.is_set() and not any(th.is_alive() for th in threads):
                    if self.grads.empty():
                        break
                continue
            self._apply(grad, loss)
        for th in threads:
            th.join()
        if self.errors:
            raise self.errors[0]

    def _apply(self, grad, loss) -> None:
        _, params = self.shared.snapshot()
        params, self.adam = pn.adam_step(params, grad, self.adam)
        version = self.shared.publish(params)
        self.last_loss = float(loss)
        self.stats.applied += 1
        self.stats.versions.append(version)


def train_distributed(config: TrainConfig) -> tuple[pn.PolicyParams, TrainMetrics, DistributedStats]:
    """Asynchronous actor/worker training; returns the chief's final parameters."""
    run = _Run(config)
    if config.total_steps > 0:
        run.chief()
    return run.shared.snapshot()[1], run.metrics, run.stats
