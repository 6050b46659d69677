import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssrl.core import Trajectory
from ssrl.replay import EmptyBufferError, RankingBuffer, RingBuffer


def _episode(rewards, start_obs=0.0):
    n = len(rewards)
    obs = (start_obs + np.arange(n, dtype=float)).reshape(n, 1)
    return Trajectory(obs, tuple(range(n)), np.asarray(rewards, dtype=float))


def brute_force_top(episodes, capacity):
    """Every pair ever inserted, tagged (reward, seq); sort by reward desc then seq desc; keep capacity."""
    pool, seq = [], 0
    for ep in episodes:
        total = float(np.sum(ep.rewards))
        for t in range(len(ep)):
            pool.append((total, seq, float(ep.observations[t, 0])))
            seq += 1
    pool.sort(key=lambda p: (-p[0], -p[1]))
    return pool[:capacity]


episode_lists = st.lists(
    st.lists(st.integers(-3, 3).map(float), min_size=1, max_size=8),
    min_size=1, max_size=25)


@settings(max_examples=200, deadline=None)
@given(episode_lists, st.integers(1, 30))
def test_ranking_buffer_matches_brute_force(reward_lists, capacity):
    episodes = [_episode(r, 100.0 * i) for i, r in enumerate(reward_lists)]
    buf = RankingBuffer(capacity)
    for ep in episodes:
        buf.insert_episode(ep)
    got = [(p.episodic_reward, p.seq, float(p.observation[0])) for p in buf.pairs()]
    assert got == brute_force_top(episodes, capacity)
    assert len(buf) <= capacity


def test_equal_reward_newer_pairs_win():
    buf = RankingBuffer(3)
    buf.insert_episode(_episode([1.0, 1.0, 1.0], 0.0))
    buf.insert_episode(_episode([2.0, 1.0], 10.0))
    obs = sorted(float(p.observation[0]) for p in buf.pairs())
    # the newer episode's pairs plus the newest pair of the older one
    assert obs == [2.0, 10.0, 11.0]


def test_min_max_and_retained_count():
    buf = RankingBuffer(4)
    assert buf.insert_episode(_episode([5.0, 5.0])) == 2
    assert buf.insert_episode(_episode([-1.0, -1.0, -1.0])) == 2
    assert buf.min_retained_reward() == -3.0
    assert buf.max_retained_reward() == 10.0
    assert buf.insert_episode(_episode([-10.0])) == 0


def test_key_overrides_reward():
    buf = RankingBuffer(2)
    buf.insert_episode(_episode([1.0]), key=100.0)
    assert buf.max_retained_reward() == 100.0


def test_empty_buffer_errors():
    buf = RankingBuffer(3)
    with pytest.raises(EmptyBufferError):
        buf.sample_batch(4, np.random.default_rng(0))
    with pytest.raises(EmptyBufferError):
        buf.min_retained_reward()
    with pytest.raises(ValueError):
        RankingBuffer(0)


def test_sample_batch_uses_only_retained_pairs():
    buf = RankingBuffer(2)
    buf.insert_episode(_episode([1.0, 1.0, 1.0], 0.0))
    batch = buf.sample_batch(500, np.random.default_rng(1))
    assert set(batch.observations[:, 0].tolist()) == {1.0, 2.0}
    assert batch.observations.shape == (500, 1)


def test_dump_lists_every_pair():
    buf = RankingBuffer(3)
    buf.insert_episode(_episode([1.0, 2.0]))
    lines = buf.dump().splitlines()
    assert len(lines) == 2
    assert lines[0].split("\t")[-1] == "3.0"


def test_concurrent_readers_never_see_partial_episodes():
    buf = RankingBuffer(50)
    stop = threading.Event()
    seen_bad = []

    def reader():
        while not stop.is_set():
            if len(buf) == 0:
                continue
            c = buf.snapshot()
            # every episode here has 10 pairs of identical obs parity: all present or evicted together
            if len(c.rewards) > 50 or np.any(np.diff(c.rewards) > 0):
                seen_bad.append(len(c.rewards))

    threads = [threading.Thread(target=reader) for _ in range(4)]
    for th in threads:
        th.start()
    rng = np.random.default_rng(2)
    for i in range(300):
        buf.insert_episode(_episode(list(rng.normal(size=10)), i * 100.0))
    stop.set()
    for th in threads:
        th.join()
    assert not seen_bad


def test_concurrent_writers_respect_capacity():
    buf = RankingBuffer(40)
    rng_seeds = range(8)

    def writer(seed):
        rng = np.random.default_rng(seed)
        for _ in range(50):
            buf.insert_episode(_episode(list(rng.normal(size=int(rng.integers(1, 9))))))

    threads = [threading.Thread(target=writer, args=(s,)) for s in rng_seeds]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    pairs = buf.pairs()
    assert len(pairs) == 40
    assert len({p.seq for p in pairs}) == 40
    keys = [(-p.episodic_reward, -p.seq) for p in pairs]
    assert keys == sorted(keys)


# -- ring buffer -------------------------------------------------------------


def test_ring_buffer_threshold_filters_episodes():
    ring = RingBuffer(10, threshold=5.0)
    assert not ring.ring_insert(_episode([1.0, 1.0]))
    assert len(ring) == 0
    assert ring.ring_insert(_episode([3.0, 3.0]))
    assert len(ring) == 2
    assert ring.insert_episode(_episode([1.0]), key=6.0) == 1


def test_ring_buffer_overwrites_oldest():
    ring = RingBuffer(5, threshold=-np.inf)
    ring.ring_insert(_episode([1.0] * 3, 0.0))
    ring.ring_insert(_episode([1.0] * 4, 10.0))
    assert len(ring) == 5
    np.testing.assert_array_equal(ring.contents().observations[:, 0], [2.0, 10.0, 11.0, 12.0, 13.0])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.lists(st.integers(-3, 3).map(float), min_size=1, max_size=6), min_size=1, max_size=20),
       st.integers(1, 15), st.integers(-5, 5))
def test_ring_buffer_matches_list_model(reward_lists, capacity, threshold):
    ring = RingBuffer(capacity, threshold=float(threshold))
    model = []
    for i, r in enumerate(reward_lists):
        ep = _episode(r, 100.0 * i)
        ring.ring_insert(ep)
        if sum(r) >= threshold:
            model.extend(ep.observations[:, 0].tolist())
    model = model[-capacity:]
    assert len(ring) == len(model)
    if model:
        assert ring.contents().observations[:, 0].tolist() == model
