"""End-to-end acceptance checks, one test per criterion.

Each test records a single PASS/FAIL line, printed as it runs and again in
the terminal summary. Training criteria take several minutes in total.
"""
import threading
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from ssrl import policy as pn
from ssrl import theory as th
from ssrl.config import shipped_config
from ssrl.core import Trajectory, episodic_reward, rollout
from ssrl.distributed import train_distributed
from ssrl.envs import make_env
from ssrl.envs.taxi import optimal_return
from ssrl.replay import BatchSample, RankingBuffer
from ssrl.trainer import Trainer, evaluate, make_sampler

SEEDS = range(10)
CARTPOLE_TARGET = 475.0

pytestmark = pytest.mark.slow


def report(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def tabular_sweep(seed: int = 0, n: int = 50):
    """Random deterministic MDPs with sampled buffers of 5 to 50 rollouts."""
    rng = np.random.default_rng(seed)
    cases = []
    for _ in range(n):
        S, A, T = int(rng.integers(3, 9)), int(rng.integers(2, 5)), int(rng.integers(1, 11))
        mdp = th.random_deterministic_mdp(rng, S, A, T, 1.0)
        policy = th.random_policy(rng, S, A)
        trajs = [th.sample_trajectory(mdp, policy, rng) for _ in range(int(rng.integers(5, 51)))]
        cases.append((mdp, policy, trajs))
    return cases


def test_criterion_01_buffer_return_equals_hypothetical_policy_return():
    start = time.perf_counter()
    errors = [th.verify_theorem_1(trajs, policy, mdp).equality_error for mdp, policy, trajs in tabular_sweep()]
    elapsed = time.perf_counter() - start
    worst = max(errors)
    passed = worst < 1e-9 and elapsed < 5.0
    report(1, passed, f"max |mean buffer return - exact return| = {worst:.2e} over 50 MDPs in {elapsed:.2f}s")
    assert passed


def test_criterion_02_top_half_buffer_improves():
    failures = []
    for i, (mdp, policy, trajs) in enumerate(tabular_sweep()):
        top = th.filter_top(trajs, mdp, 0.5)
        rep = th.verify_theorem_1(top, policy, mdp)
        if not (rep.delta >= 0 and rep.return_hypothetical >= rep.return_current - 1e-9):
            failures.append((i, rep.delta))
    detail = ", ".join(f"case {i} delta={d:.3g}" for i, d in failures)
    report(2, not failures, f"{50 - len(failures)}/50 cases with delta >= 0 and no regression" +
           (f" ({detail})" if failures else ""))
    assert not failures


def test_criterion_03_visitation_equals_empirical_frequency():
    worst = 0.0
    for mdp, _, trajs in tabular_sweep():
        p = th.visitation_frequencies(th.hypothetical_policy(trajs, mdp, per_timestep=True), mdp)
        freq = th.transition_counts(trajs, mdp).sum(axis=(2, 3)) / len(trajs)
        worst = max(worst, float(np.max(np.abs(p - freq))))
    report(3, worst <= 1e-10, f"max |p_t(s) - C(t, s)/n| = {worst:.2e}")
    assert worst <= 1e-10


def _taxi_run(seed: int):
    config = shipped_config("taxi").replace(seed=seed, record_wallclock=False)
    start = time.perf_counter()
    trainer = Trainer(config)
    params, metrics = trainer.run()
    elapsed = time.perf_counter() - start
    greedy = evaluate(params, make_env("taxi"))[0]
    converged = trainer.buffer.min_retained_reward() == trainer.buffer.max_retained_reward()
    return greedy, converged, elapsed, metrics.csv_text()


def _cartpole_run(seed: int):
    config = shipped_config("cartpole").replace(seed=seed, target_return=CARTPOLE_TARGET,
                                                record_wallclock=False)
    start = time.perf_counter()
    _, metrics = Trainer(config).run()
    elapsed = time.perf_counter() - start
    hit = metrics.first_reaching(CARTPOLE_TARGET)
    return hit, elapsed, metrics.csv_text()


@pytest.fixture(scope="module")
def taxi_runs():
    return {seed: _taxi_run(seed) for seed in SEEDS}


@pytest.fixture(scope="module")
def cartpole_runs():
    return {seed: _cartpole_run(seed) for seed in SEEDS}


def test_criterion_04_taxi_best_and_worst_become_optimal(taxi_runs):
    optimum = optimal_return()
    good = [s for s, (g, conv, t, _) in taxi_runs.items() if g == optimum and conv and t < 120]
    slowest = max(t for _, _, t, _ in taxi_runs.values())
    passed = len(good) >= 8
    report(4, passed, f"{len(good)}/10 seeds optimal ({optimum:g}) with a converged buffer; "
           f"slowest seed {slowest:.0f}s")
    assert passed


def test_criterion_05_cartpole_solved(cartpole_runs):
    solved = [s for s, (hit, t, _) in cartpole_runs.items() if hit is not None and hit.step <= 200_000 and t < 300]
    steps = [hit.step if hit else None for hit, _, _ in cartpole_runs.values()]
    passed = len(solved) >= 8
    report(5, passed, f"{len(solved)}/10 seeds reach rolling-100 >= 475 within 200000 steps; steps {steps}")
    assert passed


def test_criterion_06_pointreach_improves():
    improved, ratios = 0, []
    for seed in SEEDS:
        config = shipped_config("pointreach").replace(seed=seed, record_wallclock=False)
        trainer = Trainer(config)
        env = make_env("pointreach", 10_000 + seed)
        rng = np.random.default_rng(seed)
        sampler = make_sampler(trainer.params, config.sigma)
        base = float(np.mean([episodic_reward(rollout(env, sampler, 50, rng)) for _ in range(100)]))
        _, metrics = trainer.run()
        gain = (metrics.rolling100 - base) / abs(base)
        ratios.append(round(gain, 2))
        improved += gain >= 0.5
    report(6, improved >= 8, f"{improved}/10 seeds improve >= 50% over the untrained mean; gains {ratios}")
    assert improved >= 8


def _multiroom_run(seed: int, beta: float):
    config = shipped_config("multiroom").replace(seed=seed, beta=beta, record_wallclock=False)
    _, metrics = Trainer(config).run()
    best = max(rec.rolling100 for rec in metrics.episodes)
    return best, metrics.rolling100


def test_criterion_07_count_bonus_needed_for_multiroom():
    explore = [_multiroom_run(seed, 0.001) for seed in range(3)]
    plain = [_multiroom_run(seed, 0.0) for seed in range(3)]
    median_best = float(np.median([best for best, _ in explore]))
    plain_final = [final for _, final in plain]
    passed = median_best > 0 and all(f == 0 for f in plain_final)
    report(7, passed, f"beta=0.001 median best rolling-100 {median_best:.4f}; "
           f"beta=0 final rolling-100 {plain_final}")
    assert passed


def test_criterion_08_gradient_checks():
    rng = np.random.default_rng(0)
    worst = {pn.CATEGORICAL: 0.0, pn.GAUSSIAN: 0.0}
    for head in worst:
        for _ in range(20):
            in_dim, out_dim, n = int(rng.integers(1, 6)), int(rng.integers(2, 5)), 8
            params = pn.init_params(in_dim, out_dim, head, rng, hidden=16)
            obs = rng.normal(size=(n, in_dim))
            if head == pn.CATEGORICAL:
                actions = rng.integers(0, out_dim, size=n)
            else:
                actions = rng.uniform(-1, 1, size=(n, out_dim))
            batch = BatchSample(obs, actions)

            def fn(flat, params=params, batch=batch):
                return pn.loss_and_grad(pn.PolicyParams(flat, params.sizes, params.head), batch)

            worst[head] = max(worst[head], pn.grad_check(fn, params.flat))
    passed = max(worst.values()) < 1e-4
    report(8, passed, f"max relative error categorical {worst[pn.CATEGORICAL]:.2e}, "
           f"gaussian {worst[pn.GAUSSIAN]:.2e} (20 draws each)")
    assert passed


def _brute_force_top(episodes, capacity):
    pool, seq = [], 0
    for ep in episodes:
        total = float(np.sum(ep.rewards))
        for t in range(len(ep)):
            pool.append((total, seq, float(ep.observations[t, 0])))
            seq += 1
    pool.sort(key=lambda p: (-p[0], -p[1]))
    return pool[:capacity]


def test_criterion_09_buffer_matches_brute_force():
    rng = np.random.default_rng(0)
    mismatches = 0
    for _ in range(200):
        capacity = int(rng.integers(1, 40))
        episodes = []
        for i in range(int(rng.integers(1, 30))):
            n = int(rng.integers(1, 10))
            rewards = rng.integers(-3, 4, size=n).astype(float)
            episodes.append(Trajectory((100.0 * i + np.arange(n, dtype=float)).reshape(n, 1),
                                       tuple(range(n)), rewards))
        buf = RankingBuffer(capacity)
        for ep in episodes:
            buf.insert_episode(ep)
        got = [(p.episodic_reward, p.seq, float(p.observation[0])) for p in buf.pairs()]
        mismatches += got != _brute_force_top(episodes, capacity)
    report(9, mismatches == 0, f"{200 - mismatches}/200 sequences equal brute-force top-D selection")
    assert mismatches == 0


def _stress_buffer(capacity=500, n_threads=16, per_thread=1000):
    buf = RankingBuffer(capacity)
    over = []

    def writer(seed):
        rng = np.random.default_rng(seed)
        for _ in range(per_thread):
            n = int(rng.integers(1, 6))
            ep = Trajectory(rng.normal(size=(n, 2)), tuple(int(a) for a in rng.integers(0, 2, n)),
                            rng.normal(size=n))
            buf.insert_episode(ep)
            size = len(buf)
            if size > capacity:
                over.append(size)

    threads = [threading.Thread(target=writer, args=(s,)) for s in range(n_threads)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    return len(buf), over


def test_criterion_10_distributed_integrity():
    size, over = _stress_buffer()
    stress_ok = not over and size == 500

    seed = 0
    single = shipped_config("cartpole").replace(seed=seed, target_return=CARTPOLE_TARGET)
    start = time.perf_counter()
    _, single_metrics = Trainer(single).run()
    single_time = time.perf_counter() - start
    dist = shipped_config("cartpole_distributed").replace(seed=seed, target_return=CARTPOLE_TARGET)
    start = time.perf_counter()
    _, dist_metrics, stats = train_distributed(dist)
    dist_time = time.perf_counter() - start

    accounting_ok = stats.applied == stats.submitted > 0 and stats.versions_monotone and \
        stats.max_buffer_len <= dist.buffer_size
    hit = dist_metrics.first_reaching(CARTPOLE_TARGET)
    solved = hit is not None and hit.step <= 200_000
    faster = solved and single_metrics.first_reaching(CARTPOLE_TARGET) is not None and dist_time < single_time
    passed = stress_ok and accounting_ok and solved and faster
    report(10, passed, f"stress {'ok' if stress_ok else 'over capacity'}; applied {stats.applied} == submitted "
           f"{stats.submitted}, versions monotone {stats.versions_monotone}; 4x8 reached 475: "
           f"{hit.step if hit else 'no'}; wall-clock distributed {dist_time:.1f}s vs single {single_time:.1f}s")
    assert stress_ok and accounting_ok
    assert solved and faster


def test_criterion_11_identical_metrics_on_rerun(taxi_runs, cartpole_runs):
    differing = [f"taxi:{s}" for s in SEEDS if _taxi_run(s)[3] != taxi_runs[s][3]]
    differing += [f"cartpole:{s}" for s in SEEDS if _cartpole_run(s)[2] != cartpole_runs[s][2]]
    report(11, not differing, f"{20 - len(differing)}/20 repeated runs byte-identical" +
           (f" (differ: {differing})" if differing else ""))
    assert not differing
