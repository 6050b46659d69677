"""Command-line entry point: train, eval, sweep, verify and trace.

Exit codes: 0 success, 1 usage or configuration error, 2 verification
failure, 3 runtime error.
"""
from __future__ import annotations

import argparse
import logging
import sys
import threading
from pathlib import Path

import numpy as np

from ssrl import policy as pn
from ssrl import theory as th
from ssrl.config import CONFIG_DIR, ConfigError, TrainConfig, load_config
from ssrl.core import dump_trajectory, rollout
from ssrl.envs import make_env
from ssrl.trainer import (Trainer, TrainMetrics, atomic_write, evaluate, head_for, make_greedy,
                          make_sampler)

EXIT_OK, EXIT_USAGE, EXIT_VERIFY, EXIT_RUNTIME = 0, 1, 2, 3
PERCENTILES = (0, 10, 25, 50, 75, 90, 100)
SUMMARY_HEADER = "step,min,p10,p25,median,p75,p90,max,n_seeds"

log = logging.getLogger("ssrl")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _global_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="random seed")
    p.add_argument("--config", default=None,
                   help="config file, or the name of a shipped config (e.g. cartpole.cfg)")
    p.add_argument("--out-dir", default=".", help="directory for output files")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ssrl", description="Ranking-buffer self-imitation training and tabular checks.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    train = sub.add_parser("train", help="train one policy")
    _global_flags(train)
    _train_flags(train)
    train.add_argument("--trace-every", type=int, default=None,
                       help="export best/worst buffered episodes every N iterations")
    train.add_argument("--load", default=None, help="start from this checkpoint")
    train.add_argument("--save", default=None, help="checkpoint path (default OUT_DIR/checkpoint.bin)")

    ev = sub.add_parser("eval", help="greedy evaluation of a checkpoint")
    _global_flags(ev)
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--env", required=True)
    ev.add_argument("--episodes", type=int, default=10)

    sweep = sub.add_parser("sweep", help="train over a range of seeds and summarise")
    _global_flags(sweep)
    _train_flags(sweep)
    sweep.add_argument("--seeds", default="0-9", help="inclusive range 'a-b' or comma list")
    sweep.add_argument("--checkpoints", type=int, default=20, help="number of env-step checkpoints")
    sweep.add_argument("--threshold", type=float, default=None,
                       help="rolling-100 return counted as solved (default: target_return)")
    sweep.add_argument("--jobs", type=int, default=1, help="seeds trained concurrently")

    verify = sub.add_parser("verify", help="check the policy-improvement identity on a tabular MDP")
    _global_flags(verify)
    verify.add_argument("mdp", help="MDP file: 'n_states n_actions gamma T', p0, r, transitions")
    verify.add_argument("--policy", default="uniform",
                        help="'uniform', 'random', or a file with one row of action probabilities per state")
    verify.add_argument("--rollouts", type=int, default=50)
    verify.add_argument("--filter-top", type=float, default=None,
                        help="keep only this fraction of rollouts, ranked by a ranking buffer")
    verify.add_argument("--tol", type=float, default=1e-9)

    trace = sub.add_parser("trace", help="write one episode of a checkpoint's policy as text")
    _global_flags(trace)
    trace.add_argument("--checkpoint", required=True)
    trace.add_argument("--env", required=True)
    trace.add_argument("--stochastic", action="store_true", help="sample actions instead of acting greedily")
    trace.add_argument("--sigma", type=float, default=0.3)
    return parser


def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--env", default=None)
    p.add_argument("--total-steps", type=int, default=None)
    p.add_argument("--beta", type=float, default=None, help="count-bonus scale")
    p.add_argument("--head", choices=["auto", pn.CATEGORICAL, pn.GAUSSIAN], default=None)
    p.add_argument("--target-return", type=float, default=None, help="stop once rolling-100 reaches this")
    p.add_argument("--distributed", action="store_true", default=None)
    p.add_argument("--no-wallclock", action="store_true",
                   help="write 0 in the wallclock column so CSVs are reproducible byte for byte")


def resolve_config_path(name: str) -> Path:
    path = Path(name)
    if path.exists():
        return path
    shipped = CONFIG_DIR / path.name
    if shipped.exists():
        return shipped
    shipped = CONFIG_DIR / f"{path.name}.cfg"
    if shipped.exists():
        return shipped
    raise ConfigError(f"config {name!r} not found (shipped: {sorted(p.name for p in CONFIG_DIR.glob('*.cfg'))})")


def config_from_args(args) -> TrainConfig:
    """Defaults, then the config file (or the env's shipped config), then flags."""
    if args.config:
        config = load_config(resolve_config_path(args.config))
    elif args.env and (CONFIG_DIR / f"{args.env}.cfg").exists():
        config = load_config(CONFIG_DIR / f"{args.env}.cfg")
    else:
        config = TrainConfig()
    changes = {}
    for flag, key in (("env", "env"), ("total_steps", "total_steps"), ("beta", "beta"), ("head", "head"),
                      ("target_return", "target_return"), ("distributed", "distributed"), ("seed", "seed")):
        value = getattr(args, flag, None)
        if value is not None:
            changes[key] = value
    if getattr(args, "trace_every", None) is not None:
        changes["trace_every"] = args.trace_every
    if getattr(args, "no_wallclock", False):
        changes["record_wallclock"] = False
    config = config.replace(**changes).validate()
    try:
        env = make_env(config.env, config.seed)
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None
    head_for(env, config)
    return config


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    config = config_from_args(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if config.distributed:
        from ssrl.distributed import train_distributed
        if args.load:
            raise UsageError("--load is not supported in distributed mode")
        params, metrics, stats = train_distributed(config)
        print(f"gradients_applied={stats.applied} episodes={stats.episodes}")
    else:
        trainer = Trainer(config, trace_dir=out / "traces")
        if args.load:
            loaded = pn.load_params(args.load)
            if loaded.sizes != trainer.params.sizes or loaded.head != trainer.params.head:
                raise pn.ShapeError(f"checkpoint {loaded.head} {loaded.sizes} does not fit "
                                    f"{trainer.params.head} {trainer.params.sizes}")
            trainer.params = loaded
        params, metrics = trainer.run()
    metrics_path = out / "metrics.csv"
    metrics.write_csv(metrics_path)
    ckpt = Path(args.save) if args.save else out / "checkpoint.bin"
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    pn.save_params(params, ckpt)
    print(f"metrics={metrics_path}")
    print(f"checkpoint={ckpt}")
    print(f"episodes={len(metrics.episodes)} steps={metrics.episodes[-1].step if metrics.episodes else 0}")
    print(f"final_rolling100={metrics.rolling100!r}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval / trace


def _load_for_env(checkpoint, env_name, seed):
    params = pn.load_params(checkpoint)
    try:
        env = make_env(env_name, seed)
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from None
    return params, env


def cmd_eval(args) -> int:
    if args.episodes < 1:
        raise UsageError("--episodes must be >= 1")
    seed = 0 if args.seed is None else args.seed
    params, env = _load_for_env(args.checkpoint, args.env, seed)
    rewards = evaluate(params, env, args.episodes, seed)
    print(f"episodes={len(rewards)}")
    print(f"mean={float(np.mean(rewards))!r} min={min(rewards)!r} max={max(rewards)!r}")
    return EXIT_OK


def cmd_trace(args) -> int:
    seed = 0 if args.seed is None else args.seed
    params, env = _load_for_env(args.checkpoint, args.env, seed)
    spec = env.spec()
    if params.input_dim != spec.observation_dim or params.output_dim != spec.action_count_or_dim:
        raise pn.ShapeError(f"policy sizes {params.sizes} do not fit environment spec {spec}")
    if args.stochastic:
        policy_fn = make_sampler(params, args.sigma, spec.action_low, spec.action_high)
    else:
        policy_fn = make_greedy(params, spec.action_low, spec.action_high)
    traj = rollout(env, policy_fn, spec.max_episode_steps, np.random.default_rng(seed), seed=seed)
    path = Path(args.out_dir) / f"trajectory_{args.env.replace(':', '_')}_{seed}.txt"
    atomic_write(path, dump_trajectory(traj))
    print(f"trajectory={path}")
    print(f"steps={len(traj)} episodic_reward={float(np.sum(traj.rewards))!r}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep


def parse_seeds(text: str) -> list[int]:
    text = text.strip()
    try:
        if "," in text:
            seeds = [int(s) for s in text.split(",") if s.strip()]
        elif "-" in text.lstrip("-"):
            lo, hi = text.split("-", 1)
            seeds = list(range(int(lo), int(hi) + 1))
        else:
            seeds = [int(text)]
    except ValueError:
        raise UsageError(f"bad seed range {text!r}") from None
    if not seeds:
        raise UsageError(f"seed range {text!r} is empty")
    return seeds


def rolling_at(metrics: TrainMetrics, checkpoints) -> np.ndarray:
    """Rolling-100 return of the last episode finished at or before each checkpoint (nan if none)."""
    steps = np.array([rec.step for rec in metrics.episodes])
    values = np.array([rec.rolling100 for rec in metrics.episodes])
    idx = np.searchsorted(steps, checkpoints, side="right") - 1
    return np.where(idx >= 0, values[np.maximum(idx, 0)] if len(values) else np.nan, np.nan)


def percentile_rows(checkpoints, curves: np.ndarray) -> list[tuple]:
    """One (step, min, p10, ..., max, n) row per checkpoint over the seeds with data there."""
    rows = []
    for j, step in enumerate(checkpoints):
        col = curves[:, j]
        col = col[~np.isnan(col)]
        if col.size == 0:
            rows.append((int(step),) + (float("nan"),) * len(PERCENTILES) + (0,))
            continue
        qs = np.percentile(col, PERCENTILES)
        # interpolation can wobble by an ulp; bands must stay ordered
        qs = np.maximum.accumulate(qs)
        rows.append((int(step),) + tuple(float(q) for q in qs) + (int(col.size),))
    return rows


def run_sweep(config: TrainConfig, seeds: list[int], jobs: int = 1):
    """Train once per seed; returns ({seed: metrics}, {seed: error message})."""
    results: dict[int, TrainMetrics] = {}
    failures: dict[int, str] = {}
    lock = threading.Lock()
    pending = list(seeds)

    def work():
        while True:
            with lock:
                if not pending:
                    return
                seed = pending.pop(0)
            try:
                _, metrics = Trainer(config.replace(seed=seed, distributed=False)).run()
            except Exception as exc:  # recorded and skipped
                log.warning("seed %d failed: %s", seed, exc)
                with lock:
                    failures[seed] = f"{type(exc).__name__}: {exc}"
                continue
            with lock:
                results[seed] = metrics

    threads = [threading.Thread(target=work) for _ in range(max(1, min(jobs, len(seeds))))]
    for th_ in threads:
        th_.start()
    for th_ in threads:
        th_.join()
    return results, failures


def cmd_sweep(args) -> int:
    config = config_from_args(args)
    seeds = parse_seeds(args.seeds)
    if args.checkpoints < 1:
        raise UsageError("--checkpoints must be >= 1")
    threshold = args.threshold if args.threshold is not None else config.target_return
    # a sweep runs every seed for the full budget so the bands are comparable
    run_config = config.replace(target_return=None)
    results, failures = run_sweep(run_config, seeds, args.jobs)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for seed, metrics in results.items():
        metrics.write_csv(out / f"seed_{seed:03d}.csv")
    checkpoints = np.linspace(config.total_steps / args.checkpoints, config.total_steps,
                              args.checkpoints).astype(np.int64)
    ok = sorted(results)
    curves = np.array([rolling_at(results[s], checkpoints) for s in ok]).reshape(len(ok), len(checkpoints))
    rows = percentile_rows(checkpoints, curves)
    text = SUMMARY_HEADER + "\n" + "".join(",".join(repr(v) if isinstance(v, float) else str(v) for v in row)
                                           + "\n" for row in rows)
    atomic_write(out / "summary.csv", text)
    failure_path = out / "failures.txt"
    if failures:
        atomic_write(failure_path, "".join(f"{s}\t{msg}\n" for s, msg in sorted(failures.items())))
    elif failure_path.exists():
        failure_path.unlink()
    print(f"seeds_run={len(ok)} seeds_failed={len(failures)}")
    if threshold is not None:
        solved = [s for s in ok if results[s].first_reaching(threshold) is not None]
        frac = len(solved) / len(seeds)
        atomic_write(out / "solved.txt", f"threshold={threshold!r}\nsolved={len(solved)}/{len(seeds)}\n"
                     f"fraction={frac!r}\nseeds={','.join(map(str, solved))}\n")
        print(f"solved_fraction={frac!r} ({len(solved)}/{len(seeds)} at rolling-100 >= {threshold!r})")
    print(f"summary={out / 'summary.csv'}")
    return EXIT_OK if ok else EXIT_RUNTIME


# ---------------------------------------------------------------------------
# verify


def _policy_from(source: str, mdp: th.TabularMDP, rng: np.random.Generator) -> np.ndarray:
    if source == "uniform":
        return np.full((mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions)
    if source == "random":
        return th.random_policy(rng, mdp.n_states, mdp.n_actions)
    try:
        policy = np.loadtxt(source, ndmin=2, comments="#")
    except OSError as exc:
        raise UsageError(f"cannot read policy file {source!r}: {exc}") from None
    try:
        return th.check_policy(policy, mdp)
    except ValueError as exc:
        raise ConfigError(f"policy file {source!r}: {exc}") from None


def cmd_verify(args) -> int:
    if args.rollouts < 1:
        raise UsageError("--rollouts must be >= 1")
    try:
        mdp = th.parse_mdp(Path(args.mdp).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read MDP file: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"bad MDP file {args.mdp!r}: {exc}") from None
    rng = np.random.default_rng(0 if args.seed is None else args.seed)
    policy = _policy_from(args.policy, mdp, rng)
    trajs = [th.sample_trajectory(mdp, policy, rng) for _ in range(args.rollouts)]
    if args.filter_top is not None:
        trajs = th.filter_top(trajs, mdp, args.filter_top)
    try:
        report = th.verify_theorem_1(trajs, policy, mdp, args.tol)
    except th.PreconditionError as exc:
        print(f"precondition_failed: {exc}")
        print(f"max_deviation={exc.max_deviation!r}")
        return EXIT_VERIFY
    print(f"trajectories={len(trajs)}")
    for line in report.lines():
        print(line)
    return EXIT_OK if report.holds else EXIT_VERIFY


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep, "verify": cmd_verify, "trace": cmd_trace}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, pn.ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
