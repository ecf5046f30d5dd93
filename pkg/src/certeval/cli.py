"""Command-line entry point: ``certeval {generate,evaluate,sweep,check}``."""

import argparse
import logging
import math
import sys

import numpy as np

from . import confseq
from .dataset import load_pool
from .evaluators import EvalGoal, run_base, run_cereval, run_seq, write_trace
from .harness import (
    EVALUATORS,
    SweepConfig,
    bound_check,
    emit_results,
    load_config,
    run_sweep,
    seq_termination_index,
)
from .synthetic import export, generate, scenario


def _scenario_args(p):
    p.add_argument("--n", type=int)
    p.add_argument("--K", type=int)
    p.add_argument("--lam", type=float)
    p.add_argument("--sigma2", type=float)
    p.add_argument("--d", type=int)


def cmd_generate(args):
    spec = scenario(args.scenario, n=args.n, K=args.K, lam=args.lam, sigma2=args.sigma2, d=args.d, seed=args.seed)
    pool = generate(spec)
    export(pool, args.out, args.format)
    print(f"wrote {len(pool)} records to {args.out}")
    return 0


def cmd_evaluate(args):
    pool = load_pool(args.pool).shuffled(args.seed)
    if (args.epsilon is None) == (args.threshold is None) and args.evaluator != "base":
        raise SystemExit("give exactly one of --epsilon and --threshold")
    goal = EvalGoal.fixed(args.epsilon) if args.epsilon is not None else None
    if args.threshold is not None:
        goal = EvalGoal.threshold(args.threshold)
    if args.evaluator == "base":
        report = run_base(pool, args.delta)
    elif args.evaluator == "seq":
        report = run_seq(pool, goal, args.delta)
    else:
        strategy = "1nn" if args.evaluator == "cereval" else "oracle"
        report = run_cereval(
            pool, goal, args.delta, warm_start_m=args.warm_start, partition_strategy=strategy,
            seed=args.seed, repartition_every=args.repartition_every,
        )
    lo, hi = report.interval
    print(
        f"estimate={report.estimate:.6f} radius={report.radius:.6f} interval=[{lo:.6f}, {hi:.6f}] "
        f"N={report.n_evaluated}/{len(pool)} termination={report.termination}"
        + (f" decision={report.decision}" if report.decision else "")
    )
    if args.trace:
        write_trace(report, args.trace)
    return 0


def cmd_sweep(args):
    overrides = dict(
        scenario=args.scenario,
        pool_path=args.pool,
        evaluators=tuple(args.evaluators.split(",")) if args.evaluators else None,
        epsilons=tuple(float(e) for e in args.epsilons.split(",")) if args.epsilons else None,
        grid_size=args.grid_size,
        delta=args.delta,
        replications=args.replications,
        seed=args.seed,
        warm_start=args.warm_start,
        repartition_every=args.repartition_every,
        n=args.n, K=args.K, lam=args.lam, sigma2=args.sigma2, d=args.d,
    )
    if args.config:
        config = load_config(args.config, **overrides)
    else:
        kwargs = {k: v for k, v in overrides.items() if v is not None}
        if "pool_path" in kwargs:
            kwargs.setdefault("scenario", None)
        config = SweepConfig(**kwargs)
    rows = run_sweep(config)
    emit_results(rows, args.out, args.format)
    for row in rows:
        print(f"{row.evaluator:8s} eps={row.epsilon:.4f} mean_N={row.mean_N:8.1f} "
              f"saved={row.saving_ratio:6.1%} failure={row.failure_rate:.3f}")
    return 0


def _invariant_suite(delta):
    checks = []
    n = np.arange(1, 100001)
    checks.append(("anytime radius exceeds fixed-n radius",
                   bool(np.all(confseq.adaptive_hoeffding_radius(n, delta) > confseq.static_hoeffding_radius(n, delta)))))
    radii = confseq.adaptive_hoeffding_radius(n[1:], delta)
    checks.append(("anytime radius nonincreasing for n >= 2", bool(np.all(np.diff(radii) <= 0))))
    epoch_ok = all(
        abs(math.exp(-float(confseq.iterated_log_budget(2**l, 4 / delta))) - delta / (4 * (l + 1) ** 2)) <= 1e-12
        for l in range(21)
    )
    checks.append(("doubling-epoch budget identity, l = 0..20", epoch_ok))
    rng = np.random.default_rng(0)
    z = rng.random((400, 2000)) < 0.5
    means = np.cumsum(z, axis=1) / np.arange(1, 2001)
    cross = np.any(means - 0.5 >= confseq.adaptive_hoeffding_radius(np.arange(1, 2001), delta), axis=1)
    checks.append((f"one-sided crossing rate {cross.mean():.4f} <= delta/2 + 0.01", bool(cross.mean() <= delta / 2 + 0.01)))
    return checks


def cmd_check(args):
    ok = True
    if args.what in ("bound", "all"):
        for eps in args.epsilon:
            observed = args.observed_n if args.observed_n is not None else seq_termination_index(eps, args.delta)
            bound = confseq.seq_sample_bound(eps, args.delta)
            passed = bound_check(eps, args.delta, observed)
            ok &= passed
            print(f"[{'PASS' if passed else 'FAIL'}] seq bound eps={eps} delta={args.delta}: N={observed} <= {bound}")
    if args.what in ("invariants", "all"):
        for name, passed in _invariant_suite(args.delta):
            ok &= passed
            print(f"[{'PASS' if passed else 'FAIL'}] {name}")
    return 0 if ok else 1


def build_parser():
    parser = argparse.ArgumentParser(prog="certeval", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic scenario pool")
    g.add_argument("--scenario", default="s1", choices=["s1", "s2", "s3"])
    g.add_argument("--out", required=True)
    g.add_argument("--format", choices=["jsonl", "csv"])
    g.add_argument("--seed", type=int, default=0)
    _scenario_args(g)
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("evaluate", help="run one evaluator on a pool file")
    e.add_argument("--pool", required=True)
    e.add_argument("--evaluator", default="cereval", choices=EVALUATORS)
    e.add_argument("--epsilon", type=float)
    e.add_argument("--threshold", type=float)
    e.add_argument("--delta", type=float, default=0.05)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--warm-start", type=int, default=30)
    e.add_argument("--repartition-every", type=int, default=1)
    e.add_argument("--trace", help="append the per-iteration trace to this JSONL file")
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", help="replicated epsilon sweep")
    s.add_argument("--config", help="flat key = value file; flags override it")
    src = s.add_mutually_exclusive_group()
    src.add_argument("--scenario", choices=["s1", "s2", "s3"])
    src.add_argument("--pool")
    s.add_argument("--evaluators", help="comma-separated subset of " + ",".join(EVALUATORS))
    s.add_argument("--epsilons", help="comma-separated grid; default log-spaced from eps* to 0.1")
    s.add_argument("--grid-size", type=int)
    s.add_argument("--delta", type=float)
    s.add_argument("--replications", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--warm-start", type=int)
    s.add_argument("--repartition-every", type=int)
    _scenario_args(s)
    s.add_argument("--out", required=True)
    s.add_argument("--format", choices=["csv", "jsonl"])
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("check", help="Seq sample-size bound and closed-form invariants")
    c.add_argument("what", nargs="?", default="all", choices=["bound", "invariants", "all"])
    c.add_argument("--epsilon", type=float, nargs="+", default=[0.03, 0.05, 0.08])
    c.add_argument("--delta", type=float, default=0.05)
    c.add_argument("--observed-n", type=int)
    c.set_defaults(func=cmd_check)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
