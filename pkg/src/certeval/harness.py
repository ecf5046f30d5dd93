"""Replicated epsilon sweeps over evaluators, with coverage checks.

Every evaluator's choices are independent of the target radius, so one run
per (evaluator, replication) with the smallest grid epsilon determines the
stopping point for every larger epsilon as the first trace entry whose radius
reaches it. Coverage is judged against the pool's full-data mean loss over the
trace prefix up to that stopping point.
"""

import configparser
import csv
import json
import logging
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .confseq import adaptive_hoeffding_radius, seq_sample_bound, static_hoeffding_radius
from .dataset import load_pool
from .evaluators import run_base, run_cereval, run_seq
from .synthetic import generate, scenario

__all__ = [
    "EVALUATORS",
    "SweepConfig",
    "SweepRow",
    "default_grid",
    "load_config",
    "replication_seed",
    "run_replications",
    "first_hit",
    "summarize",
    "run_sweep",
    "bound_check",
    "seq_termination_index",
    "emit_results",
    "load_results",
]

log = logging.getLogger(__name__)

EVALUATORS = ("base", "seq", "cereval", "oracle")


def default_grid(n, delta, size=8):
    """``size`` log-spaced radii from the full-pool Hoeffding radius up to 0.1."""
    lo = static_hoeffding_radius(n, delta)
    grid = np.geomspace(lo, 0.1, size)
    grid[0] = lo
    return [float(e) for e in grid]


@dataclass
class SweepConfig:
    scenario: Optional[str] = "s1"
    pool_path: Optional[str] = None
    evaluators: tuple = EVALUATORS
    epsilons: Optional[tuple] = None
    grid_size: int = 8
    delta: float = 0.05
    replications: int = 20
    seed: int = 0
    warm_start: int = 30
    repartition_every: int = 1
    # scenario overrides
    n: Optional[int] = None
    K: Optional[int] = None
    lam: Optional[float] = None
    sigma2: Optional[float] = None
    d: Optional[int] = None

    def __post_init__(self):
        self.evaluators = tuple(self.evaluators)
        unknown = set(self.evaluators) - set(EVALUATORS)
        if unknown:
            raise ValueError(f"unknown evaluators {sorted(unknown)}")
        if (self.scenario is None) == (self.pool_path is None):
            raise ValueError("set exactly one of scenario and pool_path")
        if self.epsilons is not None:
            eps = tuple(float(e) for e in self.epsilons)
            if not eps or any(e <= 0 for e in eps) or list(eps) != sorted(eps):
                raise ValueError("epsilons must be positive and sorted ascending")
            self.epsilons = eps
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.replications < 1:
            raise ValueError("replications must be positive")

    def load_pool(self):
        if self.pool_path is not None:
            return load_pool(self.pool_path)
        spec = scenario(self.scenario, n=self.n, K=self.K, lam=self.lam, sigma2=self.sigma2, d=self.d, seed=self.seed)
        return generate(spec)

    def grid(self, n):
        if self.epsilons is not None:
            return list(self.epsilons)
        return default_grid(n, self.delta, self.grid_size)


_LIST_FIELDS = {"evaluators": str, "epsilons": float}


def load_config(path, **overrides):
    """Read a flat ``key = value`` file into a :class:`SweepConfig`; keyword overrides win."""
    parser = configparser.ConfigParser()
    parser.read_string("[sweep]\n" + Path(path).read_text(encoding="utf-8"))
    raw = dict(parser["sweep"])
    types = {f.name: f for f in fields(SweepConfig)}
    kwargs = {}
    for key, value in raw.items():
        if key not in types:
            raise ValueError(f"unknown config key {key!r}")
        kwargs[key] = _coerce(key, value)
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    if "pool_path" in kwargs and "scenario" not in kwargs:
        kwargs["scenario"] = None
    return SweepConfig(**kwargs)


def _coerce(key, value):
    value = value.strip()
    if key in _LIST_FIELDS:
        return tuple(_LIST_FIELDS[key](v.strip()) for v in value.split(",") if v.strip())
    if key in ("scenario", "pool_path"):
        return value or None
    if key in ("delta", "lam", "sigma2"):
        return float(value)
    return int(value)


@dataclass(frozen=True)
class SweepRow:
    evaluator: str
    epsilon: float
    mean_N: float
    saving_ratio: float
    rho: float
    failure_rate: float


ROW_FIELDS = [f.name for f in fields(SweepRow)]


def replication_seed(seed, r):
    return int(np.random.SeedSequence([seed, r]).generate_state(1)[0])


def _run_one(name, pool, epsilon, config, rep_seed):
    if name == "base":
        return run_base(pool, config.delta)
    if name == "seq":
        return run_seq(pool, epsilon, config.delta)
    strategy = "1nn" if name == "cereval" else "oracle"
    return run_cereval(
        pool,
        epsilon,
        config.delta,
        warm_start_m=config.warm_start,
        partition_strategy=strategy,
        seed=rep_seed,
        repartition_every=config.repartition_every,
    )


def run_replications(config, pool=None):
    """Run every evaluator once per replication at the smallest grid epsilon.

    Returns ``(pool, grid, runs)`` where ``runs[name]`` is a list of
    ``(N, R_hat, eps_hat)`` trace arrays, one per replication.
    """
    if pool is None:
        pool = config.load_pool()
    grid = config.grid(len(pool))
    if "oracle" in config.evaluators and pool.groups is None:
        raise ValueError("the oracle evaluator needs true group labels in the pool")
    runs = {name: [] for name in config.evaluators}
    for r in range(config.replications):
        rep_seed = replication_seed(config.seed, r)
        for name in config.evaluators:
            shuffled = pool.shuffled(rep_seed)
            try:
                report = _run_one(name, shuffled, grid[0], config, rep_seed)
            except Exception as exc:
                raise RuntimeError(f"{name} failed on replication {r} (seed {rep_seed}): {exc}") from exc
            runs[name].append(report.trace_arrays())
            log.info("%s rep %d: N=%d", name, r, report.n_evaluated)
    return pool, grid, runs


def first_hit(trace, epsilon, mu):
    """``(N, failed)`` for a run with goal ``epsilon``, read off a longer trace.

    ``failed`` is whether any interval up to and including the stopping entry
    misses ``mu``.
    """
    N, R, eps = trace
    hit = np.flatnonzero(eps <= epsilon)
    stop = int(hit[0]) if hit.size else len(N) - 1
    miss = np.abs(R[: stop + 1] - mu) > eps[: stop + 1]
    return int(N[stop]), bool(miss.any())


def summarize(pool, grid, runs):
    n = len(pool)
    mu = pool.full_mean()
    rows = []
    for name in sorted(runs):
        for eps in sorted(grid):
            hits = [first_hit(t, eps, mu) for t in runs[name]]
            mean_N = float(np.mean([h[0] for h in hits]))
            rho = mean_N / n
            failure = float(np.mean([h[1] for h in hits]))
            rows.append(SweepRow(name, float(eps), mean_N, 1.0 - rho, rho, failure))
    return rows


def run_sweep(config):
    """Rows sorted by evaluator name, then epsilon ascending."""
    pool, grid, runs = run_replications(config)
    return summarize(pool, grid, runs)


def seq_termination_index(epsilon, delta):
    """First ``n`` with anytime Hoeffding radius at most ``epsilon``, by doubling then bisection."""
    hi = 1
    while adaptive_hoeffding_radius(hi, delta) > epsilon:
        hi *= 2
    lo = hi // 2
    # radius is nonincreasing for n >= 1, so bisect on (lo, hi]
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if adaptive_hoeffding_radius(mid, delta) <= epsilon:
            hi = mid
        else:
            lo = mid
    return hi


def bound_check(epsilon, delta, observed_N):
    """Whether an observed Seq stopping time respects the sufficient sample size."""
    return observed_N <= seq_sample_bound(epsilon, delta)


def _fmt(value):
    return repr(float(value)) if isinstance(value, float) else str(value)


def emit_results(rows, path, format=None):
    fmt = (format or Path(path).suffix.lstrip(".")).lower()
    if fmt not in ("csv", "jsonl"):
        raise ValueError(f"unsupported results format {fmt!r}")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if fmt == "csv":
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(ROW_FIELDS)
            for row in rows:
                writer.writerow([_fmt(getattr(row, f)) for f in ROW_FIELDS])
        else:
            for row in rows:
                fh.write(json.dumps({f: getattr(row, f) for f in ROW_FIELDS}) + "\n")
    return Path(path)


def load_results(path, format=None):
    fmt = (format or Path(path).suffix.lstrip(".")).lower()
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        if fmt == "csv":
            for rec in csv.DictReader(fh):
                rows.append(SweepRow(rec["evaluator"], *(float(rec[f]) for f in ROW_FIELDS[1:])))
        else:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    rows.append(SweepRow(rec["evaluator"], *(float(rec[f]) for f in ROW_FIELDS[1:])))
    return rows
