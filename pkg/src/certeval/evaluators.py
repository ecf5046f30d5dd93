"""Certified evaluators.

``run_base`` evaluates the whole pool once. ``run_seq`` reveals records in
pool order under an anytime Hoeffding sequence. ``run_cereval`` reveals a
warm-start prefix, then repeatedly partitions the pool, computes per-group
empirical-Bernstein radii and spends the next evaluation on the group whose
radius would shrink the pooled radius the most.

All three evaluators consume the pool in its current order, so callers
wanting an IID surrogate should pass ``pool.shuffled(seed)``.

The estimator classes at the bottom wrap the same functions behind the
scikit-learn ``fit``/``get_params`` protocol.
"""

import json
import math
import numbers
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted, check_X_y

from .confseq import _eta, _group_radius, adaptive_hoeffding_radius, static_hoeffding_radius
from .dataset import TestPool, unrevealed_in_group
from .partition import GroupStats, aggregate, group_stats, make_strategy
from ._validation import check_delta, check_losses

__all__ = [
    "EvalGoal",
    "GroupStats",
    "TraceEntry",
    "EvalReport",
    "run_base",
    "run_seq",
    "run_cereval",
    "marginal_uncertainty_score",
    "select_group",
    "write_trace",
    "StaticEvaluator",
    "SequentialEvaluator",
    "CertifiedEvaluator",
]

GOAL_MET = "goal_met"
POOL_EXHAUSTED = "pool_exhausted"
THRESHOLD_DECIDED = "threshold_decided"


@dataclass(frozen=True)
class EvalGoal:
    """Either reach a fixed CI radius or decide whether the mean loss exceeds a threshold."""

    kind: str
    epsilon: Optional[float] = None
    threshold_C: Optional[float] = None

    def __post_init__(self):
        if self.kind == "fixed_epsilon":
            if self.epsilon is None or self.threshold_C is not None or not self.epsilon >= 0:
                raise ValueError("fixed_epsilon goal needs a nonnegative epsilon and no threshold")
        elif self.kind == "threshold":
            if self.threshold_C is None or self.epsilon is not None or not 0 < self.threshold_C < 1:
                raise ValueError("threshold goal needs threshold_C in (0, 1) and no epsilon")
        else:
            raise ValueError(f"unknown goal kind {self.kind!r}")

    @classmethod
    def fixed(cls, epsilon):
        return cls("fixed_epsilon", epsilon=float(epsilon))

    @classmethod
    def threshold(cls, C):
        return cls("threshold", threshold_C=float(C))

    def check(self, estimate, radius):
        """Termination cause and decision if the interval satisfies the goal, else ``None``."""
        if self.kind == "fixed_epsilon":
            return (GOAL_MET, None) if radius <= self.epsilon else None
        if estimate - radius > self.threshold_C:
            return THRESHOLD_DECIDED, "above"
        if estimate + radius < self.threshold_C:
            return THRESHOLD_DECIDED, "below"
        return None


def _as_goal(goal):
    if isinstance(goal, EvalGoal):
        return goal
    if isinstance(goal, numbers.Real):
        return EvalGoal.fixed(goal)
    raise TypeError(f"goal must be an EvalGoal or a number, got {goal!r}")


@dataclass
class TraceEntry:
    iter: int
    N: int
    R_hat: float
    eps_hat: float
    K: int = 1
    group_sizes: tuple = ()
    group_counts: tuple = ()
    selected_group: Optional[int] = None
    objective: Optional[float] = None


@dataclass
class EvalReport:
    estimate: float
    radius: float
    n_evaluated: int
    termination: str
    decision: Optional[str] = None
    trace: list = field(default_factory=list, repr=False)
    reveal_order: list = field(default_factory=list, repr=False)

    @property
    def interval(self):
        return self.estimate - self.radius, self.estimate + self.radius

    def trace_arrays(self):
        """``(N, R_hat, eps_hat)`` over the trace as numpy arrays."""
        N = np.array([e.N for e in self.trace], dtype=np.int64)
        R = np.array([e.R_hat for e in self.trace])
        eps = np.array([e.eps_hat for e in self.trace])
        return N, R, eps


def write_trace(report, path):
    """Append one JSON line per trace entry to ``path``."""
    with open(path, "a", encoding="utf-8") as fh:
        for e in report.trace:
            rec = asdict(e)
            rec["group_sizes"] = list(rec["group_sizes"])
            rec["group_counts"] = list(rec["group_counts"])
            fh.write(json.dumps(rec) + "\n")


def _require_fresh(pool):
    if len(pool) == 0:
        raise ValueError("pool is empty")
    if pool.reveal_count:
        raise ValueError("evaluators need a pool with no revealed records")


def run_base(pool, delta):
    """Evaluate every record; the interval radius is the fixed-n Hoeffding radius."""
    _require_fresh(pool)
    delta = check_delta(delta)
    losses = np.array([pool.reveal_at(i).loss for i in range(len(pool))])
    n = len(pool)
    estimate = float(np.mean(losses))
    radius = static_hoeffding_radius(n, delta)
    trace = [TraceEntry(0, n, estimate, radius, 1, (n,), (n,))]
    return EvalReport(estimate, radius, n, POOL_EXHAUSTED, None, trace, list(pool.reveal_order))


def run_seq(pool, goal, delta):
    """Reveal records in pool order until the anytime Hoeffding interval meets ``goal``."""
    _require_fresh(pool)
    goal = _as_goal(goal)
    delta = check_delta(delta)
    n = len(pool)
    radii = adaptive_hoeffding_radius(np.arange(1, n + 1), delta)
    trace = []
    total = 0.0
    outcome = None
    for i in range(n):
        total += pool.reveal_at(i).loss
        N = i + 1
        estimate = total / N
        radius = float(radii[i])
        trace.append(TraceEntry(i, N, estimate, radius, 1, (n,), (N,)))
        outcome = goal.check(estimate, radius)
        if outcome is not None:
            break
    termination, decision = outcome if outcome is not None else (POOL_EXHAUSTED, None)
    return EvalReport(estimate, radius, N, termination, decision, trace, list(pool.reveal_order))


def _radius_at(n, v, K, delta):
    return float(_group_radius(v, _eta(n, K, delta)))


def marginal_uncertainty_score(stats, K, N, delta):
    """Pool-weighted one-step radius reduction ``(eps(n) - eps(n+1)) * N_j / N`` at frozen variance.

    A group with no revealed member scores ``inf`` so it is sampled first.
    """
    if stats.n_k == 0:
        return math.inf
    drop = _radius_at(stats.n_k, stats.variance, K, delta) - _radius_at(stats.n_k + 1, stats.variance, K, delta)
    return max(drop, 0.0) * stats.N_k / N


def select_group(stats, K, N, delta):
    """Group with unrevealed members and the largest score; ties go to larger ``N_k``, then lower index.

    Returns ``None`` when every group is exhausted.
    """
    best = None
    for s in stats:
        if s.n_k >= s.N_k:
            continue
        key = (marginal_uncertainty_score(s, K, N, delta), s.N_k, -s.k)
        if best is None or key > best[0]:
            best = (key, s.k)
    return None if best is None else best[1]


def run_cereval(pool, goal, delta, warm_start_m=30, partition_strategy="1nn", seed=0, repartition_every=1):
    """Adaptive-partition certified evaluation.

    ``partition_strategy`` is ``"1nn"``, ``"oracle"``, ``"single"`` or an object
    with ``start(pool, delta, seed)``, ``observe(pos, loss)`` and ``partition()``.
    Within the target group the earliest unrevealed record in pool order is
    evaluated next.
    """
    _require_fresh(pool)
    goal = _as_goal(goal)
    delta = check_delta(delta)
    n = len(pool)
    if not 2 <= warm_start_m <= n:
        raise ValueError(f"warm_start_m must lie in [2, {n}], got {warm_start_m}")
    if repartition_every < 1:
        raise ValueError("repartition_every must be at least 1")
    strategy = make_strategy(partition_strategy)
    strategy.start(pool, delta, seed)

    pos_buf = np.empty(n, dtype=np.int64)
    z_buf = np.empty(n)
    count = 0

    def reveal(i):
        nonlocal count
        z = pool.reveal_at(i).loss
        pos_buf[count] = i
        z_buf[count] = z
        count += 1
        strategy.observe(i, z)

    for i in range(warm_start_m):
        reveal(i)

    trace = []
    part = None
    it = 0
    while True:
        if part is None or it % repartition_every == 0:
            part = strategy.partition()
        stats = group_stats(part.labels, part.K, pos_buf[:count], z_buf[:count], delta)
        estimate, radius = aggregate(stats)
        entry = TraceEntry(
            it,
            count,
            estimate,
            radius,
            part.K,
            tuple(s.N_k for s in stats),
            tuple(s.n_k for s in stats),
            None,
            radius if math.isnan(part.objective) else part.objective,
        )
        trace.append(entry)
        outcome = goal.check(estimate, radius)
        if outcome is not None:
            termination, decision = outcome
            break
        if count == n:
            termination, decision = POOL_EXHAUSTED, None
            break
        k = select_group(stats, part.K, n, delta)
        entry.selected_group = k
        reveal(unrevealed_in_group(pool, part.labels, k).first())
        it += 1
    return EvalReport(estimate, radius, count, termination, decision, trace, list(pool.reveal_order))


def _goal_from_params(epsilon, threshold):
    if (epsilon is None) == (threshold is None):
        raise ValueError("set exactly one of epsilon and threshold")
    return EvalGoal.fixed(epsilon) if epsilon is not None else EvalGoal.threshold(threshold)


def _pool_from_input(X, y):
    if isinstance(X, TestPool):
        return X.fresh_copy()
    if y is None:
        raise ValueError("y (the hidden losses) is required when X is an array")
    X, y = check_X_y(X, y, dtype=np.float64)
    y = check_losses(y)
    return TestPool([str(i) for i in range(len(y))], X, y)


class _EvaluatorMixin:
    def _store(self, pool, report):
        self.pool_ = pool
        self.report_ = report
        self.estimate_ = report.estimate
        self.radius_ = report.radius
        self.n_evaluated_ = report.n_evaluated
        self.termination_ = report.termination
        self.decision_ = report.decision
        return self

    @property
    def interval_(self):
        check_is_fitted(self, "report_")
        return self.report_.interval

    def saving_ratio(self):
        check_is_fitted(self, "report_")
        return 1.0 - self.n_evaluated_ / len(self.pool_)


class StaticEvaluator(_EvaluatorMixin, BaseEstimator):
    """Evaluate the full pool once.

    ``fit`` accepts a :class:`TestPool` or a feature matrix ``X`` with losses ``y``.
    """

    def __init__(self, delta=0.05):
        self.delta = delta

    def fit(self, X, y=None):
        pool = _pool_from_input(X, y)
        return self._store(pool, run_base(pool, self.delta))


class SequentialEvaluator(_EvaluatorMixin, BaseEstimator):
    """Anytime Hoeffding evaluation in pool order."""

    def __init__(self, epsilon=None, threshold=None, delta=0.05):
        self.epsilon = epsilon
        self.threshold = threshold
        self.delta = delta

    def fit(self, X, y=None):
        pool = _pool_from_input(X, y)
        goal = _goal_from_params(self.epsilon, self.threshold)
        return self._store(pool, run_seq(pool, goal, self.delta))


class CertifiedEvaluator(_EvaluatorMixin, BaseEstimator):
    """Adaptive-partition certified evaluation.

    Parameters
    ----------
    epsilon, threshold : float, optional
        Exactly one must be set.
    delta : float
    warm_start : int
        Records revealed before the first partition.
    partition : {"1nn", "oracle", "single"} or strategy object
    repartition_every : int
        Recompute the partition every this many reveals.
    random_state : int
        Seeds the 1-NN training subset.
    """

    def __init__(
        self,
        epsilon=None,
        threshold=None,
        delta=0.05,
        warm_start=30,
        partition="1nn",
        repartition_every=1,
        random_state=0,
    ):
        self.epsilon = epsilon
        self.threshold = threshold
        self.delta = delta
        self.warm_start = warm_start
        self.partition = partition
        self.repartition_every = repartition_every
        self.random_state = random_state

    def fit(self, X, y=None):
        pool = _pool_from_input(X, y)
        goal = _goal_from_params(self.epsilon, self.threshold)
        report = run_cereval(
            pool,
            goal,
            self.delta,
            warm_start_m=self.warm_start,
            partition_strategy=self.partition,
            seed=self.random_state,
            repartition_every=self.repartition_every,
        )
        return self._store(pool, report)
