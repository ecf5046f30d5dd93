"""Partitions of a test pool into groups, and the per-group statistics they induce.

Two strategies are provided:

* the 1-nearest-neighbour loss-bin partition, which bins revealed losses into
  ``k`` equal-width bins for every candidate ``k = 1 .. ceil(ln |S|) + 1``,
  spreads the bins over the whole pool with a 1-NN classifier and keeps the
  candidate with the smallest weighted confidence radius;
* the oracle partition, which uses the true group labels stored in the pool.

Group labels are compact integers ``0 .. K-1``.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .confseq import _eta, _group_radius
from .dataset import UnknownIdError
from ._validation import check_delta

__all__ = [
    "GroupStats",
    "PartitionResult",
    "DegeneratePoolError",
    "OneNearestNeighbor",
    "NearestNeighborPartitioner",
    "bin_labels",
    "candidate_count",
    "group_arrays",
    "group_stats",
    "aggregate",
    "one_nn_partition",
    "oracle_partition",
    "single_partition",
    "assign",
    "OneNNStrategy",
    "OracleStrategy",
    "SingleGroupStrategy",
    "make_strategy",
]

# charged to a group none of whose members have been revealed
VACUOUS_RADIUS = 1.0


class DegeneratePoolError(ValueError):
    """The pool has fewer than two distinct feature vectors."""


@dataclass(frozen=True)
class GroupStats:
    k: int
    n_k: int
    N_k: int
    mean: float
    variance: float
    eta: float
    eps: float


@dataclass
class PartitionResult:
    K: int
    labels: np.ndarray
    objective: float
    group_sizes: tuple
    candidate_k: Optional[int] = None
    candidate_objectives: dict = field(default_factory=dict)
    index: Optional[dict] = field(default=None, repr=False)

    def audit_record(self):
        return {"K": self.K, "group_sizes": list(self.group_sizes), "objective": self.objective}


def bin_labels(losses, k):
    """Loss-bin label ``floor(k z)``, with ``z = 1`` kept in the top bin ``k - 1``."""
    z = np.asarray(losses, dtype=np.float64)
    return np.minimum(np.floor(k * z).astype(np.int64), k - 1)


def candidate_count(n_revealed):
    """Number of bin counts tried for ``n_revealed`` evaluated points."""
    return math.ceil(math.log(n_revealed)) + 1


def group_arrays(N_k, n_k, sums, sumsq, delta, K=None):
    """Vectorised per-group mean, variance, eta and radius from sufficient statistics.

    ``K`` defaults to the number of groups with ``N_k > 0``; an array ``K``
    gives each group its own partition size. Groups with no revealed member
    get mean 0.5 and the vacuous radius.
    """
    N_k = np.asarray(N_k, dtype=np.float64)
    n_k = np.asarray(n_k, dtype=np.float64)
    if K is None:
        K = int(np.count_nonzero(N_k))
    K = np.broadcast_to(np.asarray(K, dtype=np.float64), N_k.shape)
    seen = n_k > 0
    mean = np.full(len(N_k), 0.5)
    var = np.zeros(len(N_k))
    eta = np.full(len(N_k), np.inf)
    eps = np.full(len(N_k), VACUOUS_RADIUS)
    if np.any(seen):
        m = sums[seen] / n_k[seen]
        mean[seen] = m
        var[seen] = np.maximum(sumsq[seen] / n_k[seen] - m * m, 0.0)
        eta[seen] = _eta(n_k[seen], K[seen], delta)
        eps[seen] = _group_radius(var[seen], eta[seen])
    return mean, var, eta, eps


def _sufficient_stats(labels, K, positions, losses):
    labels = np.asarray(labels)
    rev = labels[positions]
    N_k = np.bincount(labels, minlength=K)
    n_k = np.bincount(rev, minlength=K)
    sums = np.bincount(rev, weights=losses, minlength=K)
    sumsq = np.bincount(rev, weights=losses * losses, minlength=K)
    return N_k, n_k, sums, sumsq


def group_stats(labels, K, positions, losses, delta):
    """Summary statistics of every group given revealed ``positions`` and their ``losses``."""
    positions = np.asarray(positions, dtype=np.int64)
    losses = np.asarray(losses, dtype=np.float64)
    N_k, n_k, sums, sumsq = _sufficient_stats(labels, K, positions, losses)
    mean, var, eta, eps = group_arrays(N_k, n_k, sums, sumsq, delta, K=K)
    return [
        GroupStats(j, int(n_k[j]), int(N_k[j]), float(mean[j]), float(var[j]), float(eta[j]), float(eps[j]))
        for j in range(K)
    ]


def aggregate(stats):
    """Pool-weighted estimate ``sum N_k R_k / N`` and radius ``sum N_k eps_k / N``."""
    N = sum(s.N_k for s in stats)
    estimate = sum(s.N_k * s.mean for s in stats) / N
    radius = sum(s.N_k * s.eps for s in stats) / N
    return estimate, radius


def _compact(raw):
    """Relabel arbitrary integer labels to ``0 .. K-1`` preserving order."""
    values, labels = np.unique(raw, return_inverse=True)
    return labels.astype(np.int64), len(values)


class OneNearestNeighbor(ClassifierMixin, BaseEstimator):
    """Brute-force 1-nearest-neighbour classifier under Euclidean distance.

    Distance ties go to the training point with the lowest rank, where rank
    defaults to the training index. Querying a training point returns its own
    label.
    """

    def fit(self, X, y, rank=None):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.X_ = X
        self.y_ = np.asarray(y)
        self.rank_ = np.arange(len(X)) if rank is None else np.asarray(rank)
        self.classes_ = np.unique(self.y_)
        return self

    def kneighbors(self, X):
        check_is_fitted(self, "X_")
        X = check_array(X, dtype=np.float64)
        best_d = np.full(len(X), np.inf)
        best_i = np.full(len(X), -1, dtype=np.int64)
        for t in range(len(self.X_)):
            _update_nearest(X, best_d, best_i, self.X_[t], t, self.rank_)
        return best_d, best_i

    def predict(self, X):
        _, idx = self.kneighbors(X)
        return self.y_[idx]


def _update_nearest(X, best_d, best_i, x_t, t, rank):
    """Fold training point ``t`` into running nearest-neighbour arrays, in place."""
    d = np.sum((X - x_t) ** 2, axis=1)
    better = d < best_d
    tie = (d == best_d) & (best_i >= 0)
    if np.any(tie):
        tie &= rank[t] < rank[np.maximum(best_i, 0)]
        better |= tie
    best_d[better] = d[better]
    best_i[better] = t


class NearestNeighborPartitioner:
    """Incremental state for the 1-NN loss-bin partition of one pool.

    Feed revealed points in reveal order with :meth:`observe`; :meth:`partition`
    returns the same result a from-scratch fit on the current revealed set
    would, because the training subset is a deterministic function of it:

    * every revealed point carries a seeded coin; those with coin below
      ``train_fraction`` are training points;
    * for each candidate ``k`` and each bin observed so far, the earliest
      revealed point of that bin is a training point as well.
    """

    def __init__(self, features, delta, seed=0, train_fraction=0.5):
        self.features = np.asarray(features, dtype=np.float64)
        n = len(self.features)
        if n < 2 or len(np.unique(self.features, axis=0)) < 2:
            raise DegeneratePoolError("pool needs at least two distinct feature vectors")
        self.delta = check_delta(delta)
        self.train_fraction = train_fraction
        self._coin = np.random.default_rng(seed).random(n)
        self._pos = np.empty(n, dtype=np.int64)
        self._z = np.empty(n)
        self._s = 0
        self._rank = np.full(n, -1, dtype=np.int64)
        self._train = np.empty(n, dtype=np.int64)
        self._T = 0
        self._is_train = np.zeros(n, dtype=bool)
        self._seen_bins = {}
        self._best_d = np.full(n, np.inf)
        self._best_t = np.full(n, -1, dtype=np.int64)

    @property
    def n_revealed(self):
        return self._s

    @property
    def positions(self):
        return self._pos[: self._s]

    @property
    def losses(self):
        return self._z[: self._s]

    @property
    def training_positions(self):
        """Pool positions of the current 1-NN training points, in the order they joined."""
        return self._train[: self._T].copy()

    def _add_training(self, pos):
        if self._is_train[pos]:
            return
        self._is_train[pos] = True
        t = self._T
        self._train[t] = pos
        self._T += 1
        train_rank = self._rank[self._train[: self._T]]
        _update_nearest(self.features, self._best_d, self._best_t, self.features[pos], t, train_rank)

    def _cover_bins(self, k, pos, z):
        seen = self._seen_bins.setdefault(k, set())
        b = int(bin_labels(z, k))
        if b not in seen:
            seen.add(b)
            self._add_training(pos)

    def observe(self, pos, loss):
        pos = int(pos)
        if self._rank[pos] >= 0:
            raise ValueError(f"position {pos} already observed")
        self._rank[pos] = self._s
        self._pos[self._s] = pos
        self._z[self._s] = float(loss)
        self._s += 1
        kmax = candidate_count(self.n_revealed)
        for k in range(1, kmax + 1):
            if k not in self._seen_bins:
                # a new candidate: cover its bins with the earliest revealed points
                for p, z in zip(self.positions.tolist(), self.losses.tolist()):
                    self._cover_bins(k, p, z)
            else:
                self._cover_bins(k, pos, loss)
        if self._coin[pos] < self.train_fraction:
            self._add_training(pos)

    def partition(self, index=None):
        s = self.n_revealed
        if s < 2:
            raise ValueError("need at least two revealed points to partition")
        n = len(self.features)
        T = self._T
        z_train = self._z[self._rank[self._train[:T]]]
        nn = self._best_t
        pos = self.positions
        z_rev = self.losses
        # sufficient statistics per training point, then per bin
        pool_per_t = np.bincount(nn, minlength=T).astype(np.float64)
        nn_rev = nn[pos]
        cnt_t = np.bincount(nn_rev, minlength=T).astype(np.float64)
        sum_t = np.bincount(nn_rev, weights=z_rev, minlength=T)
        sq_t = np.bincount(nn_rev, weights=z_rev * z_rev, minlength=T)

        # all candidates at once: candidate k owns bins offsets[k-1] .. offsets[k-1] + k - 1
        ks = np.arange(1, candidate_count(s) + 1)
        offsets = np.concatenate(([0], np.cumsum(ks)[:-1]))
        total = int(ks.sum())
        tb_all = np.minimum(np.floor(np.outer(ks, z_train)).astype(np.int64), ks[:, None] - 1)
        flat = (tb_all + offsets[:, None]).ravel()
        N_b = np.bincount(flat, weights=np.tile(pool_per_t, len(ks)), minlength=total)
        n_b = np.bincount(flat, weights=np.tile(cnt_t, len(ks)), minlength=total)
        s_b = np.bincount(flat, weights=np.tile(sum_t, len(ks)), minlength=total)
        q_b = np.bincount(flat, weights=np.tile(sq_t, len(ks)), minlength=total)
        owner = np.repeat(np.arange(len(ks)), ks)
        used = N_b > 0
        K_eff = np.bincount(owner, weights=used, minlength=len(ks))
        _, _, _, eps = group_arrays(N_b[used], n_b[used], s_b[used], q_b[used], self.delta, K=K_eff[owner[used]])
        contrib = np.zeros(total)
        contrib[used] = N_b[used] * eps
        obj_all = np.bincount(owner, weights=contrib, minlength=len(ks)) / n
        objectives = {int(k): float(o) for k, o in zip(ks, obj_all)}
        c = int(np.argmin(obj_all))
        k, obj = int(ks[c]), float(obj_all[c])
        tb = tb_all[c]
        used = used[offsets[c]:offsets[c] + k]
        remap = np.cumsum(used) - 1
        labels = remap[tb][nn]
        K = int(np.count_nonzero(used))
        sizes = tuple(int(c) for c in np.bincount(labels, minlength=K))
        return PartitionResult(K, labels, obj, sizes, k, objectives, index)


def one_nn_partition(pool, delta=0.05, seed=0, revealed=None, train_fraction=0.5):
    """1-NN loss-bin partition of ``pool`` from its revealed points.

    ``revealed`` is an optional sequence of ``(position, loss)`` pairs in reveal
    order; by default the pool's own reveal history is used.
    """
    if revealed is None:
        revealed = [(i, pool.revealed_loss(i)) for i in pool.reveal_order]
    part = NearestNeighborPartitioner(pool.features, delta, seed, train_fraction)
    for pos, z in revealed:
        part.observe(pos, z)
    return part.partition(index=pool._index)


def _fixed_partition(labels, K, pool, delta, positions, losses):
    stats = group_stats(labels, K, positions, losses, delta)
    objective = aggregate(stats)[1] if len(positions) else VACUOUS_RADIUS
    sizes = tuple(s.N_k for s in stats)
    return PartitionResult(K, labels, float(objective), sizes, None, {}, pool._index)


def _revealed_arrays(pool):
    positions = np.asarray(pool.reveal_order, dtype=np.int64)
    losses = np.array([pool.revealed_loss(i) for i in pool.reveal_order])
    return positions, losses


def oracle_partition(pool, delta=0.05):
    """Partition by the pool's true group labels; objective from currently revealed points."""
    if pool.groups is None:
        raise ValueError("oracle partition needs true_group on every record")
    labels, K = _compact(pool.groups)
    return _fixed_partition(labels, K, pool, delta, *_revealed_arrays(pool))


def single_partition(pool, delta=0.05):
    labels = np.zeros(len(pool), dtype=np.int64)
    return _fixed_partition(labels, 1, pool, delta, *_revealed_arrays(pool))


def assign(partition, record_id):
    """Group index of ``record_id`` under ``partition``."""
    if partition.index is None:
        raise UnknownIdError(record_id)
    try:
        return int(partition.labels[partition.index[record_id]])
    except KeyError:
        raise UnknownIdError(record_id) from None


class OneNNStrategy:
    """Adaptive 1-NN partition, recomputed from the revealed set on every call."""

    name = "cereval"

    def __init__(self, train_fraction=0.5):
        self.train_fraction = train_fraction

    def start(self, pool, delta, seed):
        self._pool = pool
        self._part = NearestNeighborPartitioner(pool.features, delta, seed, self.train_fraction)

    def observe(self, pos, loss):
        self._part.observe(pos, loss)

    def partition(self):
        return self._part.partition(index=self._pool._index)


class _FixedStrategy:
    def start(self, pool, delta, seed):
        self._pool = pool
        self._labels, self.K = self._make_labels(pool)
        self._sizes = tuple(int(c) for c in np.bincount(self._labels, minlength=self.K))

    def observe(self, pos, loss):
        pass

    def partition(self):
        # objective is filled in by the evaluator from its own group statistics
        return PartitionResult(self.K, self._labels, float("nan"), self._sizes, None, {}, self._pool._index)


class OracleStrategy(_FixedStrategy):
    """True group labels as the partition."""

    name = "oracle"

    def _make_labels(self, pool):
        if pool.groups is None:
            raise ValueError("oracle partition needs true_group on every record")
        return _compact(pool.groups)


class SingleGroupStrategy(_FixedStrategy):
    """The whole pool as one group."""

    name = "single"

    def _make_labels(self, pool):
        return np.zeros(len(pool), dtype=np.int64), 1


def make_strategy(strategy):
    if not isinstance(strategy, str):
        return strategy
    table = {"1nn": OneNNStrategy, "cereval": OneNNStrategy, "oracle": OracleStrategy, "single": SingleGroupStrategy}
    try:
        return table[strategy]()
    except KeyError:
        raise ValueError(f"unknown partition strategy {strategy!r}") from None
