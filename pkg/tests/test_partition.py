import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.neighbors import KNeighborsClassifier

from certeval.confseq import group_ci_radius, group_eta
from certeval.dataset import TestPool, UnknownIdError
from certeval.partition import (
    VACUOUS_RADIUS,
    DegeneratePoolError,
    NearestNeighborPartitioner,
    OneNearestNeighbor,
    aggregate,
    assign,
    bin_labels,
    candidate_count,
    group_stats,
    make_strategy,
    one_nn_partition,
    oracle_partition,
    single_partition,
)
from certeval.synthetic import generate, scenario, truncated_normal


def revealed_pool(pool, m, seed=0):
    pool = pool.shuffled(seed)
    for i in range(m):
        pool.reveal_at(i)
    return pool


def two_regime_pool(n=2000, seed=0):
    rng = np.random.default_rng(seed)
    g = rng.integers(1, 3, size=n)
    X = rng.normal(size=(n, 10))
    X[:, 0] += 5.0 * g
    z = truncated_normal(rng, np.where(g == 1, 0.1, 0.9), 0.05)
    return TestPool([f"t{i}" for i in range(n)], X, z, g)


def purity(labels, truth):
    total = 0
    for lab in np.unique(labels):
        total += np.bincount(truth[labels == lab]).max()
    return total / len(labels)


def reference_objective(labels, positions, losses, delta):
    """Weighted radius written out from the closed forms."""
    n = len(labels)
    K = len(np.unique(labels))
    total = 0.0
    for lab in np.unique(labels):
        members = np.flatnonzero(labels == lab)
        z = losses[np.isin(positions, members)]
        if len(z) == 0:
            eps = 1.0
        else:
            v = float(np.mean((z - z.mean()) ** 2))
            eps = group_ci_radius(v, group_eta(len(z), K, delta))
        total += len(members) * eps
    return total / n


class TestBins:
    def test_clamp(self):
        assert bin_labels([0.0, 0.2, 0.5, 0.999, 1.0], 4).tolist() == [0, 0, 2, 3, 3]
        assert bin_labels([1.0], 1).tolist() == [0]

    @given(st.floats(0, 1), st.integers(1, 30))
    def test_range(self, z, k):
        b = int(bin_labels(z, k))
        assert 0 <= b <= k - 1
        assert b == min(math.floor(k * z), k - 1)

    def test_candidate_count(self):
        assert candidate_count(30) == 5
        assert candidate_count(2) == 2
        assert candidate_count(1) == 1


class TestOneNearestNeighbor:
    def test_matches_sklearn_on_continuous_data(self):
        rng = np.random.default_rng(0)
        X, y = rng.normal(size=(80, 4)), rng.integers(0, 3, 80)
        Q = rng.normal(size=(300, 4))
        ours = OneNearestNeighbor().fit(X, y).predict(Q)
        ref = KNeighborsClassifier(n_neighbors=1).fit(X, y).predict(Q)
        assert np.array_equal(ours, ref)

    def test_self_consistency(self):
        rng = np.random.default_rng(1)
        X, y = rng.normal(size=(50, 3)), rng.integers(0, 4, 50)
        clf = OneNearestNeighbor().fit(X, y)
        d, idx = clf.kneighbors(X)
        assert np.all(d == 0)
        assert np.array_equal(clf.predict(X), y)

    def test_ties_go_to_lowest_index(self):
        X = np.array([[0.0], [0.0], [2.0]])
        clf = OneNearestNeighbor().fit(X, [5, 6, 7])
        assert clf.predict([[0.0], [1.0]]).tolist() == [5, 5]

    def test_ties_follow_rank(self):
        X = np.array([[0.0], [0.0]])
        clf = OneNearestNeighbor().fit(X, [5, 6], rank=[1, 0])
        assert clf.predict([[0.0]]).tolist() == [6]

    def test_estimator_protocol(self):
        assert OneNearestNeighbor().get_params() == {}
        with pytest.raises(Exception):
            OneNearestNeighbor().predict([[0.0]])


class TestOneNNPartition:
    def test_constant_losses_collapse(self):
        pool = generate(scenario("s2", n=400, seed=1))
        rev = [(i, 0.2) for i in range(40)]
        result = one_nn_partition(pool, 0.05, seed=0, revealed=rev)
        assert result.K == 1
        assert np.all(result.labels == 0)
        expected = group_ci_radius(0.0, group_eta(40, 1, 0.05))
        assert result.objective == pytest.approx(expected, abs=1e-12)
        for obj in result.candidate_objectives.values():
            assert obj == pytest.approx(expected, abs=1e-12)

    def test_separates_two_regimes(self):
        # splitting only beats one group once the per-group eta is small, i.e. after a few thousand reveals
        pool = revealed_pool(two_regime_pool(5000), 4000, seed=3)
        result = one_nn_partition(pool, 0.05, seed=3)
        assert result.K >= 2
        assert purity(result.labels, pool.groups) >= 0.95

    def test_two_regimes_stay_single_early(self):
        pool = revealed_pool(two_regime_pool(5000), 500, seed=3)
        result = one_nn_partition(pool, 0.05, seed=3)
        assert result.candidate_k == 1
        assert result.candidate_objectives[1] < result.candidate_objectives[2]

    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    @pytest.mark.parametrize("m", [30, 97, 400])
    def test_objective_is_brute_force_minimum(self, seed, m):
        pool = revealed_pool(generate(scenario("s3", n=1500, seed=seed)), m, seed=seed)
        positions = np.array(pool.reveal_order)
        losses = np.array([pool.revealed_loss(i) for i in positions])
        part = NearestNeighborPartitioner(pool.features, 0.05, seed)
        for p, z in zip(positions, losses):
            part.observe(p, z)
        result = part.partition()

        # rebuild the training subset from its definition
        coin = np.random.default_rng(seed).random(len(pool))
        kmax = candidate_count(m)
        train = {int(p) for p in positions if coin[p] < 0.5}
        for k in range(1, kmax + 1):
            seen = set()
            for p, z in zip(positions, losses):
                b = int(bin_labels(z, k))
                if b not in seen:
                    seen.add(b)
                    train.add(int(p))
        assert set(part.training_positions.tolist()) == train

        train = np.array(sorted(train, key=lambda p: pool.reveal_order.index(p)))
        z_train = losses[[pool.reveal_order.index(p) for p in train]]
        objectives = {}
        for k in range(1, kmax + 1):
            clf = KNeighborsClassifier(n_neighbors=1).fit(pool.features[train], bin_labels(z_train, k))
            labels = clf.predict(pool.features)
            objectives[k] = reference_objective(labels, positions, losses, 0.05)
        for k, obj in objectives.items():
            assert result.candidate_objectives[k] == pytest.approx(obj, abs=1e-12)
        best = min(objectives, key=lambda k: (objectives[k], k))
        assert result.candidate_k == best
        assert result.objective == pytest.approx(min(objectives.values()), abs=1e-12)

    def test_objective_matches_group_stats(self):
        pool = revealed_pool(generate(scenario("s2", n=1000, seed=5)), 120, seed=5)
        result = one_nn_partition(pool, 0.05, seed=5)
        positions = np.array(pool.reveal_order)
        losses = np.array([pool.revealed_loss(i) for i in positions])
        stats = group_stats(result.labels, result.K, positions, losses, 0.05)
        assert aggregate(stats)[1] == pytest.approx(result.objective, abs=1e-12)

    def test_label_completeness(self):
        pool = revealed_pool(generate(scenario("s2", n=800, seed=2)), 60, seed=2)
        result = one_nn_partition(pool, 0.05, seed=2)
        assert sum(result.group_sizes) == len(pool)
        assert set(result.labels.tolist()) == set(range(result.K))
        assert min(result.group_sizes) > 0

    def test_seeded_determinism(self):
        pool = revealed_pool(generate(scenario("s3", n=800, seed=4)), 80, seed=4)
        a = one_nn_partition(pool, 0.05, seed=9)
        b = one_nn_partition(pool, 0.05, seed=9)
        assert np.array_equal(a.labels, b.labels)
        assert a.objective == b.objective
        assert a.candidate_objectives == b.candidate_objectives

    def test_incremental_equals_from_scratch(self):
        pool = revealed_pool(generate(scenario("s2", n=600, seed=6)), 150, seed=6)
        rev = [(i, pool.revealed_loss(i)) for i in pool.reveal_order]
        inc = NearestNeighborPartitioner(pool.features, 0.05, seed=1)
        for s, (p, z) in enumerate(rev, start=1):
            inc.observe(p, z)
            if s >= 2 and s % 37 == 0:
                scratch = one_nn_partition(pool, 0.05, seed=1, revealed=rev[:s])
                got = inc.partition()
                assert np.array_equal(got.labels, scratch.labels)
                assert got.objective == scratch.objective

    def test_training_fraction_roughly_half(self):
        pool = revealed_pool(generate(scenario("s1", n=3000, seed=0)), 2000)
        part = NearestNeighborPartitioner(pool.features, 0.05, seed=0)
        for i in pool.reveal_order:
            part.observe(i, pool.revealed_loss(i))
        assert 0.45 <= len(part.training_positions) / 2000 <= 0.56

    def test_degenerate_pool(self):
        pool = TestPool(["a", "b", "c"], np.ones((3, 2)), [0.1, 0.2, 0.3])
        with pytest.raises(DegeneratePoolError):
            one_nn_partition(pool, revealed=[(0, 0.1), (1, 0.2)])

    def test_needs_two_revealed(self):
        pool = generate(scenario("s1", n=20))
        with pytest.raises(ValueError):
            one_nn_partition(pool, revealed=[(0, 0.1)])

    def test_double_observe(self):
        part = NearestNeighborPartitioner(np.eye(3), 0.05)
        part.observe(0, 0.5)
        with pytest.raises(ValueError):
            part.observe(0, 0.5)


class TestVacuousGroups:
    def test_unrevealed_group_costs_radius_one(self):
        labels = np.array([0, 0, 0, 1, 1])
        stats = group_stats(labels, 2, [0, 1], [0.2, 0.4], 0.05)
        assert stats[1].n_k == 0
        assert stats[1].eps == VACUOUS_RADIUS
        expected = (3 * group_ci_radius(0.01, group_eta(2, 2, 0.05)) + 2 * 1.0) / 5
        assert aggregate(stats)[1] == pytest.approx(expected, abs=1e-12)

    def test_biased_variance(self):
        stats = group_stats(np.zeros(4, dtype=int), 1, [0, 1, 2], [0.0, 0.5, 1.0], 0.05)
        assert stats[0].variance == pytest.approx(1 / 6, abs=1e-15)
        assert stats[0].mean == pytest.approx(0.5)


class TestOracle:
    def test_s1(self):
        result = oracle_partition(generate(scenario("s1", n=500)))
        assert result.K == 1
        assert np.all(result.labels == 0)

    def test_s2_sizes(self):
        result = oracle_partition(generate(scenario("s2")))
        assert result.K == 3
        assert all(abs(s - 5000 / 3) <= 4 * math.sqrt(5000) for s in result.group_sizes)

    def test_small_labels(self):
        pool = TestPool(["a", "b", "c"], [[0.0], [1.0], [2.0]], [0.1, 0.2, 0.3], [1, 1, 2])
        result = oracle_partition(pool)
        assert result.K == 2
        assert result.group_sizes == (2, 1)
        assert result.objective == VACUOUS_RADIUS

    def test_missing_groups(self):
        pool = TestPool(["a", "b"], [[0.0], [1.0]], [0.1, 0.2])
        with pytest.raises(ValueError):
            oracle_partition(pool)

    def test_objective_from_revealed(self):
        pool = TestPool(["a", "b", "c", "d"], np.eye(4), [0.1, 0.2, 0.3, 0.4], [1, 1, 2, 2])
        for i in range(4):
            pool.reveal_at(i)
        result = oracle_partition(pool)
        positions, losses = np.arange(4), np.array([0.1, 0.2, 0.3, 0.4])
        assert result.objective == pytest.approx(
            reference_objective(result.labels, positions, losses, 0.05), abs=1e-12
        )


class TestAssign:
    def test_lookup(self):
        pool = TestPool(["a", "b", "c"], [[0.0], [1.0], [2.0]], [0.1, 0.2, 0.3], [2, 1, 2])
        result = oracle_partition(pool)
        assert [assign(result, r) for r in "abc"] == [1, 0, 1]
        assert [assign(result, r) for r in "abc"] == [1, 0, 1]
        with pytest.raises(UnknownIdError):
            assign(result, "z")

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10**6))
    def test_covers_id_set(self, seed):
        pool = revealed_pool(generate(scenario("s2", n=200, seed=seed % 50)), 30, seed=seed)
        result = one_nn_partition(pool, 0.05, seed=seed)
        groups = {}
        for rid in pool.ids:
            groups.setdefault(assign(result, rid), set()).add(rid)
        assert set().union(*groups.values()) == set(pool.ids)
        assert sum(len(g) for g in groups.values()) == len(pool)


def test_single_partition():
    pool = revealed_pool(generate(scenario("s1", n=100)), 10)
    result = single_partition(pool)
    assert result.K == 1
    assert result.group_sizes == (100,)


def test_make_strategy():
    assert make_strategy("1nn").name == "cereval"
    assert make_strategy("oracle").name == "oracle"
    assert make_strategy("single").name == "single"
    with pytest.raises(ValueError):
        make_strategy("kmeans")
