import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedcox.clustering import (
    FeaturePresenceVector,
    FeatureRegistry,
    build_presence_vector,
    hamming_kmeans,
    hamming_objective,
)
from fedcox.survival import InputError
from oracles import exhaustive_partition_objective


def vecs(rows):
    return [FeaturePresenceVector(np.array(r, dtype=np.uint8), i) for i, r in enumerate(rows)]


def same_partition(assign, truth):
    """Labels agree up to a relabelling of clusters."""
    mapping = {}
    for cid, k in assign.items():
        if mapping.setdefault(k, truth[cid]) != truth[cid]:
            return False
    return len(set(mapping.values())) == len(mapping)


class TestPresenceVectors:
    def test_registry_union_keeps_first_seen_order(self):
        reg = FeatureRegistry.from_feature_sets([["b", "a"], ["a", "c"]])
        assert reg.names == ("b", "a", "c")
        assert len(reg) == 3 and reg.index("c") == 2

    def test_bits(self):
        reg = FeatureRegistry(("a", "b", "c", "d"))
        v = build_presence_vector(["d", "a"], reg, center_id="x")
        assert v.bits.tolist() == [1, 0, 0, 1]
        assert v.center_id == "x"

    def test_unknown_feature(self):
        with pytest.raises(InputError):
            build_presence_vector(["z"], FeatureRegistry(("a",)))

    def test_duplicate_registry(self):
        with pytest.raises(InputError):
            FeatureRegistry(("a", "a"))


class TestKMeans:
    def test_c_equals_k_gives_zero_objective(self):
        res = hamming_kmeans(vecs([[1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1]]), 4)
        assert res.objective == 0
        assert sorted(res.assignment.values()) == [0, 1, 2, 3]

    def test_c_one(self):
        rows = [[1, 0, 1], [1, 1, 0], [0, 0, 1]]
        res = hamming_kmeans(vecs(rows), 1)
        assert set(res.assignment.values()) == {0}
        assert res.centroids[0].tolist() == [1, 0, 1]
        assert res.objective == 3

    def test_identical_vectors(self):
        res = hamming_kmeans(vecs([[1, 0, 1]] * 5), 2)
        assert res.objective == 0
        assert all(res.members(k) for k in range(2))

    def test_errors(self):
        with pytest.raises(InputError):
            hamming_kmeans(vecs([[1, 0]]), 2)
        with pytest.raises(InputError):
            hamming_kmeans(vecs([[1, 0]]), 0)

    def test_planted_two_groups(self):
        rng = np.random.default_rng(0)
        rows, truth = [], {}
        for i in range(20):
            g = i % 2
            base = np.r_[np.ones(10), np.zeros(10)] if g == 0 else np.r_[np.zeros(10), np.ones(10)]
            flip = rng.random(20) < 0.1
            rows.append(np.where(flip, 1 - base, base))
            truth[i] = g
        res = hamming_kmeans(vecs(rows), 2)
        assert same_partition(res.assignment, truth)

    def test_history_nonincreasing_without_repair(self):
        rng = np.random.default_rng(2)
        for seed in range(30):
            B = (rng.random((15, 12)) < 0.5).astype(int)
            res = hamming_kmeans(vecs(B), 3, seed=seed)
            assert res.history[-1] == res.objective
            assert res.objective == hamming_objective(
                B, np.array([res.assignment[i] for i in range(15)]), res.centroids
            )
            assert all(b <= a for a, b in zip(res.history[1:], res.history[2:]))

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        B = (rng.random((12, 8)) < 0.5).astype(int)
        a = hamming_kmeans(vecs(B), 3, seed=11)
        b = hamming_kmeans(vecs(B), 3, seed=11)
        assert a.assignment == b.assignment
        np.testing.assert_array_equal(a.centroids, b.centroids)

    def test_exhaustive_optimum_rate(self):
        rng = np.random.default_rng(4)
        hits = 0
        for _ in range(100):
            K = int(rng.integers(3, 11))
            c = int(rng.integers(2, 4))
            B = (rng.random((K, 8)) < 0.5).astype(int)
            best = exhaustive_partition_objective(B, c)
            got = hamming_kmeans(vecs(B), c).objective
            assert got >= best
            hits += got == best
        assert hits >= 95


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 4))
def test_permutation_invariance(seed, c):
    rng = np.random.default_rng(seed)
    K = int(rng.integers(c, 10))
    B = (rng.random((K, 6)) < 0.5).astype(int)
    base = hamming_kmeans(vecs(B), c, seed=1)
    perm = rng.permutation(K)
    shuffled = [FeaturePresenceVector(np.array(B[i], dtype=np.uint8), int(i)) for i in perm]
    other = hamming_kmeans(shuffled, c, seed=1)
    assert other.objective == base.objective
    assert other.assignment == base.assignment


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_objective_never_exceeds_single_cluster(seed):
    rng = np.random.default_rng(seed)
    K = int(rng.integers(2, 10))
    B = (rng.random((K, 7)) < 0.5).astype(int)
    one = hamming_kmeans(vecs(B), 1).objective
    two = hamming_kmeans(vecs(B), 2).objective
    assert two <= one
