"""Feature-presence bit vectors and Hamming k-means over them."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

import numpy as np

from fedcox.survival import InputError


@dataclass(frozen=True)
class FeatureRegistry:
    """Ordered list of every feature name seen across the federation."""

    names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if len(set(self.names)) != len(self.names):
            raise InputError("registry names must be unique")

    @classmethod
    def from_feature_sets(cls, feature_lists: Iterable[Sequence[str]]) -> "FeatureRegistry":
        """Union of names in first-seen order."""
        seen: dict[str, None] = {}
        for names in feature_lists:
            for name in names:
                seen.setdefault(name, None)
        return cls(tuple(seen))

    def __len__(self):
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)


@dataclass(frozen=True)
class FeaturePresenceVector:
    bits: np.ndarray
    center_id: Hashable = None


@dataclass
class ClusterAssignment:
    assignment: dict
    centroids: np.ndarray
    objective: int
    iterations: int
    history: list[int] = field(default_factory=list)

    def members(self, cluster: int) -> list:
        return [cid for cid, k in self.assignment.items() if k == cluster]

    @property
    def n_clusters(self) -> int:
        return self.centroids.shape[0]


def build_presence_vector(features, registry: FeatureRegistry, center_id=None) -> FeaturePresenceVector:
    features = set(features)
    unknown = features.difference(registry.names)
    if unknown:
        raise InputError(f"features not in registry: {sorted(unknown)}")
    bits = np.array([1 if name in features else 0 for name in registry.names], dtype=np.uint8)
    return FeaturePresenceVector(bits, center_id)


def hamming_objective(B: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> int:
    return int(np.sum(B != centroids[labels]))


def _majority(B: np.ndarray) -> np.ndarray:
    # ties go to 1
    return (2 * B.sum(axis=0) >= B.shape[0]).astype(np.uint8)


def _assign(B: np.ndarray, centroids: np.ndarray):
    dist = (B[:, None, :] != centroids[None, :, :]).sum(axis=2)
    labels = np.argmin(dist, axis=1)  # first minimum = lowest cluster index
    return labels, dist[np.arange(B.shape[0]), labels]


def _repair_empty(B, labels, centroids, dist):
    c = centroids.shape[0]
    for k in range(c):
        if np.any(labels == k):
            continue
        counts = np.bincount(labels, minlength=c)
        movable = np.flatnonzero(counts[labels] >= 2)
        # farthest from its centroid; lowest index on ties
        j = movable[np.argmax(dist[movable])]
        labels[j] = k
        centroids[k] = B[j]
        dist[j] = 0
    return labels


def _partition_cost(ones: np.ndarray, sizes: np.ndarray) -> np.ndarray:
    # cost of each cluster under its majority centroid
    return np.minimum(ones, sizes[:, None] - ones).sum(axis=1)


def _best_single_move(B: np.ndarray, labels: np.ndarray, c: int):
    """Best objective-reducing move of one vector to another cluster, or None."""
    sizes = np.bincount(labels, minlength=c)
    ones = np.array([B[labels == k].sum(axis=0) for k in range(c)])
    base = _partition_cost(ones, sizes)
    best_gain, best = 0, None
    for i in range(B.shape[0]):
        src = labels[i]
        if sizes[src] < 2:
            continue
        src_cost = np.minimum(ones[src] - B[i], sizes[src] - 1 - ones[src] + B[i]).sum()
        for k in range(c):
            if k == src:
                continue
            dst_cost = np.minimum(ones[k] + B[i], sizes[k] + 1 - ones[k] - B[i]).sum()
            gain = base[src] + base[k] - src_cost - dst_cost
            if gain > best_gain:
                best_gain, best = gain, (i, k)
    return best


def _lloyd(B: np.ndarray, init: np.ndarray, max_iter: int):
    centroids = B[init].copy()
    c = centroids.shape[0]
    labels, dist = _assign(B, centroids)
    labels = _repair_empty(B, labels, centroids, dist)
    history = [hamming_objective(B, labels, centroids)]
    iterations = 0
    while iterations < max_iter:
        iterations += 1
        for k in range(c):
            centroids[k] = _majority(B[labels == k])
        history.append(hamming_objective(B, labels, centroids))
        new_labels, dist = _assign(B, centroids)
        new_labels = _repair_empty(B, new_labels, centroids, dist)
        if np.array_equal(new_labels, labels):
            # Lloyd is stuck; a single-vector transfer can still lower the cost
            move = _best_single_move(B, labels, c)
            if move is None:
                break
            new_labels = labels.copy()
            new_labels[move[0]] = move[1]
            for k in range(c):
                centroids[k] = _majority(B[new_labels == k])
        labels = new_labels
        history.append(hamming_objective(B, labels, centroids))
    return labels, centroids, history, iterations


def hamming_kmeans(
    vectors: Sequence[FeaturePresenceVector],
    c: int,
    seed: int = 0,
    n_restarts: int = 10,
    max_iter: int = 100,
) -> ClusterAssignment:
    """Cluster presence vectors by Lloyd iterations under Hamming distance.

    Centroids are per-bit majority votes. Each restart draws its initial
    centroids without replacement from the vectors after sorting them
    lexicographically, so the result does not depend on input order. The
    restart with the lowest objective wins, earliest restart on ties.
    """
    K = len(vectors)
    if c <= 0:
        raise InputError("number of clusters must be positive")
    if c > K:
        raise InputError(f"cannot form {c} clusters from {K} vectors")
    ids = [v.center_id if v.center_id is not None else i for i, v in enumerate(vectors)]
    B = np.array([np.asarray(v.bits, dtype=np.uint8) for v in vectors])
    if B.ndim != 2:
        raise InputError("presence vectors must share one length")
    canon = np.lexsort(B.T[::-1])
    Bc = B[canon]
    # seed from distinct vectors where possible; duplicate seeds waste a restart
    first = np.flatnonzero(np.r_[True, np.any(Bc[1:] != Bc[:-1], axis=1)])
    pool = first if first.size >= c else np.arange(K)

    best = None
    for restart in range(n_restarts):
        rng = np.random.default_rng([seed, restart])
        init = pool[rng.choice(pool.size, size=c, replace=False)]
        labels, centroids, history, iters = _lloyd(Bc, init, max_iter)
        obj = history[-1]
        if best is None or obj < best[0]:
            best = (obj, labels, centroids, history, iters)

    obj, labels, centroids, history, iters = best
    orig_labels = np.empty(K, dtype=int)
    orig_labels[canon] = labels
    return ClusterAssignment(
        assignment={cid: int(k) for cid, k in zip(ids, orig_labels)},
        centroids=centroids,
        objective=int(obj),
        iterations=iters,
        history=history,
    )
