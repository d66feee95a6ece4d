"""k-means training, assignment, partition splitting, and local refinement.

Cluster geometry is always Euclidean over the raw vectors, matching common
inverted-file practice; inner-product scoring happens at search time only.
One k-means iteration is (reassign, repair empty clusters, update means),
so after the final iteration every centroid is the mean of its members.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .kernels import Metric

if TYPE_CHECKING:  # pragma: no cover
    from .index import MultiLevelIndex

_ASSIGN_CHUNK = 8192


@dataclass
class KMeansConfig:
    n_clusters: int
    n_iters: int = 10
    seed: int = 0
    metric: Metric = Metric.L2

    def __post_init__(self) -> None:
        if self.n_clusters <= 0:
            raise ValueError("n_clusters must be positive")
        if self.n_iters < 0:
            raise ValueError("n_iters must be non-negative")


@dataclass
class Clustering:
    """Final centroids and per-point cluster indices.

    ``objective_history[i]`` is the total within-cluster squared distance
    after iteration i (entry 0 is measured against the seeded centroids);
    it is non-increasing. ``reduced`` flags that fewer clusters than
    requested were produced because the data had too few distinct points.
    """

    centroids: np.ndarray
    assignments: np.ndarray
    objective_history: list[float] = field(default_factory=list)
    reduced: bool = False

    @property
    def n_clusters(self) -> int:
        return int(self.centroids.shape[0])


def assign_nearest(points: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest centroid per point. Returns (assignments, squared distances)."""
    n = points.shape[0]
    assign = np.empty(n, dtype=np.int64)
    sqdist = np.empty(n, dtype=np.float64)
    c_norms = np.einsum("ij,ij->i", centroids, centroids)
    for start in range(0, n, _ASSIGN_CHUNK):
        p = points[start : start + _ASSIGN_CHUNK]
        d2 = c_norms[None, :] - 2.0 * (p @ centroids.T)
        d2 += np.einsum("ij,ij->i", p, p)[:, None]
        np.maximum(d2, 0.0, out=d2)
        idx = np.argmin(d2, axis=1)
        assign[start : start + p.shape[0]] = idx
        sqdist[start : start + p.shape[0]] = d2[np.arange(p.shape[0]), idx]
    return assign, sqdist


def _cluster_means(points: np.ndarray, assign: np.ndarray, k: int,
                   fallback: np.ndarray) -> np.ndarray:
    """Per-cluster means; empty clusters keep their fallback centroid."""
    d = points.shape[1]
    counts = np.bincount(assign, minlength=k).astype(np.float64)
    sums = np.empty((k, d), dtype=np.float64)
    for j in range(d):
        sums[:, j] = np.bincount(assign, weights=points[:, j], minlength=k)
    means = fallback.astype(np.float64).copy()
    nonempty = counts > 0
    means[nonempty] = sums[nonempty] / counts[nonempty, None]
    return means.astype(points.dtype)


def kmeans_plusplus_init(points: np.ndarray, n_clusters: int,
                         rng: np.random.Generator) -> tuple[np.ndarray, bool]:
    """k-means++ seeding. Stops early (reduced=True) when the data runs
    out of distinct points."""
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    min_sq = assign_nearest(points, points[chosen[-1]][None, :])[1]
    while len(chosen) < n_clusters:
        total = float(min_sq.sum())
        if total <= 0.0:
            return points[chosen].copy(), True
        idx = int(rng.choice(n, p=min_sq / total))
        chosen.append(idx)
        d2 = np.einsum("ij,ij->i", points - points[idx], points - points[idx])
        np.minimum(min_sq, d2, out=min_sq)
    return points[chosen].copy(), False


def _repair_empty_clusters(points: np.ndarray, assign: np.ndarray,
                           sqdist: np.ndarray, k: int) -> list[int]:
    """Reseed each empty cluster with the point farthest from its centroid.

    Points are stolen only from clusters with two or more members. Returns
    the clusters that could not be repaired (no distinct point available).
    """
    counts = np.bincount(assign, minlength=k)
    dead: list[int] = []
    for empty in np.flatnonzero(counts == 0):
        movable = (counts[assign] >= 2) & (sqdist > 0.0)
        if not movable.any():
            dead.append(int(empty))
            continue
        cand = np.flatnonzero(movable)
        victim = int(cand[np.argmax(sqdist[cand])])
        counts[assign[victim]] -= 1
        counts[empty] += 1
        assign[victim] = empty
        sqdist[victim] = 0.0
    return dead


def _mean_objective(points_sq_total: float, assign: np.ndarray,
                    centroids: np.ndarray) -> float:
    """Within-cluster squared distance when centroids are the member means
    (parallel-axis identity: total |p|^2 minus per-cluster n_j |c_j|^2)."""
    counts = np.bincount(assign, minlength=centroids.shape[0])
    c_sq = np.einsum("ij,ij->i", centroids.astype(np.float64),
                     centroids.astype(np.float64))
    return max(points_sq_total - float(counts @ c_sq), 0.0)


def kmeans(points: np.ndarray, config: KMeansConfig) -> Clustering:
    """Lloyd's algorithm with k-means++ seeding, deterministic given the seed."""
    points = np.asarray(points)
    if points.ndim != 2 or points.shape[0] == 0:
        raise ValueError("points must be a nonempty 2-D array")
    k = min(config.n_clusters, points.shape[0])
    reduced = k < config.n_clusters

    rng = np.random.default_rng(config.seed)
    centroids, hit_limit = kmeans_plusplus_init(points, k, rng)
    reduced = reduced or hit_limit
    k = centroids.shape[0]

    pts64 = points.astype(np.float64, copy=False)
    points_sq_total = float(np.einsum("ij,ij->i", pts64, pts64).sum())
    assign, sqdist = assign_nearest(points, centroids)
    history = [float(sqdist.sum())]
    for it in range(config.n_iters):
        dead = _repair_empty_clusters(points, assign, sqdist, k)
        if dead:
            keep = np.setdiff1d(np.arange(k), np.array(dead))
            centroids = centroids[keep]
            remap = np.full(k, -1, dtype=np.int64)
            remap[keep] = np.arange(keep.size)
            assign = remap[assign]
            k = keep.size
            reduced = True
        centroids = _cluster_means(points, assign, k, centroids)
        history.append(_mean_objective(points_sq_total, assign, centroids))
        if it < config.n_iters - 1:
            assign, sqdist = assign_nearest(points, centroids)
    return Clustering(centroids=centroids, assignments=assign,
                      objective_history=history, reduced=reduced)


@dataclass
class SplitResult:
    """Index masks and fresh centroids for the two halves of a partition."""

    left_rows: np.ndarray
    right_rows: np.ndarray
    left_centroid: np.ndarray
    right_centroid: np.ndarray


def split_partition(vectors: np.ndarray, seed: int, metric: Metric,
                    n_iters: int = 10) -> SplitResult | None:
    """Two-way k-means split. Returns None when the rows cannot be split
    into two nonempty halves (fewer than two distinct vectors)."""
    vectors = np.asarray(vectors)
    if vectors.shape[0] < 2:
        return None
    result = kmeans(vectors, KMeansConfig(n_clusters=2, n_iters=n_iters,
                                          seed=seed, metric=metric))
    if result.n_clusters < 2:
        return None
    left = np.flatnonzero(result.assignments == 0)
    right = np.flatnonzero(result.assignments == 1)
    if left.size == 0 or right.size == 0:
        return None
    return SplitResult(left_rows=left, right_rows=right,
                       left_centroid=result.centroids[0],
                       right_centroid=result.centroids[1])


@dataclass
class RefinementSummary:
    partition_ids: list[int]
    vectors_seen: int
    vectors_moved: int
    objective_before: float
    objective_after: float


def refine_partitions(index: "MultiLevelIndex", level: int,
                      seed_partition_ids: Sequence[int], r_f: int,
                      n_iters: int = 1) -> RefinementSummary:
    """Re-cluster the neighborhood of the seed partitions in place.

    The neighborhood is the union, over seeds, of the r_f partitions whose
    centroids are nearest the seed centroid (the seed itself included).
    Runs n_iters k-means rounds seeded by the current centroids, then a
    final reassignment; member lists, the vector map, and the parent-level
    centroid rows are all updated consistently. Partitions left empty keep
    their previous centroid.
    """
    if level < 0 or level >= index.n_levels - 1:
        raise ValueError(f"level {level} out of refinable range")
    if r_f <= 0:
        raise ValueError("r_f must be positive")
    level_pids = index.partition_ids(level)
    for pid in seed_partition_ids:
        if pid not in level_pids:
            raise ValueError(f"partition {pid} does not exist at level {level}")

    all_pids = sorted(level_pids)
    all_centroids = np.stack([index.centroid_of(level, pid) for pid in all_pids])
    neighborhood: set[int] = set()
    for pid in seed_partition_ids:
        seed_c = index.centroid_of(level, pid)
        d2 = np.einsum("ij,ij->i", all_centroids - seed_c, all_centroids - seed_c)
        order = np.argsort(d2, kind="stable")[: min(r_f, len(all_pids))]
        neighborhood.update(all_pids[i] for i in order)
    pids = sorted(neighborhood)

    member_ids = []
    member_vecs = []
    spans = []
    for pid in pids:
        ids, vecs = index.members(level, pid)
        member_ids.append(ids)
        member_vecs.append(vecs)
        spans.append(ids.shape[0])
    ids_all = np.concatenate(member_ids)
    vecs_all = np.vstack(member_vecs)
    old_assign = np.repeat(np.arange(len(pids)), spans)

    centroids = np.stack([index.centroid_of(level, pid) for pid in pids])
    diff = vecs_all - centroids[old_assign]
    objective_before = float(np.einsum("ij,ij->i", diff, diff).sum())

    assign, _ = assign_nearest(vecs_all, centroids)
    for _ in range(n_iters):
        centroids = _cluster_means(vecs_all, assign, len(pids), centroids)
        assign, _ = assign_nearest(vecs_all, centroids)
    centroids = _cluster_means(vecs_all, assign, len(pids), centroids)

    moved = int(np.count_nonzero(assign != old_assign))
    for slot, pid in enumerate(pids):
        rows = np.flatnonzero(assign == slot)
        index.replace_members(level, pid, ids_all[rows], vecs_all[rows])
        if rows.size > 0:
            index.set_centroid(level, pid, centroids[slot])

    diff = vecs_all - centroids[assign]
    objective_after = float(np.einsum("ij,ij->i", diff, diff).sum())
    return RefinementSummary(partition_ids=pids, vectors_seen=int(ids_all.shape[0]),
                             vectors_moved=moved, objective_before=objective_before,
                             objective_after=objective_after)
