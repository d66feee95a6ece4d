"""Distance kernels, top-k selection, and the exact-search oracle.

Everything here is pure with respect to its inputs and safe to call from
multiple threads on shared read-only arrays. L2 scores are *squared*
Euclidean distances (monotone-equivalent to true distances); callers that
need true radii take the square root themselves.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class Metric(enum.Enum):
    """Distance metric. L2 orders ascending, inner product descending."""

    L2 = "l2"
    INNER_PRODUCT = "ip"

    @property
    def ascending(self) -> bool:
        return self is Metric.L2

    @classmethod
    def parse(cls, name: str) -> "Metric":
        name = name.strip().lower()
        for m in cls:
            if name in (m.value, m.name.lower()):
                return m
        raise ValueError(f"unknown metric {name!r} (expected 'l2' or 'ip')")


def _sort_keys(scores: np.ndarray, metric: Metric) -> np.ndarray:
    """Map scores to keys where smaller always means closer."""
    return scores if metric.ascending else -scores


def distance_batch(query: np.ndarray, block: np.ndarray, metric: Metric) -> np.ndarray:
    """Score one query against every row of a vector block.

    L2 returns squared Euclidean distances; inner product returns raw dot
    products. Raises ValueError on dimension mismatch.
    """
    query = np.asarray(query)
    block = np.asarray(block)
    if block.ndim != 2:
        raise ValueError(f"block must be 2-D, got shape {block.shape}")
    if query.ndim != 1 or query.shape[0] != block.shape[1]:
        raise ValueError(
            f"dimension mismatch: query {query.shape} vs block {block.shape}"
        )
    if metric is Metric.L2:
        diff = block - query[None, :]
        return np.einsum("ij,ij->i", diff, diff)
    return block @ query


@dataclass
class KnnResult:
    """Best-first ids and scores for one query."""

    ids: np.ndarray
    scores: np.ndarray

    def __post_init__(self) -> None:
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.scores = np.asarray(self.scores)
        if self.ids.shape != self.scores.shape:
            raise ValueError("ids and scores must have equal length")

    def __len__(self) -> int:
        return int(self.ids.shape[0])


@dataclass
class TopKBuffer:
    """Bounded best-k accumulator with deterministic tie-breaking.

    Entries are kept best-first under the metric comparator; ties on the
    score are broken by ascending external id so that any permutation of
    the same input stream produces an identical buffer.
    """

    k: int
    metric: Metric
    _ids: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    _keys: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.k <= 0:
            raise ValueError(f"k must be positive, got {self.k}")
        if self._ids is None:
            self._ids = np.empty(0, dtype=np.int64)
        if self._keys is None:
            self._keys = np.empty(0, dtype=np.float64)

    def __len__(self) -> int:
        return int(self._ids.shape[0])

    @property
    def full(self) -> bool:
        return len(self) >= self.k

    def update(self, ids: np.ndarray, scores: np.ndarray) -> None:
        """Merge new candidates, keeping the k best overall."""
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size == 0:
            return
        keys = _sort_keys(np.asarray(scores, dtype=np.float64), self.metric)
        if ids.shape != keys.shape:
            raise ValueError("ids and scores must align")
        all_ids = np.concatenate([self._ids, ids])
        all_keys = np.concatenate([self._keys, keys])
        order = np.lexsort((all_ids, all_keys))[: self.k]
        self._ids = all_ids[order]
        self._keys = all_keys[order]

    def kth_score(self) -> float:
        """Score of the current worst kept entry (requires a full buffer)."""
        if not self.full:
            raise ValueError("buffer is not full yet")
        key = float(self._keys[-1])
        return key if self.metric.ascending else -key

    def to_result(self) -> KnnResult:
        scores = self._keys if self.metric.ascending else -self._keys
        return KnnResult(ids=self._ids.copy(), scores=scores.copy())


def topk_update(buf: TopKBuffer, ids: np.ndarray, scores: np.ndarray,
                metric: Metric) -> TopKBuffer:
    """Functional wrapper over TopKBuffer.update (metric must match)."""
    if metric is not buf.metric:
        raise ValueError("metric mismatch with buffer")
    buf.update(ids, scores)
    return buf


def _topk_rows(keys: np.ndarray, ids: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k smallest keys with ties broken by ascending id."""
    n = keys.shape[0]
    if k >= n:
        return np.lexsort((ids, keys))
    kth = np.partition(keys, k - 1)[k - 1]
    below = np.flatnonzero(keys < kth)
    at = np.flatnonzero(keys == kth)
    at = at[np.argsort(ids[at], kind="stable")][: k - below.size]
    sel = np.concatenate([below, at])
    return sel[np.lexsort((ids[sel], keys[sel]))]


def brute_force_knn(
    queries: np.ndarray,
    vectors: np.ndarray,
    k: int,
    metric: Metric,
    ids: np.ndarray | None = None,
    chunk: int = 128,
) -> list[KnnResult]:
    """Exact k-NN over the full store; the ground-truth oracle.

    Scores are accumulated in float64 so that independently computed
    references agree on the ordering. If k exceeds the store size, every
    vector is returned.
    """
    queries = np.atleast_2d(np.asarray(queries))
    vectors = np.asarray(vectors)
    if vectors.ndim != 2 or vectors.shape[0] == 0:
        raise ValueError("store must be a nonempty 2-D array")
    if queries.shape[1] != vectors.shape[1]:
        raise ValueError("query dimension does not match store")
    n = vectors.shape[0]
    if ids is None:
        ids = np.arange(n, dtype=np.int64)
    else:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.shape[0] != n:
            raise ValueError("ids must align with vectors")
    k_eff = min(k, n)

    base = vectors.astype(np.float64, copy=False)
    sq_norms = np.einsum("ij,ij->i", base, base)
    results: list[KnnResult] = []
    for start in range(0, queries.shape[0], chunk):
        q = queries[start : start + chunk].astype(np.float64, copy=False)
        dots = q @ base.T
        if metric is Metric.L2:
            scores = sq_norms[None, :] - 2.0 * dots
            scores += np.einsum("ij,ij->i", q, q)[:, None]
            np.maximum(scores, 0.0, out=scores)
        else:
            scores = dots
        keys = _sort_keys(scores, metric)
        for row in range(q.shape[0]):
            sel = _topk_rows(keys[row], ids, k_eff)
            results.append(KnnResult(ids=ids[sel], scores=scores[row][sel]))
    return results


def recall_at_k(result: KnnResult, truth: KnnResult) -> float:
    """|result ∩ truth| / |truth|."""
    if len(truth) == 0:
        raise ValueError("ground truth is empty")
    hits = np.intersect1d(result.ids, truth.ids).size
    return hits / len(truth)
