"""The multi-level partitioned index: storage layout, build, updates, stats.

Level 0 partitions hold data vectors keyed by external id. A partition at
level l > 0 holds one row per level-(l-1) partition: the child partition's
current centroid, keyed by the child's partition id. The top level always
has exactly one partition. Centroids are not recomputed on insert/delete;
they drift until maintenance refines them.

Writers (insert/delete/maintenance) must be exclusive; concurrent readers
are safe only while no writer runs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import clustering
from .kernels import Metric

_SNAPSHOT_MAGIC = b"AIVF"
_SNAPSHOT_VERSION = 1


class Partition:
    """A contiguous block of (id, vector) rows with amortized growth."""

    __slots__ = ("pid", "level", "parent_pid", "size", "_ids", "_vectors")

    def __init__(self, pid: int, level: int, d: int,
                 parent_pid: int | None = None) -> None:
        self.pid = pid
        self.level = level
        self.parent_pid = parent_pid
        self.size = 0
        self._ids = np.empty(8, dtype=np.int64)
        self._vectors = np.empty((8, d), dtype=np.float32)

    @property
    def ids(self) -> np.ndarray:
        return self._ids[: self.size]

    @property
    def vectors(self) -> np.ndarray:
        return self._vectors[: self.size]

    @property
    def dim(self) -> int:
        return self._vectors.shape[1]

    def _reserve(self, extra: int) -> None:
        need = self.size + extra
        cap = self._ids.shape[0]
        if need <= cap:
            return
        while cap < need:
            cap *= 2
        self._ids = np.resize(self._ids, cap)
        grown = np.empty((cap, self.dim), dtype=np.float32)
        grown[: self.size] = self._vectors[: self.size]
        self._vectors = grown

    def append(self, ids: np.ndarray, vectors: np.ndarray) -> None:
        ids = np.atleast_1d(np.asarray(ids, dtype=np.int64))
        if ids.shape[0] == 0:
            return
        vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float32))
        if vectors.shape != (ids.shape[0], self.dim):
            raise ValueError("ids and vectors must align")
        self._reserve(ids.shape[0])
        self._ids[self.size : self.size + ids.shape[0]] = ids
        self._vectors[self.size : self.size + ids.shape[0]] = vectors
        self.size += ids.shape[0]

    def find_row(self, key: int) -> int:
        rows = np.flatnonzero(self.ids == key)
        if rows.size == 0:
            raise KeyError(f"id {key} not in partition {self.pid}")
        return int(rows[0])

    def remove_row(self, row: int) -> None:
        """Swap the last row into the hole; storage stays compact."""
        last = self.size - 1
        if row != last:
            self._ids[row] = self._ids[last]
            self._vectors[row] = self._vectors[last]
        self.size = last

    def replace(self, ids: np.ndarray, vectors: np.ndarray) -> None:
        self.size = 0
        self.append(ids, vectors)

    def state_copy(self) -> tuple[np.ndarray, np.ndarray]:
        return self.ids.copy(), self.vectors.copy()


class PartitionStats:
    """Windowed per-partition access frequencies feeding the cost model.

    Hits accumulate per (level, pid); roll_window turns them into
    frequencies A = hits / |W| and clears the counters. When no window
    size is configured the divisor is the number of queries observed
    since the last roll (window == maintenance interval).
    """

    def __init__(self, window_size: int | None = None) -> None:
        self.window_size = window_size
        self.hits: dict[tuple[int, int], int] = {}
        self.frequency: dict[tuple[int, int], float] = {}
        self.queries_seen = 0

    def record_access(self, level: int, pid: int) -> None:
        key = (level, pid)
        self.hits[key] = self.hits.get(key, 0) + 1

    def record_query(self, scanned: dict[int, Iterable[int]] | None = None) -> None:
        self.queries_seen += 1
        if scanned:
            for level, pids in scanned.items():
                for pid in pids:
                    self.record_access(level, pid)

    def roll_window(self) -> None:
        divisor = self.window_size if self.window_size else max(self.queries_seen, 1)
        self.frequency = {key: hits / divisor for key, hits in self.hits.items()}
        self.hits = {}
        self.queries_seen = 0

    def access_frequency(self, level: int, pid: int) -> float:
        return self.frequency.get((level, pid), 0.0)

    def set_frequency(self, level: int, pid: int, value: float) -> None:
        self.frequency[(level, pid)] = value

    def drop(self, level: int, pid: int) -> None:
        self.hits.pop((level, pid), None)
        self.frequency.pop((level, pid), None)


def record_access(stats: PartitionStats, level: int, pid: int) -> PartitionStats:
    stats.record_access(level, pid)
    return stats


def roll_window(stats: PartitionStats) -> PartitionStats:
    stats.roll_window()
    return stats


@dataclass
class _UndoBlob:
    """Everything needed to restore the index exactly after one action."""

    level: int
    removed: Partition | None
    removed_ids: np.ndarray
    removed_vectors: np.ndarray
    parent_pid: int
    parent_ids: np.ndarray
    parent_vectors: np.ndarray
    created_pids: list[int] = field(default_factory=list)
    touched: list[tuple[int, np.ndarray, np.ndarray]] = field(default_factory=list)
    next_pid: int = 0


class MultiLevelIndex:
    def __init__(self, d: int, metric: Metric) -> None:
        self.d = d
        self.metric = metric
        self._levels: list[dict[int, Partition]] = []
        self._map: dict[int, int] = {}
        self._next_pid = 0
        self.max_norm = 0.0

    # ------------------------------------------------------------------
    # introspection
    # ------------------------------------------------------------------

    @property
    def n_levels(self) -> int:
        return len(self._levels)

    @property
    def top(self) -> Partition:
        (part,) = self._levels[-1].values()
        return part

    def n_partitions(self, level: int) -> int:
        return len(self._levels[level])

    def partition_ids(self, level: int) -> list[int]:
        return sorted(self._levels[level])

    def get_partition(self, level: int, pid: int) -> Partition:
        try:
            return self._levels[level][pid]
        except (IndexError, KeyError):
            raise KeyError(f"no partition {pid} at level {level}") from None

    @property
    def n_vectors(self) -> int:
        return len(self._map)

    def all_ids(self) -> np.ndarray:
        return np.fromiter(self._map.keys(), dtype=np.int64, count=len(self._map))

    def contains(self, external_id: int) -> bool:
        return int(external_id) in self._map

    def partition_of(self, external_id: int) -> int | None:
        return self._map.get(int(external_id))

    def get_vector(self, external_id: int) -> np.ndarray:
        pid = self._map[int(external_id)]
        part = self._levels[0][pid]
        return part.vectors[part.find_row(int(external_id))].copy()

    def members(self, level: int, pid: int) -> tuple[np.ndarray, np.ndarray]:
        part = self.get_partition(level, pid)
        return part.ids, part.vectors

    def parent_of(self, level: int, pid: int) -> Partition:
        part = self.get_partition(level, pid)
        if part.parent_pid is None:
            raise ValueError(f"partition {pid} at level {level} has no parent")
        return self._levels[level + 1][part.parent_pid]

    def centroid_of(self, level: int, pid: int) -> np.ndarray:
        parent = self.parent_of(level, pid)
        return parent.vectors[parent.find_row(pid)]

    def set_centroid(self, level: int, pid: int, value: np.ndarray) -> None:
        parent = self.parent_of(level, pid)
        parent._vectors[parent.find_row(pid)] = np.asarray(value, dtype=np.float32)

    def level_centroid_arrays(self, level: int) -> tuple[np.ndarray, np.ndarray]:
        """All (pid, centroid) rows for one level, gathered from its parents
        in deterministic (parent pid, row) order."""
        if level >= self.n_levels - 1:
            raise ValueError("the top level has no centroid rows")
        ids = []
        vecs = []
        for ppid in self.partition_ids(level + 1):
            parent = self._levels[level + 1][ppid]
            ids.append(parent.ids.copy())
            vecs.append(parent.vectors.copy())
        return np.concatenate(ids), np.vstack(vecs)

    # ------------------------------------------------------------------
    # construction
    # ------------------------------------------------------------------

    def _new_pid(self) -> int:
        pid = self._next_pid
        self._next_pid += 1
        return pid

    @staticmethod
    def build(
        vectors: np.ndarray,
        ids: np.ndarray | None = None,
        n_partitions: Sequence[int] | None = None,
        metric: Metric = Metric.L2,
        seed: int = 0,
        n_iters: int = 10,
    ) -> "MultiLevelIndex":
        """Cluster vectors into the configured hierarchy.

        ``n_partitions`` lists partition counts from the data level upward,
        strictly decreasing; a single top partition of centroids is always
        added above the last entry. Defaults to sqrt(n) data partitions.
        """
        vectors = np.asarray(vectors, dtype=np.float32)
        if vectors.ndim != 2 or vectors.shape[0] == 0:
            raise ValueError("vectors must be a nonempty 2-D array")
        n, d = vectors.shape
        if ids is None:
            ids = np.arange(n, dtype=np.int64)
        else:
            ids = np.asarray(ids, dtype=np.int64)
            if ids.shape[0] != n or np.unique(ids).size != n:
                raise ValueError("ids must be unique and align with vectors")
        if n_partitions is None:
            n_partitions = [max(1, int(round(np.sqrt(n))))]
        n_partitions = list(n_partitions)
        if any(p <= 0 for p in n_partitions):
            raise ValueError("partition counts must be positive")
        if any(b >= a for a, b in zip(n_partitions, n_partitions[1:])):
            raise ValueError("n_partitions must be strictly decreasing")
        if n_partitions[0] > n:
            raise ValueError(
                f"cannot build {n_partitions[0]} partitions from {n} vectors"
            )

        index = MultiLevelIndex(d=d, metric=metric)
        index.max_norm = float(np.sqrt(np.einsum("ij,ij->i", vectors, vectors).max()))

        member_ids: np.ndarray = ids
        member_vecs: np.ndarray = vectors
        for level, count in enumerate(n_partitions):
            result = clustering.kmeans(
                member_vecs,
                clustering.KMeansConfig(n_clusters=min(count, member_vecs.shape[0]),
                                        n_iters=n_iters, seed=seed + level,
                                        metric=metric),
            )
            level_parts: dict[int, Partition] = {}
            pids = np.empty(result.n_clusters, dtype=np.int64)
            for c in range(result.n_clusters):
                part = Partition(index._new_pid(), level, d)
                rows = np.flatnonzero(result.assignments == c)
                part.append(member_ids[rows], member_vecs[rows])
                level_parts[part.pid] = part
                pids[c] = part.pid
            index._levels.append(level_parts)
            member_ids = pids
            member_vecs = result.centroids.astype(np.float32)

        top = Partition(index._new_pid(), len(n_partitions), d)
        top.append(member_ids, member_vecs)
        index._levels.append({top.pid: top})
        index._rewire_parents()
        index._map = {
            int(i): part.pid
            for part in index._levels[0].values()
            for i in part.ids
        }
        return index

    def _rewire_parents(self) -> None:
        for level in range(self.n_levels - 1):
            for ppid, parent in self._levels[level + 1].items():
                for child_pid in parent.ids:
                    self._levels[level][int(child_pid)].parent_pid = ppid

    # ------------------------------------------------------------------
    # routing and updates
    # ------------------------------------------------------------------

    def route(self, vector: np.ndarray, full_scan: bool = False) -> int:
        """Level-0 partition chosen by top-down nearest-centroid descent.

        With full_scan=True every level is scanned fully, which reduces to
        the flat nearest level-0 centroid.
        """
        vector = np.asarray(vector, dtype=np.float32)
        if full_scan:
            pids, centroids = self.level_centroid_arrays(0)
            diff = centroids - vector[None, :]
            return int(pids[np.argmin(np.einsum("ij,ij->i", diff, diff))])
        part = self.top
        while part.level > 0:
            diff = part.vectors - vector[None, :]
            d2 = np.einsum("ij,ij->i", diff, diff)
            if part.level > 1:
                # never descend into a childless partition
                empty = np.array([self._levels[part.level - 1][int(c)].size == 0
                                  for c in part.ids])
                d2[empty] = np.inf
            if part.size == 0 or not np.isfinite(d2).any():
                raise ValueError(f"no routable child under partition {part.pid}")
            row = int(np.argmin(d2))
            part = self._levels[part.level - 1][int(part.ids[row])]
        return part.pid

    def insert(self, vector: np.ndarray, external_id: int) -> int:
        """Append one vector to the nearest level-0 partition."""
        external_id = int(external_id)
        if external_id in self._map:
            raise KeyError(f"duplicate id {external_id}")
        vector = np.asarray(vector, dtype=np.float32)
        if vector.shape != (self.d,):
            raise ValueError(f"expected dimension {self.d}, got {vector.shape}")
        pid = self.route(vector)
        self._levels[0][pid].append(external_id, vector[None, :])
        self._map[external_id] = pid
        self.max_norm = max(self.max_norm, float(np.linalg.norm(vector)))
        return pid

    def insert_batch(self, vectors: np.ndarray, ids: np.ndarray) -> np.ndarray:
        """Insert many vectors, batching the descent level by level."""
        vectors = np.asarray(vectors, dtype=np.float32)
        ids = np.asarray(ids, dtype=np.int64)
        if vectors.ndim != 2 or vectors.shape[1] != self.d:
            raise ValueError("vector block dimension mismatch")
        if ids.shape[0] != vectors.shape[0]:
            raise ValueError("ids must align with vectors")
        for external_id in ids:
            if int(external_id) in self._map:
                raise KeyError(f"duplicate id {int(external_id)}")
        if np.unique(ids).size != ids.size:
            raise KeyError("duplicate id within batch")

        current = np.full(ids.shape[0], self.top.pid, dtype=np.int64)
        for level in range(self.n_levels - 1, 0, -1):
            chosen = np.empty_like(current)
            for pid in np.unique(current):
                part = self._levels[level][int(pid)]
                rows = np.flatnonzero(current == pid)
                block = vectors[rows]
                c_norm = np.einsum("ij,ij->i", part.vectors, part.vectors)
                d2 = c_norm[None, :] - 2.0 * (block @ part.vectors.T)
                if level > 1:
                    empty = np.array([self._levels[level - 1][int(c)].size == 0
                                      for c in part.ids])
                    d2[:, empty] = np.inf
                chosen[rows] = part.ids[np.argmin(d2, axis=1)]
            current = chosen
        for pid in np.unique(current):
            rows = np.flatnonzero(current == pid)
            self._levels[0][int(pid)].append(ids[rows], vectors[rows])
            for external_id in ids[rows]:
                self._map[int(external_id)] = int(pid)
        if ids.size:
            norms = np.sqrt(np.einsum("ij,ij->i", vectors, vectors))
            self.max_norm = max(self.max_norm, float(norms.max()))
        return current

    def delete(self, external_id: int) -> bool:
        """Remove a vector if present; storage is compacted immediately."""
        pid = self._map.pop(int(external_id), None)
        if pid is None:
            return False
        part = self._levels[0][pid]
        part.remove_row(part.find_row(int(external_id)))
        return True

    # ------------------------------------------------------------------
    # membership rewrites (refinement support)
    # ------------------------------------------------------------------

    def replace_members(self, level: int, pid: int, ids: np.ndarray,
                        vectors: np.ndarray) -> None:
        """Overwrite a partition's member rows, keeping the map (level 0)
        or child parent pointers (level > 0) consistent."""
        part = self.get_partition(level, pid)
        part.replace(ids, vectors)
        if level == 0:
            for external_id in part.ids:
                self._map[int(external_id)] = pid
        else:
            for child_pid in part.ids:
                self._levels[level - 1][int(child_pid)].parent_pid = pid

    # ------------------------------------------------------------------
    # split / merge with exact rollback
    # ------------------------------------------------------------------

    def apply_split(self, level: int, pid: int,
                    split: clustering.SplitResult) -> tuple[int, int, _UndoBlob]:
        """Replace one partition with two children; returns an undo blob
        restoring the exact prior state."""
        part = self.get_partition(level, pid)
        parent = self.parent_of(level, pid)
        blob = _UndoBlob(
            level=level,
            removed=part,
            removed_ids=part.ids.copy(),
            removed_vectors=part.vectors.copy(),
            parent_pid=parent.pid,
            parent_ids=parent.ids.copy(),
            parent_vectors=parent.vectors.copy(),
            next_pid=self._next_pid,
        )
        ids, vecs = part.ids, part.vectors
        halves = []
        for rows, centroid in ((split.left_rows, split.left_centroid),
                               (split.right_rows, split.right_centroid)):
            child = Partition(self._new_pid(), level, self.d, parent.pid)
            child.append(ids[rows], vecs[rows])
            halves.append((child, centroid))
        del self._levels[level][pid]
        parent.remove_row(parent.find_row(pid))
        for child, centroid in halves:
            self._levels[level][child.pid] = child
            parent.append(child.pid, np.asarray(centroid, dtype=np.float32)[None, :])
            blob.created_pids.append(child.pid)
            if level == 0:
                for external_id in child.ids:
                    self._map[int(external_id)] = child.pid
            else:
                for cpid in child.ids:
                    self._levels[level - 1][int(cpid)].parent_pid = child.pid
        return halves[0][0].pid, halves[1][0].pid, blob

    def apply_merge(self, level: int, pid: int) -> tuple[dict[int, int], _UndoBlob]:
        """Remove one partition, reassigning each member to the nearest
        remaining partition at that level. Returns {receiver pid: rows
        received} and an undo blob."""
        if self.n_partitions(level) <= 1:
            raise ValueError("cannot merge the last partition of a level")
        part = self.get_partition(level, pid)
        parent = self.parent_of(level, pid)
        blob = _UndoBlob(
            level=level,
            removed=part,
            removed_ids=part.ids.copy(),
            removed_vectors=part.vectors.copy(),
            parent_pid=parent.pid,
            parent_ids=parent.ids.copy(),
            parent_vectors=parent.vectors.copy(),
            next_pid=self._next_pid,
        )
        rest_pids, rest_centroids = self.level_centroid_arrays(level)
        keep = rest_pids != pid
        rest_pids, rest_centroids = rest_pids[keep], rest_centroids[keep]
        ids, vecs = part.ids.copy(), part.vectors.copy()
        received: dict[int, int] = {}
        if ids.size:
            assign, _ = clustering.assign_nearest(vecs, rest_centroids)
            targets = rest_pids[assign]
            for rpid in np.unique(targets):
                rows = np.flatnonzero(targets == rpid)
                receiver = self._levels[level][int(rpid)]
                blob.touched.append((int(rpid), receiver.ids.copy(),
                                     receiver.vectors.copy()))
                receiver.append(ids[rows], vecs[rows])
                received[int(rpid)] = int(rows.size)
                if level == 0:
                    for external_id in ids[rows]:
                        self._map[int(external_id)] = int(rpid)
                else:
                    for cpid in ids[rows]:
                        self._levels[level - 1][int(cpid)].parent_pid = int(rpid)
        del self._levels[level][pid]
        parent.remove_row(parent.find_row(pid))
        return received, blob

    def rollback(self, blob: _UndoBlob) -> None:
        """Restore the exact pre-action state captured in the blob."""
        level = blob.level
        for created in blob.created_pids:
            self._levels[level].pop(created, None)
        for rpid, ids, vecs in blob.touched:
            self._levels[level][rpid].replace(ids, vecs)
        removed = blob.removed
        assert removed is not None
        removed.replace(blob.removed_ids, blob.removed_vectors)
        self._levels[level][removed.pid] = removed
        parent = self._levels[level + 1][blob.parent_pid]
        parent.replace(blob.parent_ids, blob.parent_vectors)
        if level == 0:
            for external_id in blob.removed_ids:
                self._map[int(external_id)] = removed.pid
        else:
            for cpid in blob.removed_ids:
                self._levels[level - 1][int(cpid)].parent_pid = removed.pid
        for rpid, ids, _ in blob.touched:
            if level == 0:
                for external_id in ids:
                    self._map[int(external_id)] = rpid
            else:
                for cpid in ids:
                    self._levels[level - 1][int(cpid)].parent_pid = rpid
        self._next_pid = blob.next_pid

    # ------------------------------------------------------------------
    # level management
    # ------------------------------------------------------------------

    def add_level(self, n_new_partitions: int, seed: int = 0,
                  n_iters: int = 10) -> None:
        """Partition the current top-level centroids, adding a hierarchy level."""
        old_top = self.top
        if n_new_partitions < 1 or n_new_partitions >= old_top.size:
            raise ValueError(
                f"cannot group {old_top.size} centroids into {n_new_partitions} partitions"
            )
        level = old_top.level
        result = clustering.kmeans(
            old_top.vectors,
            clustering.KMeansConfig(n_clusters=n_new_partitions, n_iters=n_iters,
                                    seed=seed, metric=self.metric),
        )
        child_ids, child_vecs = old_top.ids.copy(), old_top.vectors.copy()
        new_parts: dict[int, Partition] = {}
        pids = np.empty(result.n_clusters, dtype=np.int64)
        for c in range(result.n_clusters):
            part = Partition(self._new_pid(), level, self.d)
            rows = np.flatnonzero(result.assignments == c)
            part.append(child_ids[rows], child_vecs[rows])
            new_parts[part.pid] = part
            pids[c] = part.pid
        top = Partition(self._new_pid(), level + 1, self.d)
        top.append(pids, result.centroids.astype(np.float32))
        self._levels[level] = new_parts
        self._levels.append({top.pid: top})
        for part in new_parts.values():
            part.parent_pid = top.pid
            for cpid in part.ids:
                self._levels[level - 1][int(cpid)].parent_pid = part.pid

    def remove_level(self) -> None:
        """Collapse the level under the top partition back into a single
        partition of centroids."""
        if self.n_levels < 3:
            raise ValueError("index has no removable level")
        old_top = self.top
        level = old_top.level - 1
        ids = []
        vecs = []
        for pid in self.partition_ids(level):
            part = self._levels[level][pid]
            ids.append(part.ids.copy())
            vecs.append(part.vectors.copy())
        top = Partition(self._new_pid(), level, self.d)
        top.append(np.concatenate(ids), np.vstack(vecs))
        self._levels.pop()
        self._levels[level] = {top.pid: top}
        for cpid in top.ids:
            self._levels[level - 1][int(cpid)].parent_pid = top.pid

    # ------------------------------------------------------------------
    # integrity
    # ------------------------------------------------------------------

    def check_consistency(self) -> None:
        """Raise AssertionError on any structural invariant violation."""
        assert self.n_levels >= 2, "index must have a data level and a top"
        assert len(self._levels[-1]) == 1, "top level must hold one partition"
        for level in range(self.n_levels):
            for pid, part in self._levels[level].items():
                assert part.pid == pid and part.level == level
                assert part.ids.shape[0] == part.size
                assert part.vectors.shape == (part.size, self.d)
        for level in range(self.n_levels - 1):
            rows = sum(p.size for p in self._levels[level + 1].values())
            assert rows == self.n_partitions(level), (
                f"level {level + 1} holds {rows} centroid rows for "
                f"{self.n_partitions(level)} partitions"
            )
            seen: set[int] = set()
            for parent in self._levels[level + 1].values():
                for cpid in parent.ids:
                    cpid = int(cpid)
                    assert cpid not in seen, f"duplicate centroid row for {cpid}"
                    seen.add(cpid)
                    child = self._levels[level][cpid]
                    assert child.parent_pid == parent.pid
            assert seen == set(self._levels[level])
        level0_ids: set[int] = set()
        for part in self._levels[0].values():
            for external_id in part.ids:
                external_id = int(external_id)
                assert external_id not in level0_ids, f"duplicate vector id {external_id}"
                level0_ids.add(external_id)
                assert self._map.get(external_id) == part.pid, (
                    f"map points id {external_id} at {self._map.get(external_id)}, "
                    f"stored in {part.pid}"
                )
        assert level0_ids == set(self._map), "map covers a different id set"

    # ------------------------------------------------------------------
    # persistence
    # ------------------------------------------------------------------

    def save(self, path) -> None:
        """Write the versioned binary snapshot (stats excluded)."""
        with open(path, "wb") as fh:
            fh.write(_SNAPSHOT_MAGIC)
            fh.write(struct.pack("<IBIId", _SNAPSHOT_VERSION,
                                 0 if self.metric is Metric.L2 else 1,
                                 self.d, self.n_levels, self.max_norm))
            fh.write(struct.pack("<Q", self._next_pid))
            for level in range(self.n_levels):
                fh.write(struct.pack("<I", self.n_partitions(level)))
                for pid in self.partition_ids(level):
                    part = self._levels[level][pid]
                    parent = -1 if part.parent_pid is None else part.parent_pid
                    fh.write(struct.pack("<QqQ", part.pid, parent, part.size))
                    fh.write(part.ids.astype("<i8").tobytes())
                    fh.write(np.ascontiguousarray(part.vectors, dtype="<f4").tobytes())

    @staticmethod
    def load(path) -> "MultiLevelIndex":
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != _SNAPSHOT_MAGIC:
                raise ValueError(f"not an index snapshot (magic {magic!r})")
            version, metric_code, d, n_levels, max_norm = struct.unpack(
                "<IBIId", fh.read(struct.calcsize("<IBIId"))
            )
            if version != _SNAPSHOT_VERSION:
                raise ValueError(f"unsupported snapshot version {version}")
            index = MultiLevelIndex(
                d=d, metric=Metric.L2 if metric_code == 0 else Metric.INNER_PRODUCT
            )
            index.max_norm = max_norm
            (index._next_pid,) = struct.unpack("<Q", fh.read(8))
            for level in range(n_levels):
                (count,) = struct.unpack("<I", fh.read(4))
                parts: dict[int, Partition] = {}
                for _ in range(count):
                    pid, parent, size = struct.unpack("<QqQ", fh.read(24))
                    part = Partition(pid, level, d,
                                     None if parent < 0 else parent)
                    ids = np.frombuffer(fh.read(8 * size), dtype="<i8")
                    vecs = np.frombuffer(fh.read(4 * size * d),
                                         dtype="<f4").reshape(size, d)
                    if size:
                        part.append(ids, vecs)
                    parts[pid] = part
                index._levels.append(parts)
        index._map = {
            int(i): part.pid
            for part in index._levels[0].values()
            for i in part.ids
        }
        return index
