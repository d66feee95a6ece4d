"""Adaptive partition scanning: geometric recall estimation per query.

The estimator treats the sphere around the query through its current k-th
neighbor as the region that must be covered. Each unscanned candidate
partition is approximated by the half-space beyond the perpendicular
bisector of (nearest centroid, candidate centroid); the sphere/half-space
intersection is a hyperspherical cap whose volume fraction comes from the
regularized incomplete beta function. Scanning stops once the accumulated
probability mass of scanned partitions reaches the recall target.

Inner-product search reduces to this Euclidean machinery through the
standard norm-augmentation trick: distances are computed as if every
vector carried an extra coordinate sqrt(phi^2 - |x|^2) with phi the
maximum data norm, which turns descending inner product into ascending
Euclidean distance. Applying the augmentation to centroids is an
approximation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betainc

from .index import MultiLevelIndex, PartitionStats
from .kernels import KnnResult, Metric, TopKBuffer, distance_batch

_TABLE_POINTS = 1024


@dataclass
class ApsConfig:
    """Search-time knobs. Defaults follow the stable settings: candidate
    fraction in the 1-10% range, 1% radius recompute threshold, and a
    fixed 99% target for levels above the data level."""

    k: int = 10
    recall_target: float = 0.9
    f_m: float = 0.1
    tau_rho: float = 0.01
    upper_recall_target: float = 0.99
    upper_f_m: float = 0.25
    fixed_nprobe: int | None = None

    def __post_init__(self) -> None:
        if not (0.0 < self.recall_target <= 1.0):
            raise ValueError("recall_target must be in (0, 1]")
        if not (0.0 < self.f_m <= 1.0):
            raise ValueError("f_m must be in (0, 1]")
        if self.tau_rho < 0.0:
            raise ValueError("tau_rho must be non-negative")
        if self.k <= 0:
            raise ValueError("k must be positive")

    def fraction_for(self, level: int) -> float:
        return self.f_m if level == 0 else self.upper_f_m


class BetaTable:
    """Sampled I_x((d+1)/2, 1/2) with linear interpolation.

    The 1024 nodes span x in [0, 1] but are placed evenly in
    u = sqrt(1 - x): I_x has a sqrt singularity at x = 1, and uniform-x
    nodes cannot reach the required 1e-3 interpolation accuracy there.
    """

    def __init__(self, d: int, n_points: int = _TABLE_POINTS) -> None:
        if d < 1:
            raise ValueError("dimension must be positive")
        self.d = d
        self.a = (d + 1) / 2.0
        self._u = np.linspace(0.0, 1.0, n_points)
        x = 1.0 - self._u**2
        self.x = x
        self.values = betainc(self.a, 0.5, x)

    def lookup(self, x) -> np.ndarray:
        u = np.sqrt(np.clip(1.0 - np.asarray(x, dtype=np.float64), 0.0, 1.0))
        return np.interp(u, self._u, self.values)


_table_cache: dict[int, BetaTable] = {}


def beta_table_for(d: int) -> BetaTable:
    table = _table_cache.get(d)
    if table is None:
        table = _table_cache[d] = BetaTable(d)
    return table


def cap_volume_fraction(t, rho: float, d: int, table: BetaTable | None = None):
    """Volume fraction of a d-ball of radius rho cut off by a hyperplane
    at distance t >= 0 from its center; in [0, 0.5]."""
    if rho <= 0.0:
        raise ValueError("rho must be positive")
    if table is None:
        table = beta_table_for(d)
    elif table.d != d:
        raise ValueError(f"table built for d={table.d}, not {d}")
    t = np.clip(np.asarray(t, dtype=np.float64), 0.0, None)
    ratio = t / rho
    out = np.where(ratio < 1.0, 0.5 * table.lookup(1.0 - ratio**2), 0.0)
    return out if out.ndim else float(out)


def _probabilities(d2q: np.ndarray, c0_dist: np.ndarray, rho: float,
                   table: BetaTable) -> np.ndarray:
    """Candidate-containment probabilities given adapted geometry.

    d2q[i] is the squared distance from the query to candidate centroid i
    (index 0 is the nearest); c0_dist[i] the distance between centroid i
    and centroid 0. Raw cap fractions are normalized to sum to one, the
    nearest partition gets the complement product, and the remainder is
    shared proportionally. The result always sums to 1.
    """
    m = d2q.shape[0]
    p = np.zeros(m)
    if m == 1 or rho <= 0.0:
        p[0] = 1.0
        return p
    denom = c0_dist[1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(denom > 0.0, (d2q[1:] - d2q[0]) / (2.0 * denom), 0.0)
    np.clip(t, 0.0, None, out=t)
    ratio = t / rho
    v_raw = np.where(ratio < 1.0, 0.5 * table.lookup(1.0 - ratio**2), 0.0)
    # duplicate centroids sit on the query's side of no bisector: t = 0
    v_raw = np.where(denom > 0.0, v_raw, 0.5)
    total = v_raw.sum()
    if total <= 0.0:
        p[0] = 1.0
        return p
    v = v_raw / total
    p0 = float(np.prod(1.0 - v))
    p[0] = p0
    p[1:] = (1.0 - p0) * v
    return p


def partition_probabilities(query: np.ndarray, rho: float,
                            nearest_centroid: np.ndarray,
                            other_centroids: np.ndarray, d: int,
                            table: BetaTable | None = None) -> np.ndarray:
    """Euclidean-geometry probabilities for an explicit candidate layout."""
    if table is None:
        table = beta_table_for(d)
    query = np.asarray(query, dtype=np.float64)
    nearest = np.asarray(nearest_centroid, dtype=np.float64)[None, :]
    others = np.asarray(other_centroids, dtype=np.float64)
    if others.size:
        cents = np.vstack([nearest, np.atleast_2d(others)])
    else:
        cents = nearest
    diff = cents - query[None, :]
    d2q = np.einsum("ij,ij->i", diff, diff)
    rel = cents - cents[0][None, :]
    c0_dist = np.sqrt(np.einsum("ij,ij->i", rel, rel))
    return _probabilities(d2q, c0_dist, rho, table)


class _MetricSpace:
    """Adapted (augmentation-aware) distance helpers for one query."""

    def __init__(self, index: MultiLevelIndex, query: np.ndarray) -> None:
        self.metric = index.metric
        self.query = np.asarray(query, dtype=np.float32)
        if self.query.shape != (index.d,):
            raise ValueError(f"expected query dimension {index.d}")
        q64 = self.query.astype(np.float64)
        self.q_sq = float(q64 @ q64)
        self.phi_sq = float(index.max_norm) ** 2
        self.dim = index.d if self.metric is Metric.L2 else index.d + 1
        self.table = beta_table_for(self.dim)

    def centroid_d2(self, centroids: np.ndarray) -> np.ndarray:
        """Adapted squared distance from the query to each centroid."""
        c = centroids.astype(np.float64)
        if self.metric is Metric.L2:
            diff = c - self.query.astype(np.float64)[None, :]
            return np.einsum("ij,ij->i", diff, diff)
        dots = c @ self.query.astype(np.float64)
        return np.maximum(self.phi_sq + self.q_sq - 2.0 * dots, 0.0)

    def pair_dist_to_first(self, centroids: np.ndarray) -> np.ndarray:
        """Adapted distance from each centroid to centroid row 0."""
        c = centroids.astype(np.float64)
        rel = c - c[0][None, :]
        d2 = np.einsum("ij,ij->i", rel, rel)
        if self.metric is Metric.INNER_PRODUCT:
            norms_sq = np.einsum("ij,ij->i", c, c)
            extra = np.sqrt(np.maximum(self.phi_sq - norms_sq, 0.0))
            d2 = d2 + (extra - extra[0]) ** 2
        return np.sqrt(d2)

    def adapted_d2_from_score(self, score: float) -> float:
        return score if self.metric is Metric.L2 else max(
            self.phi_sq + self.q_sq - 2.0 * score, 0.0
        )


@dataclass
class ScanOutcome:
    """Result of one adaptive search plus its scan audit."""

    result: KnnResult
    nprobe: int
    scanned: dict[int, list[int]]
    recall_estimate: float
    recomputes: int = 0

    def scanned_at(self, level: int) -> list[int]:
        return self.scanned.get(level, [])


def _ceil_fraction(fraction: float, n: int) -> int:
    return max(1, min(n, int(math.ceil(fraction * n))))


def _scan_level(
    index: MultiLevelIndex,
    level: int,
    space: _MetricSpace,
    cand_pids: np.ndarray,
    cand_cents: np.ndarray,
    k: int,
    target: float,
    cfg: ApsConfig,
    fixed_nprobe: int | None = None,
    gather_rows: bool = False,
):
    """Algorithm core: scan candidates at one level until the recall
    estimate reaches the target or candidates run out.

    Returns (buffer, scan order, recall estimate, recomputes, gathered
    (ids, vectors) of all scanned rows when gather_rows is set).
    """
    data_level = level == 0
    d2q = space.centroid_d2(cand_cents)
    order = np.argsort(d2q, kind="stable")
    m = _ceil_fraction(cfg.fraction_for(level), index.n_partitions(level))
    if fixed_nprobe is not None:
        m = min(max(m, fixed_nprobe), cand_pids.shape[0])
    order = order[:m]
    pids = cand_pids[order]
    cents = cand_cents[order]
    d2q = d2q[order]
    c0_dist = space.pair_dist_to_first(cents)

    buf = TopKBuffer(k=k, metric=index.metric if data_level else Metric.L2)
    scanned = np.zeros(pids.shape[0], dtype=bool)
    scan_order: list[int] = []
    rows_ids: list[np.ndarray] = []
    rows_vecs: list[np.ndarray] = []

    def scan_one(slot: int) -> None:
        part = index.get_partition(level, int(pids[slot]))
        scanned[slot] = True
        scan_order.append(int(pids[slot]))
        if part.size == 0:
            return
        if data_level:
            scores = distance_batch(space.query, part.vectors, index.metric)
        else:
            scores = space.centroid_d2(part.vectors)
        buf.update(part.ids, scores)
        if gather_rows:
            rows_ids.append(part.ids.copy())
            rows_vecs.append(part.vectors.copy())

    def gathered():
        if not rows_ids:
            return np.empty(0, dtype=np.int64), np.empty((0, index.d), np.float32)
        return np.concatenate(rows_ids), np.vstack(rows_vecs)

    scan_one(0)
    cursor = 1
    while not buf.full and cursor < pids.shape[0]:
        scan_one(cursor)
        cursor += 1
    if not buf.full:
        # fewer than k rows reachable: everything was scanned
        return buf, scan_order, 1.0, 0, gathered()

    if fixed_nprobe is not None:
        while len(scan_order) < min(fixed_nprobe, pids.shape[0]):
            scan_one(len(scan_order))
        return buf, scan_order, float("nan"), 0, gathered()

    rho = math.sqrt(space.adapted_d2_from_score(buf.kth_score()))
    probs = _probabilities(d2q, c0_dist, rho, space.table)
    estimate = float(probs[scanned].sum())
    recomputes = 0
    while estimate < target and not scanned.all():
        open_slots = np.flatnonzero(~scanned)
        slot = int(open_slots[np.argmax(probs[open_slots])])
        scan_one(slot)
        estimate += float(probs[slot])
        rho_new = math.sqrt(space.adapted_d2_from_score(buf.kth_score()))
        if abs(rho_new - rho) > cfg.tau_rho * rho:
            rho = rho_new
            probs = _probabilities(d2q, c0_dist, rho, space.table)
            recomputes += 1
    return buf, scan_order, estimate, recomputes, gathered()


def _route_to_base(index: MultiLevelIndex, space: _MetricSpace, cfg: ApsConfig):
    """Walk the hierarchy top-down, selecting level-0 candidates.

    Every level above 0 runs the same adaptive scan against the fixed
    upper recall target; the k used at level l is the size of the
    candidate set wanted at level l-1. Returns (candidate pids, candidate
    centroids, scanned partitions per level).
    """
    top = index.top
    scanned: dict[int, list[int]] = {top.level: [top.pid]}
    cand_pids = top.ids.copy()
    cand_cents = top.vectors.copy()
    for level in range(top.level - 1, 0, -1):
        want = _ceil_fraction(cfg.fraction_for(level - 1),
                              index.n_partitions(level - 1))
        buf, order, _, _, (row_ids, row_vecs) = _scan_level(
            index, level, space, cand_pids, cand_cents,
            k=want, target=cfg.upper_recall_target, cfg=cfg, gather_rows=True,
        )
        scanned[level] = order
        picked = buf.to_result().ids
        lookup = {int(pid): i for i, pid in enumerate(row_ids)}
        rows = np.array([lookup[int(pid)] for pid in picked], dtype=np.int64)
        cand_pids = picked
        cand_cents = row_vecs[rows]
    return cand_pids, cand_cents, scanned


def aps_search(index: MultiLevelIndex, level: int, query: np.ndarray,
               cfg: ApsConfig) -> ScanOutcome:
    """Adaptive scan over every partition of one level (data level in the
    usual case). At levels above 0 the returned ids are child partition ids."""
    space = _MetricSpace(index, query)
    cand_pids, cand_cents = index.level_centroid_arrays(level)
    buf, order, estimate, recomputes, _ = _scan_level(
        index, level, space, cand_pids, cand_cents,
        k=cfg.k, target=cfg.recall_target, cfg=cfg,
        fixed_nprobe=cfg.fixed_nprobe,
    )
    return ScanOutcome(result=buf.to_result(), nprobe=len(order),
                       scanned={level: order}, recall_estimate=estimate,
                       recomputes=recomputes)


def multi_level_search(index: MultiLevelIndex, query: np.ndarray,
                       cfg: ApsConfig,
                       stats: PartitionStats | None = None) -> ScanOutcome:
    """Top-down adaptive search: upper levels route at the fixed upper
    target, the data level runs at the user's target. Records scanned
    partitions and the query into stats when provided."""
    space = _MetricSpace(index, query)
    cand_pids, cand_cents, scanned = _route_to_base(index, space, cfg)
    buf, order, estimate, recomputes, _ = _scan_level(
        index, 0, space, cand_pids, cand_cents,
        k=cfg.k, target=cfg.recall_target, cfg=cfg,
        fixed_nprobe=cfg.fixed_nprobe,
    )
    scanned[0] = order
    if stats is not None:
        stats.record_query(scanned)
    return ScanOutcome(result=buf.to_result(), nprobe=len(order),
                       scanned=scanned, recall_estimate=estimate,
                       recomputes=recomputes)
