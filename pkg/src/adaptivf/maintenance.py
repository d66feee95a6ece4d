"""Latency cost model and cost-driven index restructuring.

The model prices each partition at (access frequency x profiled scan
latency); total cost is the sum over every level. Candidate actions are
scored by their predicted cost change, tentatively applied, re-scored
with the measured outcome, and rolled back unless the verified change
clears the threshold. Centroid-overhead terms are priced against the
parent partition that physically holds the centroid row, scaled by that
parent's own access frequency (the top partition is scanned by every
query, so its recorded frequency is 1 and the plain profile difference
is recovered for single-level indexes).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import isotonic_regression

from . import clustering
from .index import MultiLevelIndex, PartitionStats
from .kernels import Metric, TopKBuffer, distance_batch

Splitter = Callable[[np.ndarray, int, Metric], "clustering.SplitResult | None"]


class LatencyProfile:
    """Measured scan latency as a monotone piecewise-linear function of
    partition size, with linear extrapolation beyond the grid and a floor
    at zero."""

    def __init__(self, sizes: Sequence[float], latencies: Sequence[float]) -> None:
        sizes = np.asarray(sizes, dtype=np.float64)
        latencies = np.asarray(latencies, dtype=np.float64)
        if sizes.ndim != 1 or sizes.shape != latencies.shape or sizes.size == 0:
            raise ValueError("sizes and latencies must be equal-length 1-D arrays")
        if np.any(np.diff(sizes) <= 0):
            raise ValueError("size grid must be strictly ascending")
        if np.any(np.diff(latencies) < 0):
            latencies = isotonic_regression(latencies).x
        self.sizes = sizes
        self.latencies = latencies

    def __call__(self, s) -> float | np.ndarray:
        s = np.asarray(s, dtype=np.float64)
        x, y = self.sizes, self.latencies
        if x.size == 1:
            out = np.full_like(s, y[0])
        else:
            out = np.interp(s, x, y)
            lo_slope = (y[1] - y[0]) / (x[1] - x[0])
            hi_slope = (y[-1] - y[-2]) / (x[-1] - x[-2])
            out = np.where(s < x[0], y[0] - (x[0] - s) * lo_slope, out)
            out = np.where(s > x[-1], y[-1] + (s - x[-1]) * hi_slope, out)
        out = np.maximum(out, 0.0)
        return float(out) if out.ndim == 0 else out

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({"sizes": self.sizes.tolist(),
                       "latencies_s": self.latencies.tolist()}, fh, indent=1)

    @staticmethod
    def load(path) -> "LatencyProfile":
        with open(path) as fh:
            data = json.load(fh)
        return LatencyProfile(data["sizes"], data["latencies_s"])


def profile_scan_latency(d: int, metric: Metric, size_grid: Sequence[int],
                         repetitions: int = 9, k: int = 10,
                         seed: int = 0) -> LatencyProfile:
    """Time k-NN partition scans at each grid size, median of repetitions."""
    sizes = list(size_grid)
    if sizes != sorted(sizes):
        raise ValueError("size grid must be sorted ascending")
    rng = np.random.default_rng(seed)
    block = rng.normal(size=(max(sizes), d)).astype(np.float32)
    ids = np.arange(max(sizes), dtype=np.int64)
    medians = []
    for s in sizes:
        samples = []
        for rep in range(repetitions + 1):
            q = rng.normal(size=d).astype(np.float32)
            start = time.perf_counter()
            scores = distance_batch(q, block[:s], metric)
            buf = TopKBuffer(k=min(k, max(s, 1)), metric=metric)
            buf.update(ids[:s], scores)
            elapsed = time.perf_counter() - start
            if rep > 0:  # first pass warms the cache
                samples.append(elapsed)
        medians.append(float(np.median(samples)))
    return LatencyProfile(sizes, medians)


def total_cost(index: MultiLevelIndex, stats: PartitionStats,
               profile: LatencyProfile) -> float:
    """Modeled mean query latency: sum of A * lambda(s) over all levels."""
    cost = 0.0
    for level in range(index.n_levels):
        pids = index.partition_ids(level)
        freqs = np.array([stats.access_frequency(level, p) for p in pids])
        sizes = np.array([index.get_partition(level, p).size for p in pids])
        cost += float(freqs @ profile(sizes))
    return cost


# ---------------------------------------------------------------------------
# cost deltas
# ---------------------------------------------------------------------------

def estimate_split_delta(freq: float, size: int, profile: LatencyProfile,
                         alpha: float, delta_overhead: float) -> float:
    """Predicted cost change of a split under the balanced-split and
    proportional-access assumptions: each child holds s/2 rows and
    inherits fraction alpha of the parent's traffic."""
    return delta_overhead - freq * profile(size) + 2.0 * alpha * freq * profile(size / 2.0)


def verify_split_delta(freq: float, size: int, left_size: int, right_size: int,
                       profile: LatencyProfile, alpha: float,
                       delta_overhead: float) -> float:
    """Cost change recomputed with the measured child sizes; the Stage-1
    frequency assumption (alpha * parent) is retained."""
    if left_size + right_size != size:
        raise ValueError("child sizes must sum to the parent size")
    if left_size == 0 or right_size == 0:
        raise ValueError("children must be nonempty")
    return (delta_overhead - freq * profile(size)
            + alpha * freq * (profile(left_size) + profile(right_size)))


def estimate_merge_delta(freq: float, size: int,
                         receivers: Sequence[tuple[int, float]],
                         profile: LatencyProfile,
                         delta_overhead: float) -> float:
    """Predicted cost change of deleting a partition, assuming its rows
    and traffic redistribute uniformly over the receiver set."""
    if not receivers:
        return delta_overhead - freq * profile(size)
    share_s = size / len(receivers)
    share_a = freq / len(receivers)
    delta = delta_overhead - freq * profile(size)
    for r_size, r_freq in receivers:
        delta += (r_freq + share_a) * profile(r_size + share_s) - r_freq * profile(r_size)
    return delta


def verify_merge_delta(freq: float, size: int,
                       receivers: Sequence[tuple[int, float, int]],
                       profile: LatencyProfile,
                       delta_overhead: float) -> float:
    """Cost change with the measured receiver growth. Each receiver is
    (size before, frequency before, rows received); frequency attribution
    is proportional to the share of rows received."""
    delta = delta_overhead - freq * profile(size)
    for r_size, r_freq, gained in receivers:
        d_freq = freq * (gained / size) if size > 0 else 0.0
        delta += (r_freq + d_freq) * profile(r_size + gained) - r_freq * profile(r_size)
    return delta


# ---------------------------------------------------------------------------
# the estimate / verify / commit workflow
# ---------------------------------------------------------------------------

@dataclass
class MaintenanceConfig:
    """Thresholds and knobs; defaults follow the stable settings (250 ns
    commit threshold, 0.9 access scaling, one refinement iteration over
    the 50 nearest partitions)."""

    tau: float = 250e-9
    alpha: float = 0.9
    refine_radius: int = 50
    refine_iters: int = 1
    enable_refinement: bool = True
    enable_rejection: bool = True
    min_size_fraction: float = 0.10
    split_iters: int = 10
    add_level_threshold: int = 8192
    remove_level_threshold: int = 128
    baseline_max_size: int | None = None
    baseline_min_size: int | None = None
    window: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.tau < 0:
            raise ValueError("tau must be non-negative")
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError("alpha must be in (0, 1]")
        if self.refine_radius <= 0:
            raise ValueError("refine_radius must be positive")


@dataclass
class ActionRecord:
    """One proposed action and its outcome, exportable as a JSON line."""

    kind: str
    level: int
    pid: int
    estimated_delta: float
    verified_delta: float | None
    decision: str
    size_before: int
    sizes_after: tuple[int, ...] = ()
    cost_before: float = 0.0
    cost_after: float = 0.0

    @property
    def committed(self) -> bool:
        return self.decision == "commit"

    def to_json(self) -> str:
        return json.dumps({
            "kind": self.kind, "level": self.level, "pid": self.pid,
            "estimated_delta": self.estimated_delta,
            "verified_delta": self.verified_delta,
            "decision": self.decision, "size_before": self.size_before,
            "sizes_after": list(self.sizes_after),
            "cost_before": self.cost_before, "cost_after": self.cost_after,
        })


def export_actions(records: Sequence[ActionRecord], path) -> None:
    with open(path, "a") as fh:
        for record in records:
            fh.write(record.to_json() + "\n")


def _overhead_delta(index: MultiLevelIndex, stats: PartitionStats,
                    profile: LatencyProfile, level: int, pid: int,
                    extra_rows: int) -> float:
    """Cost change at the parent from adding/removing centroid rows."""
    parent = index.parent_of(level, pid)
    freq = stats.access_frequency(parent.level, parent.pid)
    return freq * (profile(parent.size + extra_rows) - profile(parent.size))


def _nearest_partitions(index: MultiLevelIndex, level: int, pid: int,
                        count: int) -> list[int]:
    pids, cents = index.level_centroid_arrays(level)
    own = index.centroid_of(level, pid)
    diff = cents - own[None, :]
    d2 = np.einsum("ij,ij->i", diff, diff)
    order = np.argsort(d2, kind="stable")
    out = [int(pids[i]) for i in order if int(pids[i]) != pid]
    return out[:count]


def _default_splitter(config: MaintenanceConfig) -> Splitter:
    def split(vectors: np.ndarray, seed: int, metric: Metric):
        return clustering.split_partition(vectors, seed, metric,
                                          n_iters=config.split_iters)
    return split


def maintenance_pass(index: MultiLevelIndex, stats: PartitionStats,
                     profile: LatencyProfile, config: MaintenanceConfig,
                     splitter: Splitter | None = None) -> list[ActionRecord]:
    """One bottom-up estimate/verify/commit sweep over the hierarchy.

    Stage-1 estimates are computed per level from the state at level
    entry; qualifying actions are applied one at a time, re-scored with
    measured sizes (entry frequencies retained), and rolled back unless
    the verified delta clears -tau. Committed splits seed a refinement
    pass over their neighborhood. Children of a committed split inherit
    alpha times the parent frequency; merge receivers absorb frequency
    proportional to the rows they received.
    """
    split_fn = splitter or _default_splitter(config)
    records: list[ActionRecord] = []

    for level in range(index.n_levels - 1):
        entry_pids = index.partition_ids(level)
        sizes = {pid: index.get_partition(level, pid).size for pid in entry_pids}
        freqs = {pid: stats.access_frequency(level, pid) for pid in entry_pids}

        costs = np.array([freqs[p] * profile(sizes[p]) for p in entry_pids])
        median_cost = float(np.median(costs)) if entry_pids else 0.0
        mean_size = float(np.mean([sizes[p] for p in entry_pids])) if entry_pids else 0.0
        min_size = config.min_size_fraction * mean_size

        proposals: list[tuple[float, int, str]] = []
        for pid in entry_pids:
            size, freq = sizes[pid], freqs[pid]
            overhead_up = _overhead_delta(index, stats, profile, level, pid, +1)
            if size >= 2:
                est = estimate_split_delta(freq, size, profile, config.alpha,
                                           overhead_up)
                if est < -config.tau:
                    proposals.append((est, pid, "split"))
                    continue
            if (size < min_size and freq * profile(size) <= median_cost
                    and index.n_partitions(level) > 1):
                receivers = _nearest_partitions(index, level, pid,
                                                config.refine_radius)
                pairs = [(sizes[r], freqs[r]) for r in receivers]
                overhead_down = _overhead_delta(index, stats, profile, level,
                                                pid, -1)
                est = estimate_merge_delta(freq, size, pairs, profile,
                                           overhead_down)
                if est < -config.tau:
                    proposals.append((est, pid, "merge"))

        proposals.sort(key=lambda item: (item[0], item[1]))
        for est, pid, kind in proposals:
            if pid not in index._levels[level]:
                continue  # consumed by an earlier action
            part = index.get_partition(level, pid)
            # frequency as currently attributed by the model: an earlier
            # commit in this pass may have bumped it
            size, freq = part.size, stats.access_frequency(level, pid)
            cost_before = total_cost(index, stats, profile)

            if kind == "split":
                if part.size < 2:
                    continue
                split = split_fn(part.vectors.copy(), config.seed + pid,
                                 index.metric)
                if split is None:
                    records.append(ActionRecord(
                        kind="split", level=level, pid=pid,
                        estimated_delta=est, verified_delta=None,
                        decision="reject", size_before=size,
                        cost_before=cost_before, cost_after=cost_before))
                    continue
                overhead_up = _overhead_delta(index, stats, profile, level,
                                              pid, +1)
                lpid, rpid, blob = index.apply_split(level, pid, split)
                left = index.get_partition(level, lpid).size
                right = index.get_partition(level, rpid).size
                verified = verify_split_delta(freq, size, left, right, profile,
                                              config.alpha, overhead_up)
                if verified < -config.tau or not config.enable_rejection:
                    stats.drop(level, pid)
                    stats.set_frequency(level, lpid, config.alpha * freq)
                    stats.set_frequency(level, rpid, config.alpha * freq)
                    cost_after = total_cost(index, stats, profile)
                    records.append(ActionRecord(
                        kind="split", level=level, pid=pid,
                        estimated_delta=est, verified_delta=verified,
                        decision="commit", size_before=size,
                        sizes_after=(left, right),
                        cost_before=cost_before, cost_after=cost_after))
                    if config.enable_refinement:
                        clustering.refine_partitions(
                            index, level, [lpid, rpid],
                            r_f=config.refine_radius,
                            n_iters=config.refine_iters)
                else:
                    index.rollback(blob)
                    records.append(ActionRecord(
                        kind="split", level=level, pid=pid,
                        estimated_delta=est, verified_delta=verified,
                        decision="reject", size_before=size,
                        sizes_after=(left, right),
                        cost_before=cost_before, cost_after=cost_before))
            else:
                if index.n_partitions(level) <= 1:
                    continue
                overhead_down = _overhead_delta(index, stats, profile, level,
                                                pid, -1)
                pre_sizes = {r: index.get_partition(level, r).size
                             for r in index.partition_ids(level) if r != pid}
                received, blob = index.apply_merge(level, pid)
                measured = [(pre_sizes[r], stats.access_frequency(level, r),
                             gained) for r, gained in received.items()]
                verified = verify_merge_delta(freq, size, measured, profile,
                                              overhead_down)
                if verified < -config.tau or not config.enable_rejection:
                    stats.drop(level, pid)
                    for r_pid, gained in received.items():
                        bump = freq * (gained / size) if size > 0 else 0.0
                        stats.set_frequency(
                            level, r_pid,
                            stats.access_frequency(level, r_pid) + bump)
                    cost_after = total_cost(index, stats, profile)
                    records.append(ActionRecord(
                        kind="merge", level=level, pid=pid,
                        estimated_delta=est, verified_delta=verified,
                        decision="commit", size_before=size,
                        sizes_after=tuple(sorted(received.values())),
                        cost_before=cost_before, cost_after=cost_after))
                else:
                    index.rollback(blob)
                    records.append(ActionRecord(
                        kind="merge", level=level, pid=pid,
                        estimated_delta=est, verified_delta=verified,
                        decision="reject", size_before=size,
                        cost_before=cost_before, cost_after=cost_before))

    records.extend(_manage_levels(index, stats, config))
    return records


def _manage_levels(index: MultiLevelIndex, stats: PartitionStats,
                   config: MaintenanceConfig) -> list[ActionRecord]:
    """Threshold-triggered hierarchy growth/shrink (no cost scoring)."""
    records: list[ActionRecord] = []
    top = index.top
    if top.size > config.add_level_threshold:
        groups = max(2, int(round(np.sqrt(top.size))))
        size_before = top.size
        index.add_level(groups, seed=config.seed)
        stats.set_frequency(index.n_levels - 1, index.top.pid, 1.0)
        records.append(ActionRecord(
            kind="add-level", level=index.n_levels - 1, pid=index.top.pid,
            estimated_delta=float("nan"), verified_delta=None,
            decision="commit", size_before=size_before,
            sizes_after=(groups,)))
    elif index.n_levels >= 3 and top.size < config.remove_level_threshold:
        size_before = top.size
        index.remove_level()
        stats.set_frequency(index.n_levels - 1, index.top.pid, 1.0)
        records.append(ActionRecord(
            kind="remove-level", level=index.n_levels - 1, pid=index.top.pid,
            estimated_delta=float("nan"), verified_delta=None,
            decision="commit", size_before=size_before,
            sizes_after=(index.top.size,)))
    return records


def size_threshold_baseline_pass(index: MultiLevelIndex,
                                 config: MaintenanceConfig,
                                 stats: PartitionStats | None = None,
                                 splitter: Splitter | None = None) -> list[ActionRecord]:
    """Plain size-threshold maintenance: split everything above the max
    threshold, merge everything below the min threshold, no cost model
    and no rejection. Ablation baseline only."""
    split_fn = splitter or _default_splitter(config)
    records: list[ActionRecord] = []
    for level in range(index.n_levels - 1):
        entry_pids = index.partition_ids(level)
        mean_size = float(np.mean([index.get_partition(level, p).size
                                   for p in entry_pids]))
        max_size = config.baseline_max_size or max(2.0 * mean_size, 2.0)
        min_size = (config.baseline_min_size
                    if config.baseline_min_size is not None
                    else config.min_size_fraction * mean_size)
        for pid in entry_pids:
            if pid not in index._levels[level]:
                continue
            part = index.get_partition(level, pid)
            if part.size > max_size and part.size >= 2:
                split = split_fn(part.vectors.copy(), config.seed + pid,
                                 index.metric)
                if split is None:
                    continue
                lpid, rpid, _ = index.apply_split(level, pid, split)
                if stats is not None:
                    freq = stats.access_frequency(level, pid)
                    stats.drop(level, pid)
                    stats.set_frequency(level, lpid, config.alpha * freq)
                    stats.set_frequency(level, rpid, config.alpha * freq)
                records.append(ActionRecord(
                    kind="split", level=level, pid=pid,
                    estimated_delta=float("nan"), verified_delta=None,
                    decision="commit", size_before=part.size,
                    sizes_after=(index.get_partition(level, lpid).size,
                                 index.get_partition(level, rpid).size)))
                if config.enable_refinement:
                    clustering.refine_partitions(index, level, [lpid, rpid],
                                                 r_f=config.refine_radius,
                                                 n_iters=config.refine_iters)
            elif part.size < min_size and index.n_partitions(level) > 1:
                size_before = part.size
                received, _ = index.apply_merge(level, pid)
                if stats is not None:
                    stats.drop(level, pid)
                records.append(ActionRecord(
                    kind="merge", level=level, pid=pid,
                    estimated_delta=float("nan"), verified_delta=None,
                    decision="commit", size_before=size_before,
                    sizes_after=tuple(sorted(received.values()))))
    return records
