"""Parallel partition scanning with worker-group placement and adaptive
termination, plus the single-threaded reference path.

A "node" here is a logical worker group; binding workers to physical CPUs
is best-effort and correctness never depends on it. Partitions map to
nodes round-robin by partition id and bind to a fixed worker within the
node, so a partition is always scanned by the same worker. Workers scan
their private queues in candidate-priority order and publish per-partition
partial results; the coordinator is the only merger and the only writer of
the stop signal. It refreshes the recall estimate on every merge, using
the same radius-recompute guard as the single-threaded path, and stops all
workers once the estimate clears the target. Results reflect exactly the
partitions actually scanned, so the parallel path can overshoot the
single-threaded scan count but never under-reports its estimate basis.
"""

from __future__ import annotations

import math
import os
import queue
import threading
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .aps import ApsConfig, ScanOutcome, _MetricSpace, _probabilities, _route_to_base, _ceil_fraction
from .index import MultiLevelIndex, PartitionStats
from .kernels import TopKBuffer, distance_batch


class QueryExecutionError(RuntimeError):
    """A worker failed; the query has no trustworthy result."""


@dataclass
class NodeTopology:
    n_nodes: int = 1
    workers_per_node: int = 1
    pin_threads: bool = False

    def __post_init__(self) -> None:
        if self.n_nodes < 1 or self.workers_per_node < 1:
            raise ValueError("topology needs at least one node and one worker")

    @property
    def total_workers(self) -> int:
        return self.n_nodes * self.workers_per_node

    def node_of(self, pid: int) -> int:
        return pid % self.n_nodes

    def worker_of(self, pid: int) -> tuple[int, int]:
        return pid % self.n_nodes, (pid // self.n_nodes) % self.workers_per_node


@dataclass
class QueryJob:
    """Planned work for one query: the candidate partitions in priority
    order plus everything the estimator needs."""

    space: _MetricSpace
    pids: np.ndarray
    cents: np.ndarray
    d2q: np.ndarray
    c0_dist: np.ndarray
    k: int
    recall_target: float
    tau_rho: float
    early_termination: bool
    cfg: ApsConfig
    scanned_upper: dict[int, list[int]] = field(default_factory=dict)
    queues: dict[tuple[int, int], list[int]] = field(default_factory=dict)

    @property
    def n_candidates(self) -> int:
        return int(self.pids.shape[0])


def plan_query(index: MultiLevelIndex, query: np.ndarray, cfg: ApsConfig,
               topology: NodeTopology,
               exhaustive: bool = False) -> QueryJob:
    """Route to the data level and build per-worker scan queues.

    The candidate set is the same one the single-threaded path would use:
    upper levels are searched at the fixed upper target, then the data
    level's candidate fraction (or fixed nprobe) trims the shortlist.
    """
    space = _MetricSpace(index, query)
    cand_pids, cand_cents, scanned_upper = _route_to_base(index, space, cfg)
    d2q = space.centroid_d2(cand_cents)
    order = np.argsort(d2q, kind="stable")
    m = _ceil_fraction(cfg.fraction_for(0), index.n_partitions(0))
    if cfg.fixed_nprobe is not None:
        m = min(max(m, cfg.fixed_nprobe), cand_pids.shape[0])
    order = order[:m]
    pids = cand_pids[order]
    cents = cand_cents[order]
    job = QueryJob(
        space=space, pids=pids, cents=cents, d2q=d2q[order],
        c0_dist=space.pair_dist_to_first(cents), k=cfg.k,
        recall_target=cfg.recall_target, tau_rho=cfg.tau_rho,
        early_termination=not exhaustive and cfg.fixed_nprobe is None,
        cfg=cfg, scanned_upper=scanned_upper,
    )
    for slot, pid in enumerate(pids):
        job.queues.setdefault(topology.worker_of(int(pid)), []).append(slot)
    return job


def execute_single(index: MultiLevelIndex, job: QueryJob,
                   stats: PartitionStats | None = None) -> ScanOutcome:
    """The reference path: the adaptive scan loop on one thread."""
    from .aps import _scan_level

    if job.early_termination:
        fixed = None
    else:
        fixed = job.cfg.fixed_nprobe or job.n_candidates
    buf, order, estimate, recomputes, _ = _scan_level(
        index, 0, job.space, job.pids, job.cents,
        k=job.k, target=job.recall_target, cfg=job.cfg, fixed_nprobe=fixed,
    )
    scanned = dict(job.scanned_upper)
    scanned[0] = order
    if stats is not None:
        stats.record_query(scanned)
    return ScanOutcome(result=buf.to_result(), nprobe=len(order),
                       scanned=scanned, recall_estimate=estimate,
                       recomputes=recomputes)


def _pin_current_thread(topology: NodeTopology, node: int, wid: int) -> None:
    if not topology.pin_threads or not hasattr(os, "sched_setaffinity"):
        return
    try:
        cpu = (node * topology.workers_per_node + wid) % (os.cpu_count() or 1)
        os.sched_setaffinity(0, {cpu})
    except OSError:
        pass  # affinity is best-effort only


def execute_parallel(index: MultiLevelIndex, job: QueryJob,
                     topology: NodeTopology,
                     stats: PartitionStats | None = None) -> ScanOutcome:
    """Scan the job's candidates with one worker thread per (node, worker)
    binding, merging partial results as they arrive."""
    n_slots = job.n_candidates
    claimed = np.zeros(n_slots, dtype=bool)
    claim_lock = threading.Lock()
    node_queues: dict[int, dict[int, deque[int]]] = {}
    for (node, wid), slots in job.queues.items():
        node_queues.setdefault(node, {})[wid] = deque(slots)

    results: queue.SimpleQueue = queue.SimpleQueue()
    stop = threading.Event()

    def claim_next(node: int, wid: int) -> int | None:
        with claim_lock:
            own = node_queues.get(node, {}).get(wid)
            if own:
                while own and claimed[own[0]]:
                    own.popleft()
                if own:
                    slot = own.popleft()
                    claimed[slot] = True
                    return slot
            # steal the lowest-priority unclaimed slot within this node
            best: int | None = None
            for sibling in node_queues.get(node, {}).values():
                while sibling and claimed[sibling[-1]]:
                    sibling.pop()
                if sibling and (best is None or sibling[-1] > best):
                    best = sibling[-1]
            if best is not None:
                claimed[best] = True
                return int(best)
        return None

    def worker(node: int, wid: int) -> None:
        _pin_current_thread(topology, node, wid)
        try:
            while not stop.is_set():
                slot = claim_next(node, wid)
                if slot is None:
                    break
                part = index.get_partition(0, int(job.pids[slot]))
                if part.size:
                    scores = distance_batch(job.space.query, part.vectors,
                                            index.metric)
                    results.put((slot, part.ids.copy(), scores))
                else:
                    results.put((slot, None, None))
        except BaseException as exc:  # surfaced by the coordinator
            results.put(("error", exc, None))
        finally:
            results.put(("done", node, wid))

    threads = [
        threading.Thread(target=worker, args=(node, wid), daemon=True)
        for node in range(topology.n_nodes)
        for wid in range(topology.workers_per_node)
    ]
    for t in threads:
        t.start()

    buf = TopKBuffer(k=job.k, metric=index.metric)
    merged = np.zeros(n_slots, dtype=bool)
    scan_order: list[int] = []
    probs: np.ndarray | None = None
    rho = 0.0
    estimate = 0.0
    recomputes = 0
    live_workers = len(threads)
    failure: BaseException | None = None

    def merge_item(item) -> bool:
        nonlocal live_workers, failure
        tag = item[0]
        if tag == "error":
            failure = item[1]
            return False
        if tag == "done":
            live_workers -= 1
            return False
        slot, ids, scores = item
        merged[slot] = True
        scan_order.append(int(job.pids[slot]))
        if ids is not None:
            buf.update(ids, scores)
        return True

    def refresh_estimate(new_slots: list[int]) -> None:
        """Same freezing semantics as the single-threaded loop: each
        partition contributes the probability it carried when merged."""
        nonlocal probs, rho, estimate, recomputes
        if not job.early_termination or not buf.full:
            return
        rho_new = math.sqrt(job.space.adapted_d2_from_score(buf.kth_score()))
        if probs is None:
            rho = rho_new
            probs = _probabilities(job.d2q, job.c0_dist, rho, job.space.table)
            estimate = float(probs[merged].sum())
            return
        for slot in new_slots:
            estimate += float(probs[slot])
        if abs(rho_new - rho) > job.tau_rho * rho:
            rho = rho_new
            probs = _probabilities(job.d2q, job.c0_dist, rho, job.space.table)
            recomputes += 1

    # merge whenever a worker signals new partials
    while live_workers > 0 and failure is None:
        try:
            item = results.get(timeout=0.5)
        except queue.Empty:
            if not any(t.is_alive() for t in threads):
                break
            continue
        new_slots: list[int] = []
        if merge_item(item):
            new_slots.append(item[0])
        while True:
            try:
                extra = results.get_nowait()
            except queue.Empty:
                break
            if merge_item(extra):
                new_slots.append(extra[0])
        if failure is not None:
            break
        refresh_estimate(new_slots)
        if merged.all() or (job.early_termination and buf.full
                            and estimate >= job.recall_target):
            break

    stop.set()
    for t in threads:
        t.join()
    # merge whatever was scanned before the workers observed the stop, so
    # the recorded scan set equals the set actually scanned
    while True:
        try:
            item = results.get_nowait()
        except queue.Empty:
            break
        merge_item(item)
    if failure is not None:
        raise QueryExecutionError(f"worker failed: {failure!r}") from failure

    scanned = dict(job.scanned_upper)
    scanned[0] = scan_order
    if stats is not None:
        stats.record_query(scanned)
    if not buf.full:
        estimate = 1.0  # everything reachable was scanned
    if not job.early_termination:
        estimate = float("nan")
    return ScanOutcome(result=buf.to_result(), nprobe=len(scan_order),
                       scanned=scanned, recall_estimate=estimate,
                       recomputes=recomputes)
