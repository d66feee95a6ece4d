"""Synthetic dynamic workloads: generation, trace files, and replay.

A trace is a self-contained, line-delimited file: a JSON header followed
by one JSON operation per line, vector payloads inline. Replay never
re-derives anything from the source dataset, and a ground-truth mirror of
the live vector set is maintained alongside the engine so recall is
measured against exact brute-force search.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
import numpy as np

from .clustering import KMeansConfig, kmeans
from .engine import SearchEngine
from .kernels import Metric, brute_force_knn, recall_at_k

TRACE_FORMAT = "adaptivf-trace-v1"


@dataclass
class WorkloadSpec:
    """Knobs for the generator: operation mix, batch shapes, spatial skew
    (Zipf-weighted cluster sampling), optional sliding-window cap."""

    n_operations: int = 100
    query_fraction: float = 0.5
    insert_fraction: float = 0.5
    delete_fraction: float = 0.0
    vectors_per_op: int = 100
    queries_per_op: int = 10
    initial_size: int = 1000
    skew_clusters: int = 20
    skew_concentration: float = 0.0
    query_noise: float = 0.1
    max_live: int | None = None
    maintain_every: int = 1
    initial_from_cold: bool = False
    seed: int = 42
    k: int = 10
    recall_target: float = 0.9

    def __post_init__(self) -> None:
        total = self.query_fraction + self.insert_fraction + self.delete_fraction
        if abs(total - 1.0) > 1e-9:
            raise ValueError("operation mix fractions must sum to 1")
        if self.skew_concentration < 0:
            raise ValueError("skew concentration must be non-negative")
        if self.n_operations <= 0 or self.initial_size <= 0:
            raise ValueError("n_operations and initial_size must be positive")


@dataclass
class TraceOp:
    kind: str
    ids: np.ndarray | None = None
    vectors: np.ndarray | None = None


@dataclass
class Trace:
    d: int
    metric: Metric
    seed: int
    k: int
    recall_target: float
    spec: dict
    operations: list[TraceOp] = field(default_factory=list)

    @property
    def initial(self) -> TraceOp:
        if not self.operations or self.operations[0].kind != "init":
            raise ValueError("trace has no init operation")
        return self.operations[0]

    def counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for op in self.operations:
            out[op.kind] = out.get(op.kind, 0) + 1
        return out


class _SkewSampler:
    """Cluster-skewed sampling: pick a cluster from a Zipf-like law, then
    draw within the cluster. Clusters are ranked by descending size, so
    the hottest cluster is the densest region of the dataset (read and
    write hot spots coincide)."""

    def __init__(self, dataset: np.ndarray, spec: WorkloadSpec) -> None:
        n_clusters = min(spec.skew_clusters, dataset.shape[0])
        result = kmeans(dataset, KMeansConfig(n_clusters=n_clusters,
                                              n_iters=5, seed=spec.seed))
        self.assignments = result.assignments
        self.centers = result.centroids
        self.n_clusters = result.n_clusters
        counts = np.bincount(self.assignments, minlength=self.n_clusters)
        spreads = np.zeros(self.n_clusters)
        for c in range(self.n_clusters):
            members = dataset[self.assignments == c]
            spreads[c] = members.std() if members.shape[0] > 1 else 1.0
        self.spreads = np.maximum(spreads, 1e-6)
        ranks = np.argsort(np.argsort(-counts, kind="stable"), kind="stable")
        weights = 1.0 / np.arange(1, self.n_clusters + 1, dtype=np.float64) \
            ** spec.skew_concentration
        weights /= weights.sum()
        self.weights = weights[ranks]

    def pick_cluster(self, rng: np.random.Generator) -> int:
        return int(rng.choice(self.n_clusters, p=self.weights))

    def query_point(self, rng: np.random.Generator, noise: float) -> np.ndarray:
        c = self.pick_cluster(rng)
        center = self.centers[c]
        return (center + rng.normal(0, noise * self.spreads[c],
                                    center.shape)).astype(np.float32)


def _mix_schedule(spec: WorkloadSpec) -> list[str]:
    """Deterministic interleaving hitting the mix fractions exactly."""
    kinds = ("query", "insert", "delete")
    shares = (spec.query_fraction, spec.insert_fraction, spec.delete_fraction)
    emitted = [0, 0, 0]
    plan: list[str] = []
    for t in range(spec.n_operations):
        deficits = [shares[i] * (t + 1) - emitted[i] for i in range(3)]
        pick = max(range(3), key=lambda i: (deficits[i], -i))
        emitted[pick] += 1
        plan.append(kinds[pick])
    return plan


def generate_trace(dataset: np.ndarray, spec: WorkloadSpec,
                   metric: Metric = Metric.L2) -> Trace:
    """Build a deterministic operation stream from a base dataset.

    Inserts consume dataset vectors (each id used at most once); deletes
    always reference live ids. A maintain marker is emitted after every
    ``maintain_every`` operations. Raises when the schedule is infeasible
    for the dataset size.
    """
    dataset = np.asarray(dataset, dtype=np.float32)
    n, d = dataset.shape
    rng = np.random.default_rng(spec.seed)

    n_inserts = sum(1 for k in _mix_schedule(spec) if k == "insert")
    if spec.initial_size + n_inserts * spec.vectors_per_op > n:
        raise ValueError(
            f"dataset of {n} vectors cannot supply {spec.initial_size} initial "
            f"plus {n_inserts} insert batches of {spec.vectors_per_op}"
        )

    sampler = _SkewSampler(dataset, spec)
    unused: list[list[int]] = [[] for _ in range(sampler.n_clusters)]
    order = rng.permutation(n)
    if spec.initial_from_cold:
        # emerging-content pattern: the initial residents come from the
        # coldest clusters, so the workload grows into regions the initial
        # partitioning barely covers
        for idx in order:
            unused[int(sampler.assignments[idx])].append(int(idx))
        init_list: list[int] = []
        for cluster in np.argsort(sampler.weights, kind="stable"):
            pool = unused[int(cluster)]
            take = min(spec.initial_size - len(init_list), len(pool))
            init_list.extend(pool[:take])
            del pool[:take]
            if len(init_list) >= spec.initial_size:
                break
        init_ids = np.array(init_list)
    else:
        init_ids = order[: spec.initial_size]
        for idx in order[spec.initial_size:]:
            unused[int(sampler.assignments[idx])].append(int(idx))

    live: list[int] = list(map(int, init_ids))
    live_set = set(live)
    ops: list[TraceOp] = [TraceOp(kind="init", ids=np.array(sorted(live)),
                                  vectors=dataset[np.array(sorted(live))])]

    def draw_inserts(count: int) -> list[int]:
        chosen: list[int] = []
        cluster = sampler.pick_cluster(rng)
        probe = 0
        while len(chosen) < count and probe < 2 * sampler.n_clusters:
            pool = unused[cluster]
            take = min(count - len(chosen), len(pool))
            if take:
                chosen.extend(pool[-take:])
                del pool[-take:]
            cluster = (cluster + 1) % sampler.n_clusters
            probe += 1
        return chosen

    since_maintain = 0
    for kind in _mix_schedule(spec):
        if kind == "query":
            queries = np.stack([
                sampler.query_point(rng, spec.query_noise)
                for _ in range(spec.queries_per_op)
            ])
            ops.append(TraceOp(kind="query", vectors=queries))
        elif kind == "insert":
            chosen = draw_inserts(spec.vectors_per_op)
            if not chosen:
                raise ValueError("dataset exhausted during insert scheduling")
            ids = np.array(chosen, dtype=np.int64)
            ops.append(TraceOp(kind="insert", ids=ids, vectors=dataset[ids]))
            live.extend(chosen)
            live_set.update(chosen)
            if spec.max_live is not None and len(live) > spec.max_live:
                # sliding window: retire the oldest residents
                overflow = len(live) - spec.max_live
                victims = live[:overflow]
                ops.append(TraceOp(kind="delete",
                                   ids=np.array(victims, dtype=np.int64)))
                live_set.difference_update(victims)
                live = live[overflow:]
        else:  # delete
            if len(live) <= spec.vectors_per_op:
                raise ValueError("delete schedule exceeds the live set")
            rows = rng.choice(len(live), size=spec.vectors_per_op,
                              replace=False)
            victims = [live[r] for r in rows]
            ops.append(TraceOp(kind="delete",
                               ids=np.array(victims, dtype=np.int64)))
            live_set.difference_update(victims)
            live = [v for v in live if v in live_set]
        since_maintain += 1
        if spec.maintain_every and since_maintain >= spec.maintain_every:
            ops.append(TraceOp(kind="maintain"))
            since_maintain = 0

    return Trace(d=d, metric=metric, seed=spec.seed, k=spec.k,
                 recall_target=spec.recall_target, spec=vars(spec).copy(),
                 operations=ops)


# ---------------------------------------------------------------------------
# trace files
# ---------------------------------------------------------------------------

def write_trace(trace: Trace, path) -> None:
    with open(path, "w") as fh:
        header = {
            "format": TRACE_FORMAT, "d": trace.d, "metric": trace.metric.value,
            "seed": trace.seed, "k": trace.k,
            "recall_target": trace.recall_target, "spec": trace.spec,
        }
        fh.write(json.dumps(header) + "\n")
        for op in trace.operations:
            record: dict = {"op": op.kind}
            if op.ids is not None:
                record["ids"] = [int(i) for i in op.ids]
            if op.vectors is not None:
                record["vectors"] = [[float(x) for x in row]
                                     for row in op.vectors]
            fh.write(json.dumps(record) + "\n")


def read_trace(path) -> Trace:
    with open(path) as fh:
        first = fh.readline()
        try:
            header = json.loads(first)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: malformed header: {exc}") from exc
        if header.get("format") != TRACE_FORMAT:
            raise ValueError(f"{path}: not a {TRACE_FORMAT} file")
        trace = Trace(d=header["d"], metric=Metric.parse(header["metric"]),
                      seed=header["seed"], k=header["k"],
                      recall_target=header["recall_target"],
                      spec=header.get("spec", {}))
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(
                    f"{path}: malformed operation at line {lineno}: {exc}"
                ) from exc
            ids = (np.array(record["ids"], dtype=np.int64)
                   if "ids" in record else None)
            vectors = (np.array(record["vectors"], dtype=np.float32)
                       if "vectors" in record else None)
            if vectors is not None and vectors.ndim == 2 \
                    and vectors.shape[1] != trace.d:
                raise ValueError(
                    f"{path}: line {lineno}: vector dimension "
                    f"{vectors.shape[1]} does not match header {trace.d}"
                )
            trace.operations.append(TraceOp(kind=record["op"], ids=ids,
                                            vectors=vectors))
    return trace


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------

@dataclass
class OpMetric:
    op_index: int
    kind: str
    latency_s: float
    recall: float = float("nan")
    nprobe: float = float("nan")
    n_live: int = 0
    n_partitions: int = 0


@dataclass
class RunMetrics:
    per_op: list[OpMetric] = field(default_factory=list)
    per_query_recall: list[float] = field(default_factory=list)
    per_query_nprobe: list[int] = field(default_factory=list)
    per_query_latency: list[float] = field(default_factory=list)
    search_time: float = 0.0
    update_time: float = 0.0
    maintenance_time: float = 0.0
    actions_committed: int = 0
    actions_rejected: int = 0

    @property
    def total_time(self) -> float:
        return self.search_time + self.update_time + self.maintenance_time

    def summary(self) -> dict:
        recalls = np.array(self.per_query_recall, dtype=np.float64)
        recalls = recalls[~np.isnan(recalls)]
        return {
            "operations": len(self.per_op),
            "queries": len(self.per_query_latency),
            "search_time_s": self.search_time,
            "update_time_s": self.update_time,
            "maintenance_time_s": self.maintenance_time,
            "total_time_s": self.total_time,
            "mean_recall": float(recalls.mean()) if recalls.size else None,
            "recall_std": float(recalls.std()) if recalls.size else None,
            "mean_nprobe": (float(np.mean(self.per_query_nprobe))
                            if self.per_query_nprobe else None),
            "mean_query_latency_s": (float(np.mean(self.per_query_latency))
                                     if self.per_query_latency else None),
            "actions_committed": self.actions_committed,
            "actions_rejected": self.actions_rejected,
            "final_partitions": (self.per_op[-1].n_partitions
                                 if self.per_op else 0),
        }

    def write_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["op_index", "kind", "latency_s", "recall",
                             "nprobe", "n_live", "n_partitions"])
            for row in self.per_op:
                writer.writerow([row.op_index, row.kind, f"{row.latency_s:.9f}",
                                 row.recall, row.nprobe, row.n_live,
                                 row.n_partitions])

    def write_summary(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=1)


class _LiveMirror:
    """Exact copy of the live vector set for brute-force ground truth."""

    def __init__(self, d: int) -> None:
        self.ids = np.empty(0, dtype=np.int64)
        self.vectors = np.empty((0, d), dtype=np.float32)

    def insert(self, ids: np.ndarray, vectors: np.ndarray) -> None:
        self.ids = np.concatenate([self.ids, ids])
        self.vectors = np.vstack([self.vectors, vectors])

    def delete(self, ids: np.ndarray) -> None:
        keep = ~np.isin(self.ids, ids)
        self.ids = self.ids[keep]
        self.vectors = self.vectors[keep]

    @property
    def size(self) -> int:
        return int(self.ids.shape[0])


def engine_from_trace(trace: Trace, profile, config) -> SearchEngine:
    """Build an engine on the trace's initial dataset."""
    init = trace.initial
    config.metric = trace.metric
    return SearchEngine.build(init.vectors, init.ids, profile, config)


def replay(trace: Trace, engine: SearchEngine,
           recall_every_above_100k: int = 10,
           maintenance_enabled: bool = True) -> RunMetrics:
    """Execute the trace in order, measuring latency and exact recall.

    Recall is evaluated for every query while the live set is at most
    100k vectors and for every ``recall_every_above_100k``-th query
    beyond, to bound the brute-force oracle cost.
    """
    if engine.index.d != trace.d:
        raise ValueError(
            f"engine dimension {engine.index.d} != trace dimension {trace.d}"
        )
    if engine.index.metric is not trace.metric:
        raise ValueError("engine metric does not match trace metric")

    metrics = RunMetrics()
    mirror = _LiveMirror(trace.d)
    init = trace.initial
    mirror.insert(init.ids, init.vectors)
    k = trace.k
    query_counter = 0

    for op_index, op in enumerate(trace.operations[1:], start=1):
        if op.kind == "query":
            start = time.perf_counter()
            outcomes = [engine.search(q) for q in op.vectors]
            elapsed = time.perf_counter() - start
            metrics.search_time += elapsed
            recalls = []
            for q, outcome in zip(op.vectors, outcomes):
                query_counter += 1
                metrics.per_query_nprobe.append(outcome.nprobe)
                metrics.per_query_latency.append(elapsed / len(outcomes))
                evaluate = (mirror.size <= 100_000
                            or query_counter % recall_every_above_100k == 0)
                if evaluate and mirror.size:
                    truth = brute_force_knn(q[None, :], mirror.vectors,
                                            k=k, metric=trace.metric,
                                            ids=mirror.ids)[0]
                    value = recall_at_k(outcome.result, truth)
                    recalls.append(value)
                    metrics.per_query_recall.append(value)
                else:
                    metrics.per_query_recall.append(float("nan"))
            metrics.per_op.append(OpMetric(
                op_index=op_index, kind="query", latency_s=elapsed,
                recall=float(np.mean(recalls)) if recalls else float("nan"),
                nprobe=float(np.mean([o.nprobe for o in outcomes])),
                n_live=mirror.size, n_partitions=engine.n_partitions))
        elif op.kind == "insert":
            start = time.perf_counter()
            engine.insert_batch(op.vectors, op.ids)
            elapsed = time.perf_counter() - start
            metrics.update_time += elapsed
            mirror.insert(op.ids, op.vectors)
            metrics.per_op.append(OpMetric(
                op_index=op_index, kind="insert", latency_s=elapsed,
                n_live=mirror.size, n_partitions=engine.n_partitions))
        elif op.kind == "delete":
            start = time.perf_counter()
            engine.delete_batch(op.ids)
            elapsed = time.perf_counter() - start
            metrics.update_time += elapsed
            mirror.delete(op.ids)
            metrics.per_op.append(OpMetric(
                op_index=op_index, kind="delete", latency_s=elapsed,
                n_live=mirror.size, n_partitions=engine.n_partitions))
        elif op.kind == "maintain":
            if maintenance_enabled:
                start = time.perf_counter()
                records = engine.maintain()
                elapsed = time.perf_counter() - start
                metrics.maintenance_time += elapsed
                metrics.actions_committed += sum(r.committed for r in records)
                metrics.actions_rejected += sum(not r.committed
                                                for r in records)
            else:
                elapsed = 0.0
            metrics.per_op.append(OpMetric(
                op_index=op_index, kind="maintain", latency_s=elapsed,
                n_live=mirror.size, n_partitions=engine.n_partitions))
        else:
            raise ValueError(f"unknown trace operation {op.kind!r}")

    live_ids = set(int(i) for i in mirror.ids)
    engine_ids = set(int(i) for i in engine.index.all_ids())
    if live_ids != engine_ids:
        raise AssertionError("engine live set diverged from the trace oracle")
    return metrics
