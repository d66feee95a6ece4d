"""The search engine: one index plus its statistics, latency profile, and
configured search/maintenance behavior.

The engine is the exclusive writer of its index; searches may run
concurrently only while no insert/delete/maintenance is in flight (the
drivers in this package are sequential, which satisfies that contract).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .aps import ApsConfig, ScanOutcome, multi_level_search
from .executor import NodeTopology, execute_parallel, execute_single, plan_query
from .index import MultiLevelIndex, PartitionStats
from .kernels import Metric
from .maintenance import (
    ActionRecord,
    LatencyProfile,
    MaintenanceConfig,
    maintenance_pass,
    size_threshold_baseline_pass,
)

MAINTENANCE_POLICIES = ("cost", "size-threshold", "none")


@dataclass
class EngineConfig:
    """Everything needed to stand up an engine; defaults are the stable
    settings used throughout."""

    n_partitions: list[int] | None = None
    metric: Metric = Metric.L2
    seed: int = 42
    build_iters: int = 10
    aps: ApsConfig = field(default_factory=ApsConfig)
    maintenance: MaintenanceConfig = field(default_factory=MaintenanceConfig)
    topology: NodeTopology = field(default_factory=NodeTopology)
    use_parallel: bool = False
    maintenance_policy: str = "cost"

    def __post_init__(self) -> None:
        if self.maintenance_policy not in MAINTENANCE_POLICIES:
            raise ValueError(
                f"maintenance_policy must be one of {MAINTENANCE_POLICIES}"
            )


class SearchEngine:
    def __init__(self, index: MultiLevelIndex, profile: LatencyProfile,
                 config: EngineConfig) -> None:
        self.index = index
        self.profile = profile
        self.config = config
        self.stats = PartitionStats(window_size=config.maintenance.window)
        self.actions: list[ActionRecord] = []

    @classmethod
    def build(cls, vectors: np.ndarray, ids: np.ndarray | None,
              profile: LatencyProfile, config: EngineConfig) -> "SearchEngine":
        index = MultiLevelIndex.build(
            vectors, ids=ids, n_partitions=config.n_partitions,
            metric=config.metric, seed=config.seed, n_iters=config.build_iters,
        )
        return cls(index, profile, config)

    # ------------------------------------------------------------------

    @property
    def n_vectors(self) -> int:
        return self.index.n_vectors

    @property
    def n_partitions(self) -> int:
        return self.index.n_partitions(0)

    def search(self, query: np.ndarray) -> ScanOutcome:
        if self.config.use_parallel:
            job = plan_query(self.index, query, self.config.aps,
                             self.config.topology)
            return execute_parallel(self.index, job, self.config.topology,
                                    stats=self.stats)
        return multi_level_search(self.index, query, self.config.aps,
                                  stats=self.stats)

    def search_single(self, query: np.ndarray) -> ScanOutcome:
        job = plan_query(self.index, query, self.config.aps,
                         self.config.topology)
        return execute_single(self.index, job, stats=self.stats)

    def insert_batch(self, vectors: np.ndarray, ids: np.ndarray) -> None:
        self.index.insert_batch(vectors, ids)

    def delete_batch(self, ids: np.ndarray) -> int:
        removed = 0
        for external_id in np.asarray(ids, dtype=np.int64):
            removed += bool(self.index.delete(int(external_id)))
        return removed

    def maintain(self) -> list[ActionRecord]:
        """Roll the statistics window and run the configured policy."""
        self.stats.roll_window()
        policy = self.config.maintenance_policy
        if policy == "none":
            return []
        if policy == "cost":
            records = maintenance_pass(self.index, self.stats, self.profile,
                                       self.config.maintenance)
        else:
            records = size_threshold_baseline_pass(
                self.index, self.config.maintenance, stats=self.stats)
        self.actions.extend(records)
        return records
