"""Adaptive partitioned vector search.

A multi-level inverted-file index that restructures its partitions online
via a latency cost model and decides per query how many partitions to scan
from a geometric recall estimate.
"""

from .aps import ApsConfig, aps_search, multi_level_search
from .engine import EngineConfig, SearchEngine
from .executor import NodeTopology
from .index import MultiLevelIndex, PartitionStats
from .kernels import KnnResult, Metric, TopKBuffer, brute_force_knn, distance_batch, recall_at_k
from .maintenance import LatencyProfile, MaintenanceConfig, maintenance_pass, profile_scan_latency, total_cost
from .workload import WorkloadSpec, generate_trace, read_trace, replay, write_trace

__all__ = [
    "ApsConfig",
    "EngineConfig",
    "KnnResult",
    "LatencyProfile",
    "MaintenanceConfig",
    "Metric",
    "MultiLevelIndex",
    "NodeTopology",
    "PartitionStats",
    "SearchEngine",
    "TopKBuffer",
    "WorkloadSpec",
    "aps_search",
    "brute_force_knn",
    "distance_batch",
    "generate_trace",
    "maintenance_pass",
    "multi_level_search",
    "profile_scan_latency",
    "read_trace",
    "recall_at_k",
    "replay",
    "total_cost",
    "write_trace",
]

__version__ = "0.1.0"
