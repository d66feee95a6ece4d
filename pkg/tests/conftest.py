import numpy as np
import pytest


def pytest_terminal_summary(terminalreporter):
    """One pass/fail line per acceptance criterion."""
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if "test_acceptance" in rep.nodeid and rep.when == "call":
                name = rep.nodeid.split("::", 1)[1]
                lines.append((name, outcome.upper()))
    if lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for name, outcome in sorted(lines):
            terminalreporter.write_line(f"{outcome:6s} {name}")


def make_clustered(n_clusters, per_cluster, d, seed, spread=10.0, stddev=0.5):
    """Well-separated Gaussian blobs with labels; the workhorse dataset."""
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-spread, spread, size=(n_clusters, d))
    points = np.repeat(centers, per_cluster, axis=0)
    points = points + rng.normal(0.0, stddev, size=points.shape)
    labels = np.repeat(np.arange(n_clusters), per_cluster)
    perm = rng.permutation(points.shape[0])
    return points[perm].astype(np.float32), labels[perm]


def make_zipf_clustered(n_clusters, total, d, seed, spread=10.0, stddev=0.5,
                        exponent=1.3, min_size=50):
    """Gaussian blobs with Zipf-distributed sizes: a few dense hot regions
    and a long tail, for workloads with sustained write skew."""
    rng = np.random.default_rng(seed)
    weights = 1.0 / np.arange(1, n_clusters + 1, dtype=np.float64) ** exponent
    sizes = np.maximum((weights / weights.sum() * total).astype(int), min_size)
    centers = rng.uniform(-spread, spread, size=(n_clusters, d))
    points = np.repeat(centers, sizes, axis=0)
    points = points + rng.normal(0.0, stddev, size=points.shape)
    labels = np.repeat(np.arange(n_clusters), sizes)
    perm = rng.permutation(points.shape[0])
    return points[perm].astype(np.float32), labels[perm]


@pytest.fixture
def clustered_small():
    return make_clustered(n_clusters=20, per_cluster=50, d=8, seed=11)
