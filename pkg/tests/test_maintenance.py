import numpy as np
import pytest

from adaptivf.clustering import SplitResult
from adaptivf.index import MultiLevelIndex, PartitionStats
from adaptivf.kernels import Metric
from adaptivf.maintenance import (
    ActionRecord,
    LatencyProfile,
    MaintenanceConfig,
    estimate_merge_delta,
    estimate_split_delta,
    export_actions,
    maintenance_pass,
    profile_scan_latency,
    size_threshold_baseline_pass,
    total_cost,
    verify_merge_delta,
    verify_split_delta,
)

US = 1e-6

# worked-example profile: 60 us per centroid row in the small-size range,
# then the documented non-linear scan latencies
WORKED_SIZES = [2, 3, 4, 50, 250, 450, 500]
WORKED_LATENCIES = [130 * US, 190 * US, 250 * US, 250 * US,
                    550 * US, 1050 * US, 1200 * US]


def worked_profile():
    return LatencyProfile(WORKED_SIZES, WORKED_LATENCIES)


class TestLatencyProfile:
    def test_exact_at_grid_points(self):
        profile = worked_profile()
        assert profile(50) == pytest.approx(250 * US)
        assert profile(250) == pytest.approx(550 * US)
        assert profile(450) == pytest.approx(1050 * US)
        assert profile(500) == pytest.approx(1200 * US)

    def test_interpolation_between_points(self):
        assert worked_profile()(350) == pytest.approx(800 * US)

    def test_extrapolation_clamped_at_zero(self):
        profile = LatencyProfile([50, 250], [250 * US, 550 * US])
        # linear continuation below and above the grid
        assert profile(0) == pytest.approx(175 * US)
        assert profile(350) == pytest.approx(700 * US)
        steep = LatencyProfile([100, 200], [100 * US, 300 * US])
        assert steep(0) == 0.0  # extrapolates negative, clamped

    def test_non_monotone_input_gets_isotonic_pass(self):
        profile = LatencyProfile([1, 2, 3, 4], [1.0, 3.0, 2.0, 4.0])
        assert np.all(np.diff(profile.latencies) >= 0)
        assert profile(2) == pytest.approx(2.5)

    def test_roundtrip(self, tmp_path):
        profile = worked_profile()
        path = tmp_path / "profile.json"
        profile.save(path)
        loaded = LatencyProfile.load(path)
        np.testing.assert_array_equal(loaded.sizes, profile.sizes)
        np.testing.assert_array_equal(loaded.latencies, profile.latencies)

    def test_measured_profile_is_monotone_and_positive(self):
        profile = profile_scan_latency(8, Metric.L2, [10, 100, 1000],
                                       repetitions=3, seed=0)
        assert np.all(np.diff(profile.latencies) >= 0)
        assert np.all(profile.latencies >= 0)


def two_partition_fixture(seed=0):
    """Two natural 500-point clusters, one partition each; the first
    coordinate's sign identifies the cluster."""
    rng = np.random.default_rng(seed)
    left = rng.normal(0, 0.5, size=(500, 2)) + np.array([-10.0, 0.0])
    right = rng.normal(0, 0.5, size=(500, 2)) + np.array([10.0, 0.0])
    pts = np.vstack([left, right]).astype(np.float32)
    index = MultiLevelIndex.build(pts, n_partitions=[2], seed=seed)
    stats = PartitionStats()
    for pid in index.partition_ids(0):
        stats.set_frequency(0, pid, 0.10)
    stats.set_frequency(1, index.top.pid, 1.0)
    return index, stats


def forced_splitter(vectors, seed, metric):
    """Balanced split for the negative-side cluster, 450/50 for the other."""
    n = vectors.shape[0]
    if vectors[0, 0] < 0:
        left = np.arange(n // 2)
        right = np.arange(n // 2, n)
    else:
        left = np.arange(450)
        right = np.arange(450, n)
    return SplitResult(left_rows=left, right_rows=right,
                       left_centroid=vectors[left].mean(axis=0),
                       right_centroid=vectors[right].mean(axis=0))


class TestDeltaFormulas:
    def test_split_estimate_worked_example(self):
        delta = estimate_split_delta(0.10, 500, worked_profile(), alpha=0.5,
                                     delta_overhead=60 * US)
        assert delta == pytest.approx(-5 * US, abs=1e-12)

    def test_split_estimate_zero_frequency_never_negative(self):
        delta = estimate_split_delta(0.0, 500, worked_profile(), alpha=0.5,
                                     delta_overhead=60 * US)
        assert delta == pytest.approx(60 * US)

    def test_split_estimate_neutral_when_linear_through_origin(self):
        # with lambda(s/2) = lambda(s)/2 the children's term cancels the
        # parent's exactly when each child keeps the full traffic
        linear = LatencyProfile([0, 1000], [0.0, 1000 * US])
        delta = estimate_split_delta(0.2, 400, linear, alpha=1.0,
                                     delta_overhead=0.0)
        assert delta == pytest.approx(0.0, abs=1e-15)
        # any alpha < 1 makes the split look strictly beneficial
        assert estimate_split_delta(0.2, 400, linear, 0.5, 0.0) < 0

    def test_split_verify_balanced_commits(self):
        delta = verify_split_delta(0.10, 500, 250, 250, worked_profile(),
                                   alpha=0.5, delta_overhead=60 * US)
        assert delta == pytest.approx(-5 * US, abs=1e-12)
        assert delta < -4 * US

    def test_split_verify_imbalanced_rejects(self):
        delta = verify_split_delta(0.10, 500, 450, 50, worked_profile(),
                                   alpha=0.5, delta_overhead=60 * US)
        assert delta == pytest.approx(5 * US, abs=1e-12)
        assert delta >= -4 * US

    def test_split_verify_rejects_empty_child(self):
        with pytest.raises(ValueError):
            verify_split_delta(0.1, 500, 500, 0, worked_profile(), 0.5, 0.0)
        with pytest.raises(ValueError):
            verify_split_delta(0.1, 500, 400, 50, worked_profile(), 0.5, 0.0)

    def test_merge_estimate_empty_partition_always_beneficial(self):
        overhead_down = -60 * US
        delta = estimate_merge_delta(0.0, 0, [(250, 0.1)], worked_profile(),
                                     overhead_down)
        assert delta == pytest.approx(overhead_down)
        assert delta < 0

    def test_merge_estimate_hot_equal_neighbor_rejected(self):
        # superlinear profile: combining two hot 250-row partitions costs
        # more than the centroid saving
        profile = worked_profile()
        overhead_down = profile(2) - profile(3)
        delta = estimate_merge_delta(0.10, 250, [(250, 0.10)], profile,
                                     overhead_down)
        direct = (overhead_down - 0.10 * profile(250)
                  + 0.20 * profile(500) - 0.10 * profile(250))
        assert delta == pytest.approx(direct, abs=1e-12)
        assert delta > 0

    def test_merge_estimate_uniform_receivers_symmetric(self):
        profile = worked_profile()
        a = estimate_merge_delta(0.1, 100, [(200, 0.05), (200, 0.05)], profile, 0.0)
        b = estimate_merge_delta(0.1, 100, [(200, 0.05), (200, 0.05)], profile, 0.0)
        assert a == b
        single_terms = 2 * ((0.05 + 0.05) * profile(250) - 0.05 * profile(200))
        assert a == pytest.approx(-0.1 * profile(100) + single_terms, abs=1e-12)

    def test_merge_verify_single_receiver_two_term_form(self):
        profile = worked_profile()
        delta = verify_merge_delta(0.1, 100, [(400, 0.2, 100)], profile,
                                   delta_overhead=-10 * US)
        want = (-10 * US - 0.1 * profile(100)
                + (0.2 + 0.1) * profile(500) - 0.2 * profile(400))
        assert delta == pytest.approx(want, abs=1e-12)

    def test_merge_verify_empty_source_is_overhead_only(self):
        delta = verify_merge_delta(0.0, 0, [], worked_profile(),
                                   delta_overhead=-7 * US)
        assert delta == pytest.approx(-7 * US)

    def test_merge_verify_matches_full_cost_recomputation(self):
        rng = np.random.default_rng(3)
        pts = rng.normal(size=(400, 4)).astype(np.float32)
        index = MultiLevelIndex.build(pts, n_partitions=[8], seed=3)
        profile = LatencyProfile([0, 50, 200], [10 * US, 60 * US, 400 * US])
        stats = PartitionStats()
        for pid in index.partition_ids(0):
            stats.set_frequency(0, pid, float(rng.uniform(0.01, 0.3)))
        stats.set_frequency(1, index.top.pid, 1.0)
        victim = index.partition_ids(0)[0]
        freq = stats.access_frequency(0, victim)
        size = index.get_partition(0, victim).size
        overhead_down = 1.0 * (profile(index.top.size - 1) - profile(index.top.size))
        pre_sizes = {p: index.get_partition(0, p).size
                     for p in index.partition_ids(0)}
        before = total_cost(index, stats, profile)
        received, _ = index.apply_merge(0, victim)
        measured = [(pre_sizes[r], stats.access_frequency(0, r), gained)
                    for r, gained in received.items()]
        delta = verify_merge_delta(freq, size, measured, profile, overhead_down)
        stats.drop(0, victim)
        for r, gained in received.items():
            stats.set_frequency(0, r, stats.access_frequency(0, r)
                                + freq * gained / size)
        after = total_cost(index, stats, profile)
        assert delta == pytest.approx(after - before, abs=1e-12)


class TestMaintenancePass:
    def config(self, **kw):
        base = dict(tau=4 * US, alpha=0.5, enable_refinement=False,
                    refine_radius=50, seed=0)
        base.update(kw)
        return MaintenanceConfig(**base)

    def test_worked_example_commit_and_reject(self):
        index, stats = two_partition_fixture()
        records = maintenance_pass(index, stats, worked_profile(),
                                   self.config(), splitter=forced_splitter)
        splits = [r for r in records if r.kind == "split"]
        assert len(splits) == 2
        balanced = [r for r in splits if r.sizes_after == (250, 250)]
        imbalanced = [r for r in splits if r.sizes_after == (450, 50)]
        assert len(balanced) == 1 and len(imbalanced) == 1
        assert balanced[0].estimated_delta == pytest.approx(-5 * US, abs=1e-12)
        assert balanced[0].verified_delta == pytest.approx(-5 * US, abs=1e-12)
        assert balanced[0].decision == "commit"
        assert imbalanced[0].estimated_delta == pytest.approx(-5 * US, abs=1e-12)
        assert imbalanced[0].verified_delta == pytest.approx(5 * US, abs=1e-12)
        assert imbalanced[0].decision == "reject"
        # rejected partition kept intact, committed one replaced by children
        assert index.n_partitions(0) == 3
        assert sorted(index.get_partition(0, p).size
                      for p in index.partition_ids(0)) == [250, 250, 500]
        index.check_consistency()

    def test_commit_cost_identity(self):
        index, stats = two_partition_fixture()
        records = maintenance_pass(index, stats, worked_profile(),
                                   self.config(), splitter=forced_splitter)
        for record in records:
            if record.committed:
                assert record.cost_after - record.cost_before == pytest.approx(
                    record.verified_delta, abs=1e-12)
                assert record.cost_after - record.cost_before < -4 * US

    def test_rejection_restores_bit_identical_state(self, tmp_path):
        rng = np.random.default_rng(1)
        # single hot partition whose split always comes out 450/50: the
        # estimate qualifies, verification rejects
        pts = (rng.normal(0, 0.5, size=(500, 2)) + 10.0).astype(np.float32)
        extra = (rng.normal(0, 0.5, size=(500, 2)) - 10.0).astype(np.float32)
        index = MultiLevelIndex.build(np.vstack([extra, pts]),
                                      n_partitions=[2], seed=1)
        stats = PartitionStats()
        hot = max(index.partition_ids(0),
                  key=lambda p: index.centroid_of(0, p)[0])
        stats.set_frequency(0, hot, 0.10)
        stats.set_frequency(1, index.top.pid, 1.0)
        before = tmp_path / "before.bin"
        index.save(before)
        records = maintenance_pass(index, stats, worked_profile(),
                                   self.config(), splitter=forced_splitter)
        assert [r.decision for r in records] == ["reject"]
        after = tmp_path / "after.bin"
        index.save(after)
        assert before.read_bytes() == after.read_bytes()
        index.check_consistency()

    def test_no_rejection_flag_commits_anyway(self):
        index, stats = two_partition_fixture()
        records = maintenance_pass(index, stats, worked_profile(),
                                   self.config(enable_rejection=False),
                                   splitter=forced_splitter)
        assert all(r.decision == "commit" for r in records)
        assert index.n_partitions(0) == 4

    def test_uniform_flat_profile_commits_nothing(self):
        rng = np.random.default_rng(2)
        pts = rng.uniform(-1, 1, size=(1000, 4)).astype(np.float32)
        index = MultiLevelIndex.build(pts, n_partitions=[10], seed=2)
        stats = PartitionStats()
        for pid in index.partition_ids(0):
            stats.set_frequency(0, pid, 0.1)
        stats.set_frequency(1, index.top.pid, 1.0)
        linear = LatencyProfile([0, 1000], [0.0, 1000 * US])
        records = maintenance_pass(index, stats, linear,
                                   MaintenanceConfig(tau=250e-9, alpha=0.9,
                                                     enable_refinement=False))
        assert [r for r in records if r.decision == "commit"] == []

    def test_skewed_instance_cost_non_increasing(self):
        rng = np.random.default_rng(4)
        blobs = [rng.normal(i * 8.0, 1.0, size=(n, 4))
                 for i, n in enumerate([2000, 300, 250, 220, 200, 30])]
        pts = np.vstack(blobs).astype(np.float32)
        index = MultiLevelIndex.build(pts, n_partitions=[6], seed=4)
        stats = PartitionStats()
        sizes = {p: index.get_partition(0, p).size for p in index.partition_ids(0)}
        total = sum(sizes.values())
        for pid, size in sizes.items():
            stats.set_frequency(0, pid, 0.8 * size / total)
        stats.set_frequency(1, index.top.pid, 1.0)
        profile = LatencyProfile([0, 100, 500, 2500],
                                 [5 * US, 100 * US, 900 * US, 9000 * US])
        before = total_cost(index, stats, profile)
        records = maintenance_pass(index, stats, profile,
                                   self.config(alpha=0.9, tau=250e-9))
        after = total_cost(index, stats, profile)
        assert any(r.committed for r in records)
        assert after <= before
        index.check_consistency()

    def test_repeated_passes_reach_fixed_point(self):
        rng = np.random.default_rng(5)
        pts = np.vstack([
            rng.normal(0.0, 1.0, size=(3000, 4)),
            rng.normal(20.0, 1.0, size=(500, 4)),
        ]).astype(np.float32)
        index = MultiLevelIndex.build(pts, n_partitions=[8], seed=5)
        stats = PartitionStats()
        for pid in index.partition_ids(0):
            size = index.get_partition(0, pid).size
            stats.set_frequency(0, pid, min(0.9, size / 1000.0))
        stats.set_frequency(1, index.top.pid, 1.0)
        profile = LatencyProfile([0, 100, 1000, 4000],
                                 [5 * US, 60 * US, 900 * US, 7000 * US])
        config = MaintenanceConfig(tau=250e-9, alpha=0.9,
                                   enable_refinement=True, refine_radius=10,
                                   seed=5)
        for round_no in range(50):
            records = maintenance_pass(index, stats, profile, config)
            index.check_consistency()
            if not any(r.committed for r in records):
                break
        else:
            pytest.fail("no zero-commit fixed point within 50 passes")

    def test_action_export_is_line_delimited_json(self, tmp_path):
        index, stats = two_partition_fixture()
        records = maintenance_pass(index, stats, worked_profile(),
                                   self.config(), splitter=forced_splitter)
        path = tmp_path / "actions.jsonl"
        export_actions(records, path)
        import json
        lines = path.read_text().strip().splitlines()
        assert len(lines) == len(records)
        parsed = [json.loads(line) for line in lines]
        assert {p["decision"] for p in parsed} == {"commit", "reject"}


class TestBaselinePass:
    def test_oversized_partition_split_unconditionally(self):
        rng = np.random.default_rng(6)
        pts = np.vstack([
            rng.normal(0.0, 1.0, size=(800, 3)),
            rng.normal(15.0, 1.0, size=(100, 3)),
            rng.normal(-15.0, 1.0, size=(100, 3)),
        ]).astype(np.float32)
        index = MultiLevelIndex.build(pts, n_partitions=[3], seed=6)
        config = MaintenanceConfig(baseline_max_size=500, baseline_min_size=10,
                                   enable_refinement=False)
        records = size_threshold_baseline_pass(index, config)
        assert any(r.kind == "split" and r.committed for r in records)
        assert all(r.committed for r in records)
        index.check_consistency()

    def test_all_within_bounds_no_actions(self):
        rng = np.random.default_rng(7)
        pts = rng.normal(size=(300, 3)).astype(np.float32)
        index = MultiLevelIndex.build(pts, n_partitions=[3], seed=7)
        config = MaintenanceConfig(baseline_max_size=1000, baseline_min_size=1,
                                   enable_refinement=False)
        assert size_threshold_baseline_pass(index, config) == []


class TestLevelManagement:
    def test_add_level_triggered_by_top_size(self):
        rng = np.random.default_rng(8)
        pts = rng.normal(size=(3000, 4)).astype(np.float32)
        index = MultiLevelIndex.build(pts, n_partitions=[300], seed=8)
        stats = PartitionStats()
        stats.set_frequency(1, index.top.pid, 1.0)
        config = MaintenanceConfig(add_level_threshold=200,
                                   enable_refinement=False, tau=1.0)
        records = maintenance_pass(index, stats, worked_profile(), config)
        assert [r.kind for r in records if r.committed] == ["add-level"]
        assert index.n_levels == 3
        index.check_consistency()

    def test_remove_level_triggered_by_sparse_top(self):
        rng = np.random.default_rng(9)
        pts = rng.normal(size=(2000, 4)).astype(np.float32)
        index = MultiLevelIndex.build(pts, n_partitions=[100, 10], seed=9)
        stats = PartitionStats()
        stats.set_frequency(2, index.top.pid, 1.0)
        config = MaintenanceConfig(remove_level_threshold=50,
                                   enable_refinement=False, tau=1.0)
        records = maintenance_pass(index, stats, worked_profile(), config)
        assert [r.kind for r in records if r.committed] == ["remove-level"]
        assert index.n_levels == 2
        index.check_consistency()
