import json
import random

import numpy as np
import pytest

from raglog import refset
from raglog.embed import HashingEmbedder
from raglog.ingest import GroundTruth
from raglog.refset import (
    ClusteredPlan,
    EmptyInputError,
    RandomPlan,
    TooFewPointsError,
    build_reference_store,
    elbow_from_curve,
    elbow_select_k,
    kmeans,
    project_2d,
    wcss,
)

import oracles
from conftest import make_entries


def blob_matrix(n_per_blob=100, dim=8, sigma=0.05, seed=0):
    return np.asarray(oracles.make_blobs(n_per_blob, dim, sigma, seed), dtype=np.float64)


class TestPlans:
    def test_clustered_plan_validation(self):
        with pytest.raises(ValueError):
            ClusteredPlan(per_cluster=0)
        with pytest.raises(ValueError):
            ClusteredPlan(per_cluster=10, k_min=1)
        with pytest.raises(ValueError):
            ClusteredPlan(per_cluster=10, k_min=8, k_max=4)
        ClusteredPlan(per_cluster=10, k=3, k_min=99, k_max=1)  # fixed k skips range checks

    def test_plans_are_frozen(self):
        plan = RandomPlan(n=10, seed=1)
        with pytest.raises(AttributeError):
            plan.n = 20


class TestKmeans:
    def test_deterministic_per_seed(self):
        points = blob_matrix(seed=1)
        a = kmeans(points, 3, seed=9)
        b = kmeans(points, 3, seed=9)
        np.testing.assert_array_equal(a.assignments, b.assignments)
        np.testing.assert_array_equal(a.centroids, b.centroids)
        assert a.wcss_history == b.wcss_history

    def test_wcss_history_non_increasing(self):
        for seed in range(8):
            points = blob_matrix(seed=seed)
            model = kmeans(points, 4, seed=seed)
            history = model.wcss_history
            assert all(history[i] >= history[i + 1] for i in range(len(history) - 1))

    def test_final_assignments_nearest_centroid(self):
        points = blob_matrix(seed=3)
        model = kmeans(points, 3, seed=5)
        dists = ((points[:, None, :] - model.centroids[None, :, :]) ** 2).sum(axis=2)
        np.testing.assert_array_equal(model.assignments, np.argmin(dists, axis=1))

    def test_recovers_separated_blobs(self):
        points = blob_matrix(n_per_blob=60, sigma=0.03, seed=7)
        model = kmeans(points, 3, seed=2)
        # Every true blob should land in a single k-means cluster.
        for start in range(0, 180, 60):
            assert len(set(model.assignments[start : start + 60])) == 1
        assert len(set(model.assignments)) == 3

    def test_k_equals_one(self):
        points = blob_matrix(seed=0)
        model = kmeans(points, 1, seed=0)
        np.testing.assert_allclose(model.centroids[0], points.mean(axis=0))
        assert set(model.assignments) == {0}

    def test_wcss_function_agrees_with_history(self):
        points = blob_matrix(seed=4)
        model = kmeans(points, 3, seed=4)
        assert wcss(points, model) == pytest.approx(model.wcss_history[-1], rel=1e-12)

    def test_too_few_points(self):
        with pytest.raises(TooFewPointsError):
            kmeans(np.zeros((2, 4)), 3, seed=0)

    def test_empty_input(self):
        with pytest.raises(EmptyInputError):
            kmeans([], 1, seed=0)

    def test_invalid_k(self):
        with pytest.raises(ValueError):
            kmeans(blob_matrix(), 0, seed=0)

    def test_duplicate_points_tolerated(self):
        # More clusters than distinct points exercises empty-cluster reseeding.
        points = np.array([[0.0, 0.0]] * 5 + [[9.0, 9.0]] * 5)
        model = kmeans(points, 4, seed=1)
        assert model.wcss_history[-1] <= model.wcss_history[0]


class TestElbow:
    def test_injected_curve_picks_three(self):
        curve = [(1, 100.0), (2, 60.0), (3, 20.0), (4, 18.0), (5, 17.0), (6, 16.5)]
        assert elbow_from_curve(curve, k_min=2, k_max=6) == 3

    def test_tie_goes_to_smallest_k(self):
        # Both k=2 and k=3 score 10; expect 2.
        curve = [(1, 40.0), (2, 20.0), (3, 10.0), (4, 10.0), (5, 10.0)]
        s2 = 40 - 2 * 20 + 10
        s3 = 20 - 2 * 10 + 10
        assert s2 == s3
        assert elbow_from_curve(curve, k_min=2, k_max=5) == 2

    def test_incomplete_curve_rejected(self):
        with pytest.raises(ValueError):
            elbow_from_curve([(2, 5.0), (3, 4.0)], k_min=2, k_max=3)

    def test_three_blobs_select_three(self):
        points = blob_matrix(n_per_blob=100, sigma=0.05, seed=21)
        k, curve = elbow_select_k(points, k_min=2, k_max=8, seed=21)
        assert k == 3
        assert [c[0] for c in curve] == list(range(1, 9))
        ws = [c[1] for c in curve]
        assert all(a >= b - 1e-9 for a, b in zip(ws, ws[1:]))

    def test_range_validation(self):
        points = blob_matrix()
        with pytest.raises(ValueError):
            elbow_select_k(points, k_min=1, k_max=8)
        with pytest.raises(ValueError):
            elbow_select_k(points, k_min=5, k_max=5)
        with pytest.raises(TooFewPointsError):
            elbow_select_k(np.zeros((4, 2)), k_min=2, k_max=8)


class TestProjection:
    def test_shape_and_cluster_labels(self):
        points = blob_matrix(seed=6)
        model = kmeans(points, 3, seed=6)
        result = project_2d(points, model, seed=0)
        assert len(result.points) == points.shape[0]
        assert not result.degenerate
        assert {p.cluster for p in result.points} == set(model.assignments)

    def test_captures_leading_variance(self):
        rng = np.random.default_rng(12)
        base = rng.standard_normal((200, 6))
        base[:, 0] *= 20.0  # dominant direction
        model = kmeans(base, 2, seed=1)
        result = project_2d(base, model, seed=3)
        xs = np.array([p.x for p in result.points])
        # x coordinate should essentially reproduce the dominant axis.
        corr = abs(np.corrcoef(xs, base[:, 0])[0, 1])
        assert corr > 0.99

    def test_rank_one_data_is_degenerate(self):
        t = np.linspace(-1, 1, 30)
        points = np.outer(t, np.array([1.0, 2.0, 3.0]))
        model = kmeans(points, 2, seed=0)
        result = project_2d(points, model, seed=0)
        assert result.degenerate
        assert all(p.y == 0.0 for p in result.points)

    def test_constant_data_is_degenerate(self):
        points = np.ones((10, 4))
        model = kmeans(points, 2, seed=0)
        result = project_2d(points, model, seed=0)
        assert result.degenerate
        assert all(p.x == 0.0 and p.y == 0.0 for p in result.points)

    def test_too_few_vectors(self):
        points = np.zeros((2, 4))
        model = refset.ClusterModel(
            k=1, centroids=np.zeros((1, 4)), assignments=np.zeros(2, dtype=np.int64),
            wcss_history=[0.0], seed=0, iterations_run=1, converged=True,
        )
        with pytest.raises(ValueError):
            project_2d(points, model)


class TestBuildReferenceStore:
    def test_random_plan_exact_size(self, normal_entries, small_embedder):
        store, report = build_reference_store(
            normal_entries, RandomPlan(n=50, seed=3), small_embedder
        )
        assert store.count == 50
        assert report.built == 50
        assert not report.shortfall
        assert report.strategy == "random"
        assert report.embedder == small_embedder.descriptor.name

    def test_random_plan_matches_stdlib_sampler(self, normal_entries, small_embedder):
        store, _ = build_reference_store(normal_entries, RandomPlan(n=20, seed=9), small_embedder)
        expected = random.Random(9).sample(normal_entries, 20)
        assert [r.text for r in store.records()] == [e.message for e in expected]

    def test_random_shortfall_takes_all(self, small_embedder):
        entries = make_entries(oracles.make_normal_corpus(10, seed=1))
        store, report = build_reference_store(entries, RandomPlan(n=500, seed=0), small_embedder)
        assert store.count == 10
        assert report.shortfall
        assert report.requested == 500

    def test_fresh_sequential_ids(self, normal_entries, small_embedder):
        store, _ = build_reference_store(normal_entries, RandomPlan(n=30, seed=1), small_embedder)
        assert [r.id for r in store.records()] == list(range(30))

    def test_clustered_fixed_k_budget(self, normal_entries, small_embedder):
        plan = ClusteredPlan(per_cluster=8, k=4, seed=5)
        store, report = build_reference_store(normal_entries, plan, small_embedder)
        assert report.k == 4
        assert len(report.per_cluster_counts) == 4
        assert sum(report.per_cluster_counts) == store.count
        assert store.count <= 32

    def test_clustered_auto_k_records_curve(self, normal_entries, small_embedder):
        plan = ClusteredPlan(per_cluster=5, k_min=2, k_max=6, seed=5)
        _, report = build_reference_store(normal_entries, plan, small_embedder)
        assert report.k is not None
        assert 2 <= report.k <= 5
        assert [c[0] for c in report.elbow_curve] == list(range(1, 7))

    def test_cluster_sampling_within_clusters(self, small_embedder):
        # Two well-separated text groups; per-cluster quota smaller than group.
        group_a = make_entries([f"alpha beta gamma {i}" for i in range(40)])
        group_b = make_entries(
            [f"omicron pi rho {i}" for i in range(40)], start_id=40
        )
        plan = ClusteredPlan(per_cluster=10, k=2, seed=2)
        store, report = build_reference_store(group_a + group_b, plan, small_embedder)
        assert store.count == 20
        assert report.per_cluster_counts == [10, 10]
        texts = [r.text for r in store.records()]
        assert sum(1 for t in texts if t.startswith("alpha")) == 10

    def test_anomalous_candidates_rejected(self, small_embedder):
        bad = make_entries(["boom boom boom"], label=GroundTruth.ANOMALOUS)
        with pytest.raises(ValueError):
            build_reference_store(bad, RandomPlan(n=1), small_embedder)

    def test_empty_candidates_rejected(self, small_embedder):
        with pytest.raises(EmptyInputError):
            build_reference_store([], RandomPlan(n=1), small_embedder)

    def test_candidate_cap_subsamples_pool(self, small_embedder):
        entries = make_entries(oracles.make_normal_corpus(60, seed=2))
        plan = ClusteredPlan(per_cluster=4, k=2, seed=1)
        _, report = build_reference_store(entries, plan, small_embedder, candidate_cap=30)
        assert report.pool_subsampled
        assert report.candidate_pool == 30

    def test_store_saved_when_path_given(self, tmp_path, normal_entries, small_embedder):
        path = tmp_path / "ref.store"
        store, _ = build_reference_store(
            normal_entries, RandomPlan(n=10, seed=0), small_embedder, store_path=path
        )
        from raglog.store import VectorStore

        loaded = VectorStore.load(path)
        assert loaded.count == store.count == 10
        assert loaded.extras["seed"] == 0

    def test_deterministic_rebuild(self, tmp_path, normal_entries, small_embedder):
        plan = ClusteredPlan(per_cluster=6, k=3, seed=8)
        p1, p2 = tmp_path / "a.store", tmp_path / "b.store"
        build_reference_store(normal_entries, plan, small_embedder, store_path=p1)
        build_reference_store(normal_entries, plan, small_embedder, store_path=p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_report_round_trips_as_json(self, tmp_path, normal_entries, small_embedder):
        _, report = build_reference_store(normal_entries, RandomPlan(n=5, seed=0), small_embedder)
        path = tmp_path / "report.json"
        report.save(path)
        doc = json.loads(path.read_text(encoding="utf-8"))
        assert doc["strategy"] == "random"
        assert doc["built"] == 5


class TestCsvWriters:
    def test_projection_csv(self, tmp_path):
        points = blob_matrix(n_per_blob=10, seed=1)
        model = kmeans(points, 3, seed=1)
        result = project_2d(points, model, seed=1)
        path = tmp_path / "proj.csv"
        refset.write_projection_csv(path, result)
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "x,y,cluster"
        assert len(lines) == 31
        x, y, cluster = lines[1].split(",")
        assert float(x) == result.points[0].x  # repr round-trips exactly
        assert int(cluster) == result.points[0].cluster

    def test_elbow_csv(self, tmp_path):
        path = tmp_path / "elbow.csv"
        refset.write_elbow_csv(path, [(1, 10.0), (2, 5.5)])
        assert path.read_text(encoding="utf-8") == "k,wcss\n1,10.0\n2,5.5\n"
