import numpy as np
import pytest

from costalign.errors import (AmbiguousSide, EmptyAfterFilter, MissingSide, MissingSternum)
from costalign.geometry import PointCloud, RigidTransform, apply_transform
from costalign.preprocess import (ClusteringParams, canonicalize, coarse_align, dbscan,
                                  filter_small_clusters, preprocess_pipeline,
                                  split_left_right, sternum_rms, synth_sternum)
from costalign.synthesis import AnatomyParams, generate_pair

from conftest import rotation_about_z


def bruteforce_dbscan_partition(pts, eps, min_points):
    """Independent O(n^2) density-connectivity oracle; returns the partition of
    clustered point indices as a set of frozensets (noise excluded)."""
    n = len(pts)
    d2 = np.sum((pts[:, None] - pts[None]) ** 2, axis=2)
    neighbors = [np.flatnonzero(d2[i] <= eps * eps) for i in range(n)]
    core = np.array([len(nb) >= min_points for nb in neighbors])
    # density-connect cores
    labels = -np.ones(n, dtype=int)
    cur = 0
    for i in range(n):
        if not core[i] or labels[i] != -1:
            continue
        todo = [i]
        labels[i] = cur
        while todo:
            j = todo.pop()
            for k in neighbors[j]:
                if core[k] and labels[k] == -1:
                    labels[k] = cur
                    todo.append(k)
        cur += 1
    for i in range(n):
        if core[i]:
            continue
        core_nb = [k for k in neighbors[i] if core[k]]
        if core_nb:
            dists = [d2[i, k] for k in core_nb]
            labels[i] = labels[core_nb[int(np.argmin(dists))]]
    return {frozenset(np.flatnonzero(labels == c)) for c in range(cur)}


def partition_of(ids):
    return {frozenset(np.flatnonzero(ids == c)) for c in np.unique(ids[ids >= 0])}


class TestDbscan:
    def test_two_blobs(self):
        rng = np.random.default_rng(0)
        a = rng.normal(0, 0.8, (50, 3)).clip(-2, 2)
        b = rng.normal(0, 0.8, (50, 3)).clip(-2, 2) + np.array([100.0, 0, 0])
        pts = np.vstack([a, b])
        ids = dbscan(pts, ClusteringParams(eps=8.0, min_points=4))
        assert len(np.unique(ids[ids >= 0])) == 2
        assert (ids >= 0).all()  # no noise
        assert partition_of(ids) == bruteforce_dbscan_partition(pts, 8.0, 4)

    def test_single_point_is_noise(self):
        ids = dbscan(np.array([[0.0, 0.0, 0.0]]), ClusteringParams(eps=8.0, min_points=4))
        assert ids.tolist() == [-1]

    def test_chain_connectivity(self):
        pts = np.stack([np.arange(0.0, 60.0, 1.0), np.zeros(60), np.zeros(60)], axis=1)
        ids = dbscan(pts, ClusteringParams(eps=8.0, min_points=4))
        assert len(np.unique(ids)) == 1 and ids[0] == 0

    def test_matches_bruteforce_on_random_sets(self):
        rng = np.random.default_rng(1)
        for trial in range(5):
            pts = rng.uniform(0, 40, (120, 3))
            eps = rng.uniform(3.0, 8.0)
            mp = int(rng.integers(3, 8))
            ids = dbscan(pts, ClusteringParams(eps=eps, min_points=mp))
            oracle = bruteforce_dbscan_partition(pts, eps, mp)
            # core-cluster structure must match exactly; border ties are broken
            # identically (nearest core) in both implementations
            assert partition_of(ids) == oracle, f"trial {trial}"

    def test_permutation_invariance(self):
        rng = np.random.default_rng(2)
        pts = rng.uniform(0, 30, (150, 3))
        ids = dbscan(pts, ClusteringParams(eps=5.0, min_points=5))
        perm = rng.permutation(len(pts))
        ids_shuffled = dbscan(pts[perm], ClusteringParams(eps=5.0, min_points=5))
        base = {frozenset(map(tuple, pts[list(m)])) for m in partition_of(ids)}
        shuf = {frozenset(map(tuple, pts[perm][list(m)])) for m in partition_of(ids_shuffled)}
        assert base == shuf


class TestFilterSmallClusters:
    def _cloud(self, sizes):
        rng = np.random.default_rng(3)
        chunks, ids = [], []
        for cid, size in enumerate(sizes):
            chunks.append(rng.normal(cid * 100, 1, (size, 3)))
            ids.extend([cid] * size)
        return PointCloud(np.vstack(chunks)), np.array(ids)

    def test_threshold_drops_small(self):
        cloud, ids = self._cloud([10, 500])
        kept, kept_ids = filter_small_clusters(cloud, ids, 100)
        assert len(kept) == 500
        assert set(kept_ids) == {1}

    def test_threshold_one_keeps_all(self):
        cloud, ids = self._cloud([10, 500])
        kept, _ = filter_small_clusters(cloud, ids, 1)
        assert len(kept) == 510

    def test_above_max_raises(self):
        cloud, ids = self._cloud([10, 500])
        with pytest.raises(EmptyAfterFilter):
            filter_small_clusters(cloud, ids, 501)

    def test_noise_removed_and_subset(self):
        cloud, ids = self._cloud([20, 30])
        ids[::7] = -1
        kept, _ = filter_small_clusters(cloud, ids, 1)
        assert len(kept) <= len(cloud)
        kept_set = {tuple(p) for p in kept.points}
        assert kept_set <= {tuple(p) for p in cloud.points}
        assert len(kept) == int((ids >= 0).sum())


class TestSplitLeftRight:
    def test_two_clusters(self):
        pts = np.vstack([np.random.default_rng(4).normal(-50, 1, (20, 3)),
                         np.random.default_rng(5).normal(50, 1, (20, 3))])
        ids = np.array([0] * 20 + [1] * 20)
        left, right = split_left_right(PointCloud(pts), ids)
        assert left == [0] and right == [1]

    def test_synthetic_cage_four_per_side(self, default_template):
        body = default_template.select(default_template.labels > 0)
        canonical, _ = canonicalize(body)
        ids = body.labels - 1  # branch labels as cluster ids
        left, right = split_left_right(canonical, ids)
        assert len(left) == 4 and len(right) == 4
        assert {*left, *right} == set(range(8))

    def test_one_side_empty_ok(self):
        pts = np.random.default_rng(6).normal(0, 1, (20, 3)) + np.array([50.0, 0, 0])
        # centered cloud: centroid at the cluster itself, so shift a decoy
        ids = np.zeros(20, dtype=int)
        cloud = PointCloud(np.vstack([pts, pts + np.array([10.0, 0, 0])]))
        ids = np.array([0] * 20 + [1] * 20)
        left, right = split_left_right(cloud, ids)
        assert sorted(left + right) == [0, 1]

    def test_ambiguous_side(self):
        pts = np.array([[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0],
                        [10.0, 0.0, 0.0], [-10.0, 0.0, 0.0]])
        ids = np.array([0, 0, 0, 1, 2])
        with pytest.raises(AmbiguousSide):
            split_left_right(PointCloud(pts), ids)


class TestSynthSternum:
    def test_bounding_box(self):
        zs = np.linspace(0.0, 60.0, 30)
        left = PointCloud(np.stack([np.full(30, -20.0), np.zeros(30), zs], axis=1))
        right = PointCloud(np.stack([np.full(30, 20.0), np.zeros(30), zs], axis=1))
        sternum = synth_sternum(left, right)
        assert abs(sternum.points[:, 0].min() + 20.0) < 1e-9
        assert abs(sternum.points[:, 0].max() - 20.0) < 1e-9
        assert abs(sternum.points[:, 2].min() - 0.0) < 1e-9
        assert abs(sternum.points[:, 2].max() - 60.0) < 1e-9
        assert np.abs(sternum.points[:, 1]).max() < 1e-9  # median y of inputs

    def test_single_point_sides(self):
        left = PointCloud(np.array([[-5.0, 0.0, 0.0]]))
        right = PointCloud(np.array([[5.0, 0.0, 0.0]]))
        sternum = synth_sternum(left, right)
        assert len(sternum) >= 1
        assert (sternum.labels == 0).all()

    def test_labels_zero(self):
        rng = np.random.default_rng(7)
        left = PointCloud(rng.normal(-30, 2, (40, 3)))
        right = PointCloud(rng.normal(30, 2, (40, 3)))
        assert (synth_sternum(left, right).labels == 0).all()

    def test_missing_side(self):
        with pytest.raises(MissingSide):
            synth_sternum(PointCloud(np.empty((0, 3))), PointCloud(np.ones((3, 3))))


class TestCoarseAlign:
    def test_identity(self, default_template):
        t = coarse_align(default_template, default_template)
        assert np.abs(t.rotation - np.eye(3)).max() < 1e-6
        assert np.abs(t.translation).max() < 1e-6

    def test_construct_then_recover(self, default_template):
        true = RigidTransform(rotation_about_z(np.deg2rad(12.0)), np.array([8.0, -5.0, 11.0]))
        subject = apply_transform(true, default_template)
        recovered = coarse_align(subject, default_template)
        # recovered maps subject back onto the template: the inverse of `true`
        assert np.abs(recovered.rotation - true.rotation.T).max() < 1e-3
        assert np.abs(recovered.apply_points(subject.points) - default_template.points).max() < 0.1

    def test_scaled_subject_improves_rms(self, default_template):
        pts = default_template.points
        scaled = PointCloud((pts - pts.mean(axis=0)) * 1.1 + pts.mean(axis=0) + np.array([15.0, 5.0, -8.0]),
                            default_template.labels.copy())
        t = coarse_align(scaled, default_template)
        before = sternum_rms(scaled, default_template)
        after = sternum_rms(scaled, default_template, t)
        assert after <= before

    def test_missing_sternum(self, default_template):
        body = default_template.select(default_template.labels > 0)
        with pytest.raises(MissingSternum):
            coarse_align(body, default_template)

    def test_never_degrades_untransformed_pose(self, default_template):
        rng = np.random.default_rng(8)
        noisy = PointCloud(default_template.points + rng.normal(0, 0.5, default_template.points.shape),
                           default_template.labels.copy())
        t = coarse_align(noisy, default_template)
        assert sternum_rms(noisy, default_template, t) <= sternum_rms(noisy, default_template) + 1e-12


class TestPipeline:
    def test_raw_subject_end_to_end(self, default_pair):
        template, subject, _ = default_pair
        # raw acquisition: no sternum, no labels, rigidly moved
        body = subject.select(subject.labels > 0)
        true = RigidTransform(rotation_about_z(np.deg2rad(9.0)), np.array([12.0, 6.0, -4.0]))
        raw = PointCloud(true.apply_points(body.points))
        cleaned, transform, report = preprocess_pipeline(raw, template)
        assert report["clusters"] == 8
        assert sorted(np.unique(cleaned.labels).tolist()) == list(range(9))
        # cleaned cloud is back in the template frame
        from scipy.spatial import cKDTree
        d, _ = cKDTree(template.points).query(cleaned.select(cleaned.labels > 0).points)
        assert np.sqrt(np.mean(d * d)) < 2.0
        assert "rotation" in report["coarse_transform"]
