import numpy as np
import pytest

from costalign.errors import DegenerateGeometry, EmptyInput, PairMismatch
from costalign.geometry import (PointCloud, RigidTransform, apply_transform, centroid,
                                fit_rigid, pca_axes, rigid_residual)

from conftest import random_rigid, random_rotation, rotation_about_z


class TestCentroid:
    def test_midpoint(self):
        assert np.allclose(centroid(np.array([[0, 0, 0], [2, 0, 0]])), [1, 0, 0])

    def test_singleton(self):
        assert np.allclose(centroid(np.array([[1.0, 1.0, 1.0]])), [1, 1, 1])

    def test_against_bruteforce_sum(self):
        rng = np.random.default_rng(0)
        pts = rng.uniform(0, 1, (100, 3))
        # independent oracle: plain accumulation
        acc = np.zeros(3)
        for p in pts:
            acc = acc + p
        assert np.abs(centroid(pts) - acc / 100).max() < 1e-12

    def test_empty_raises(self):
        with pytest.raises(EmptyInput):
            centroid(np.empty((0, 3)))


class TestFitRigid:
    def test_identity_on_equal_clouds(self):
        rng = np.random.default_rng(1)
        pts = rng.normal(0, 10, (20, 3))
        t = fit_rigid(pts, pts)
        assert np.abs(t.rotation - np.eye(3)).max() < 1e-12
        assert np.abs(t.translation).max() < 1e-12
        assert rigid_residual(t, pts, pts) < 1e-18

    def test_construct_then_recover(self):
        rng = np.random.default_rng(2)
        src = rng.normal(0, 10, (15, 3))
        rot = rotation_about_z(np.deg2rad(30.0))
        tra = np.array([5.0, 0.0, 0.0])
        dst = src @ rot.T + tra
        t = fit_rigid(src, dst)
        assert np.abs(t.rotation - rot).max() < 1e-9
        assert np.abs(t.translation - tra).max() < 1e-9

    def test_beats_random_search_on_noisy_pairs(self):
        rng = np.random.default_rng(3)
        src = rng.normal(0, 10, (4, 3))
        dst = src @ rotation_about_z(0.3).T + np.array([1.0, -2.0, 0.5])
        dst = dst + rng.normal(0, 0.5, dst.shape)
        best = rigid_residual(fit_rigid(src, dst), src, dst)
        for _ in range(1000):
            cand = random_rigid(rng, translation_scale=5.0)
            assert best <= rigid_residual(cand, src, dst) + 1e-12

    def test_count_mismatch(self):
        with pytest.raises(PairMismatch):
            fit_rigid(np.zeros((4, 3)), np.zeros((5, 3)))

    def test_collinear_degenerate(self):
        line = np.stack([np.arange(5.0), np.zeros(5), np.zeros(5)], axis=1)
        with pytest.raises(DegenerateGeometry):
            fit_rigid(line, line + 1.0)

    def test_too_few_points(self):
        with pytest.raises(DegenerateGeometry):
            fit_rigid(np.zeros((2, 3)), np.zeros((2, 3)))

    def test_left_invariance(self):
        rng = np.random.default_rng(4)
        src = rng.normal(0, 10, (12, 3))
        dst = src @ rotation_about_z(0.4).T + np.array([3.0, 1.0, -2.0]) + rng.normal(0, 0.2, (12, 3))
        r = random_rotation(np.random.default_rng(5))
        base = fit_rigid(src, dst)
        conj = fit_rigid(src @ r.T, dst @ r.T)
        # conjugated transform, identical residual
        assert np.abs(conj.rotation - r @ base.rotation @ r.T).max() < 1e-9
        assert abs(rigid_residual(base, src, dst)
                   - rigid_residual(conj, src @ r.T, dst @ r.T)) < 1e-9


class TestApply:
    def test_identity(self):
        cloud = PointCloud(np.arange(12.0).reshape(4, 3), np.array([0, 1, 2, 3]))
        out = apply_transform(RigidTransform.identity(), cloud)
        assert np.array_equal(out.points, cloud.points)
        assert np.array_equal(out.labels, cloud.labels)

    def test_pure_translation(self):
        t = RigidTransform(np.eye(3), np.array([1.0, 2.0, 3.0]))
        out = t.apply_points(np.array([[0.0, 0.0, 0.0]]))
        assert np.allclose(out, [[1, 2, 3]])

    def test_composition_matches_composed_matrix(self):
        rng = np.random.default_rng(6)
        a = random_rigid(rng)
        b = random_rigid(rng)
        cloud = PointCloud(rng.normal(0, 10, (30, 3)))
        two_step = apply_transform(a, apply_transform(b, cloud))
        one_step = apply_transform(a.compose(b), cloud)
        assert np.abs(two_step.points - one_step.points).max() < 1e-9

    def test_preserves_pairwise_distances(self):
        rng = np.random.default_rng(7)
        pts = rng.normal(0, 20, (40, 3))
        moved = random_rigid(rng).apply_points(pts)
        d0 = np.linalg.norm(pts[:, None] - pts[None], axis=2)
        d1 = np.linalg.norm(moved[:, None] - moved[None], axis=2)
        assert np.abs(d0 - d1).max() < 1e-9

    def test_labels_preserved(self):
        rng = np.random.default_rng(8)
        cloud = PointCloud(rng.normal(0, 5, (10, 3)), np.arange(10) % 3)
        out = apply_transform(random_rigid(rng), cloud)
        assert np.array_equal(out.labels, cloud.labels)


class TestRigidTransform:
    def test_rejects_non_orthonormal(self):
        with pytest.raises(DegenerateGeometry):
            RigidTransform(np.eye(3) * 1.1, np.zeros(3))

    def test_rejects_reflection(self):
        with pytest.raises(DegenerateGeometry):
            RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))

    def test_inverse_roundtrip(self):
        t = random_rigid(np.random.default_rng(9))
        pts = np.random.default_rng(10).normal(0, 10, (5, 3))
        back = t.inverse().apply_points(t.apply_points(pts))
        assert np.abs(back - pts).max() < 1e-9


class TestPcaAxes:
    def test_points_on_x_axis(self):
        pts = np.stack([np.linspace(0, 10, 20), np.zeros(20), np.zeros(20)], axis=1)
        axes, evals = pca_axes(pts)
        assert abs(abs(axes[0, 0]) - 1.0) < 1e-9
        assert evals[1] < 1e-12 and evals[2] < 1e-12

    def test_ellipsoid_ordering_and_ratios(self):
        rng = np.random.default_rng(11)
        pts = rng.normal(0, 1, (20000, 3)) * np.array([10.0, 5.0, 1.0])
        axes, evals = pca_axes(pts)
        assert abs(axes[0, 0]) > 0.99  # first axis along x
        assert abs(axes[1, 1]) > 0.99
        ratios = evals / evals[0]
        assert abs(ratios[1] - 0.25) < 0.025
        assert abs(ratios[2] - 0.01) < 0.01 * 0.5 + 0.005

    def test_rotation_similarity(self):
        rng = np.random.default_rng(12)
        pts = rng.normal(0, 1, (500, 3)) * np.array([8.0, 3.0, 1.0])
        axes0, evals0 = pca_axes(pts)
        r = random_rotation(np.random.default_rng(13))
        axes1, evals1 = pca_axes(pts @ r.T)
        assert np.abs(evals0 - evals1).max() < 1e-9
        for i in range(3):
            dot = abs(float(axes1[i] @ (r @ axes0[i])))
            assert abs(dot - 1.0) < 1e-9  # same axis up to sign

    def test_eigenvalues_nonneg_and_match_trace(self):
        rng = np.random.default_rng(14)
        pts = rng.normal(0, 4, (100, 3))
        _, evals = pca_axes(pts)
        centered = pts - pts.mean(axis=0)
        trace = np.trace(centered.T @ centered / len(pts))
        assert (evals >= 0).all()
        assert abs(evals.sum() - trace) < 1e-9

    def test_right_handed(self):
        rng = np.random.default_rng(15)
        for _ in range(10):
            axes, _ = pca_axes(rng.normal(0, 1, (50, 3)) * np.array([5, 2, 1]))
            assert abs(np.linalg.det(axes) - 1.0) < 1e-9

    def test_coincident_points_degenerate(self):
        with pytest.raises(DegenerateGeometry):
            pca_axes(np.ones((5, 3)))
