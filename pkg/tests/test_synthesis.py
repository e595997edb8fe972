import numpy as np
import pytest

from costalign.errors import InvalidParams, MissingBranch
from costalign.geometry import PointCloud
from costalign.synthesis import (AnatomyParams, DeformParams, generate_pair,
                                 params_for_profile, waypoints_from_cloud)

from conftest import random_rotation


def test_zero_deform_subject_equals_template(default_pair):
    template, subject, truth = default_pair
    assert np.array_equal(template.points, subject.points)
    assert np.array_equal(template.labels, subject.labels)
    gap = np.linalg.norm(truth.waypoints_template - truth.waypoints_subject, axis=1)
    assert gap.max() == 0.0


def test_pure_translation_deform():
    offset = (4.0, -3.0, 2.5)
    params = AnatomyParams(rng_seed=11, deform=DeformParams(offset=offset))
    template, subject, truth = generate_pair(params)
    assert np.array_equal(subject.points, template.points + np.asarray(offset))
    assert np.array_equal(truth.waypoints_subject, truth.waypoints_template + np.asarray(offset))


def test_determinism_bit_identical():
    params = AnatomyParams(rng_seed=7)
    t1, s1, g1 = generate_pair(params)
    t2, s2, g2 = generate_pair(params)
    assert t1.points.tobytes() == t2.points.tobytes()
    assert s1.points.tobytes() == s2.points.tobytes()
    assert g1.waypoints_template.tobytes() == g2.waypoints_template.tobytes()
    assert g1.waypoints_subject.tobytes() == g2.waypoints_subject.tobytes()


def test_labels_partition_cloud(default_pair):
    template, subject, _ = default_pair
    assert (template.labels >= 0).all()
    assert set(np.unique(template.labels)) == set(range(9))
    assert (subject.labels >= 0).all()


def test_outliers_are_appended_and_labeled():
    params = AnatomyParams(rng_seed=3, deform=DeformParams(outlier_fraction=0.1))
    template, subject, truth = generate_pair(params)
    n_extra = int(np.floor(0.1 * len(template)))
    assert len(subject) == len(template) + n_extra
    assert (subject.labels[len(template):] >= 1).all()
    # correspondence stays the identity over template indices
    assert np.array_equal(truth.correspondence, np.arange(len(template)))


def test_default_waypoint_protocol_counts(default_pair):
    _, _, truth = default_pair
    assert truth.waypoints_template.shape == (18, 3)


def test_waypoints_between_parent_branches(default_pair):
    template, _, truth = default_pair
    params = AnatomyParams()
    for wp in truth.waypoints_template:
        dists = []
        for lab in range(1, 9):
            pts = template.branch(lab).points
            dists.append(np.min(np.linalg.norm(pts - wp, axis=1)))
        dists = np.sort(np.asarray(dists))
        # the two parents are the nearest branches and the waypoint keeps a
        # clear margin from both
        assert dists[0] >= 0.25 * params.branch_spacing
        assert dists[1] >= 0.25 * params.branch_spacing


def test_two_parallel_branches_midplane():
    xs = np.linspace(0.0, 50.0, 40)
    a = np.stack([xs, np.zeros(40), np.zeros(40)], axis=1)
    b = np.stack([xs, np.zeros(40), np.full(40, 10.0)], axis=1)
    cloud = PointCloud(np.vstack([a, b]),
                       np.concatenate([np.ones(40, dtype=int), np.full(40, 2, dtype=int)]))
    wps = waypoints_from_cloud(cloud)
    assert wps.shape == (2, 3)
    assert np.abs(wps[:, 2] - 5.0).max() < 1e-9


def test_generator_self_consistency(default_pair):
    template, _, truth = default_pair
    wps = waypoints_from_cloud(template)
    assert np.abs(wps - truth.waypoints_template).max() < 1e-6


def test_waypoint_rotation_equivariance(default_pair):
    template, _, _ = default_pair
    wps = waypoints_from_cloud(template)
    rot = random_rotation(np.random.default_rng(21))
    rotated_cloud = PointCloud(template.points @ rot.T, template.labels.copy())
    wps_rot = waypoints_from_cloud(rotated_cloud)
    expected = wps @ rot.T
    # match as sets: axis-sign conventions may permute the output order
    used = set()
    for w in wps_rot:
        d = np.linalg.norm(expected - w, axis=1)
        j = int(np.argmin(d))
        assert d[j] < 1e-9
        assert j not in used
        used.add(j)


def test_missing_branch_raises():
    cloud = PointCloud(np.random.default_rng(0).normal(0, 5, (30, 3)),
                       np.ones(30, dtype=int))
    with pytest.raises(MissingBranch):
        waypoints_from_cloud(cloud)


@pytest.mark.parametrize("bad", [
    dict(branch_count=3),
    dict(branch_count=0),
    dict(branch_length=-1.0),
    dict(points_per_branch=5),
    dict(deform=DeformParams(global_scale=0.0)),
    dict(deform=DeformParams(outlier_fraction=0.6)),
])
def test_invalid_params(bad):
    with pytest.raises(InvalidParams):
        generate_pair(AnatomyParams(rng_seed=0, **bad))


def test_unknown_profile_rejected():
    with pytest.raises(InvalidParams):
        params_for_profile(0, "nope")


def test_profiles_change_subject():
    t_mild, s_mild, truth = generate_pair(params_for_profile(5, "mild"))
    assert not np.array_equal(t_mild.points, s_mild.points)
    gap = np.linalg.norm(truth.waypoints_subject - truth.waypoints_template, axis=1)
    assert gap.max() > 1.0
