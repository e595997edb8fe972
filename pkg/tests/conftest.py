"""Shared fixtures and scenario builders."""

from __future__ import annotations

import numpy as np
import pytest

from costalign.geometry import PointCloud, RigidTransform
from costalign.skeleton import SkeletonGraph, geodesic_matrix
from costalign.synthesis import AnatomyParams, generate_pair


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation from a normalized quaternion."""
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def random_rigid(rng: np.random.Generator, translation_scale: float = 30.0) -> RigidTransform:
    return RigidTransform(random_rotation(rng), rng.uniform(-translation_scale, translation_scale, 3))


def rotation_about_z(angle_rad: float) -> np.ndarray:
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@pytest.fixture(scope="session")
def default_pair():
    """One template/subject/truth triple at zero deformation (seed 7)."""
    return generate_pair(AnatomyParams(rng_seed=7))


@pytest.fixture(scope="session")
def default_template(default_pair):
    return default_pair[0]


def two_branch_stress(seed: int, separation: float = 40.0, chain_gap: float = 4.0,
                      n_points: int = 160) -> tuple[PointCloud, SkeletonGraph]:
    """Two parallel branch clouds with an initial graph lying between them.

    The graph's two chains sit ``chain_gap`` apart midway between the clouds
    and are joined through a long stem, so their geodesic separation is large
    while their spatial separation is tiny: a spatial (Euclidean) neighborhood
    couples them, the geodesic one does not.
    """
    rng = np.random.default_rng(seed)
    xs = rng.uniform(0.0, 80.0, n_points)
    jput = rng.normal(0.0, 1.0, (n_points, 2))
    cloud_a = np.stack([xs, jput[:, 0], jput[:, 1]], axis=1)
    xs_b = rng.uniform(0.0, 80.0, n_points)
    jb = rng.normal(0.0, 1.0, (n_points, 2))
    cloud_b = np.stack([xs_b, jb[:, 0], separation + jb[:, 1]], axis=1)
    cloud = PointCloud(np.vstack([cloud_a, cloud_b]),
                       np.concatenate([np.ones(n_points, dtype=np.int64),
                                       np.full(n_points, 2, dtype=np.int64)]))

    z_mid = separation / 2.0
    n_chain = 12
    chain_x = np.linspace(0.0, 80.0, n_chain)
    chain_a = np.stack([chain_x, np.zeros(n_chain), np.full(n_chain, z_mid - chain_gap / 2)], axis=1)
    chain_b = np.stack([chain_x, np.zeros(n_chain), np.full(n_chain, z_mid + chain_gap / 2)], axis=1)
    n_stem = 8
    stem = np.stack([np.linspace(-30.0, -4.0, n_stem), np.zeros(n_stem),
                     np.full(n_stem, z_mid)], axis=1)

    nodes = np.vstack([stem, chain_a, chain_b])
    branch_ids = np.concatenate([np.zeros(n_stem, dtype=np.int64),
                                 np.ones(n_chain, dtype=np.int64),
                                 np.full(n_chain, 2, dtype=np.int64)])
    edges = []
    edges.extend((i, i + 1) for i in range(n_stem - 1))
    a0, b0 = n_stem, n_stem + n_chain
    edges.append((0, a0))            # chain A hangs off the stem's far end
    edges.extend((a0 + i, a0 + i + 1) for i in range(n_chain - 1))
    edges.append((n_stem - 1, b0))   # chain B off the near end: long geodesic between chains
    edges.extend((b0 + i, b0 + i + 1) for i in range(n_chain - 1))
    edge_arr = np.asarray(edges, dtype=np.int64)
    graph = SkeletonGraph(nodes, branch_ids, edge_arr, geodesic_matrix(nodes, edge_arr))
    return cloud, graph


def count_misassigned(graph: SkeletonGraph, cloud: PointCloud) -> int:
    """Branch nodes whose nearest cloud point carries the other branch label."""
    wrong = 0
    for pos, bid in zip(graph.nodes, graph.branch_ids):
        if bid == 0:
            continue
        d2 = np.sum((cloud.points - pos) ** 2, axis=1)
        if int(cloud.labels[int(np.argmin(d2))]) != int(bid):
            wrong += 1
    return wrong
