"""Locally-rigid, globally-non-rigid registration of labeled point clouds.

Per graph node, a rigid transform is fit from its few geodesically-nearest
paired nodes; clouds are warped by blending the nearest nodes' transforms
with normalized inverse-distance weights (a convex combination, so an
all-equal field reproduces the rigid map exactly); waypoints are mapped by
re-fitting a rigid transform between the cloud points inside a sphere around
each waypoint and their warped counterparts.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import cKDTree

from ._validation import as_points, derive_rng
from .errors import DegenerateGeometry, InvalidParams, SparseNeighborhood
from .geometry import PointCloud, RigidTransform, apply_transform, fit_rigid
from .preprocess import coarse_align
from .skeleton import (DEFAULT_TEMPLATE_NODES, SkeletonGraph, SomParams,
                       build_template_graph, pair_nodes, som_fit)

DEGENERATE_DISTANCE = 1e-9

# Pipeline-internal SOM schedule. Both fits are refinements (the template
# graph is built from the template cloud; the subject fit continues from the
# template fit), so a gentle learning rate and a sub-edge neighborhood keep
# nodes from sliding along branches between the two fits, which is what the
# node pairing relies on.
PIPELINE_SOM_LR0 = 0.05
PIPELINE_SOM_SIGMA_EDGE_FRACTION = 0.5


@dataclass(frozen=True)
class RegisterParams:
    n_reg: int = 3              # paired nodes per local rigid fit
    n_blend: int = 3            # nearest nodes blended per warped point
    sphere_radius: float = 20.0  # mm, waypoint neighborhood
    blend_mode: str = "inverse"  # normalized inverse distance; "literal" for plain distance weights

    def validate(self) -> None:
        if self.n_reg < 3:
            raise InvalidParams("n_reg must be >= 3 (rigid fit needs 3 pairs)")
        if self.n_blend < 1:
            raise InvalidParams("n_blend must be >= 1")
        if not self.sphere_radius > 0:
            raise InvalidParams("sphere_radius must be > 0")
        if self.blend_mode not in ("inverse", "literal"):
            raise InvalidParams("blend_mode must be 'inverse' or 'literal'")


@dataclass
class LocalTransformField:
    """One rigid transform per graph node, anchored at the node positions."""

    rotations: np.ndarray      # (N, 3, 3)
    translations: np.ndarray   # (N, 3)
    node_positions: np.ndarray  # (N, 3)

    def __post_init__(self):
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(-1, 3, 3)
        self.translations = np.asarray(self.translations, dtype=np.float64).reshape(-1, 3)
        self.node_positions = as_points(self.node_positions, "node_positions")
        n = len(self.node_positions)
        if self.rotations.shape[0] != n or self.translations.shape[0] != n:
            raise InvalidParams("field arrays are inconsistent")
        eye = np.eye(3)
        rtr = np.einsum("nij,nik->njk", self.rotations, self.rotations)
        if np.abs(rtr - eye).max() > 1e-8:
            raise DegenerateGeometry("field contains a non-orthonormal rotation")

    def __len__(self) -> int:
        return len(self.node_positions)

    def transform_at(self, index: int) -> RigidTransform:
        return RigidTransform(self.rotations[index], self.translations[index])

    @classmethod
    def constant(cls, transform: RigidTransform, node_positions) -> "LocalTransformField":
        pts = as_points(node_positions)
        n = len(pts)
        return cls(np.tile(transform.rotation, (n, 1, 1)), np.tile(transform.translation, (n, 1)), pts)


def local_transforms(pairs: np.ndarray, graph_src: SkeletonGraph, graph_dst: SkeletonGraph,
                     params: RegisterParams | None = None) -> LocalTransformField:
    """Fit one rigid transform per source-graph node from its geodesically
    nearest paired nodes (the node itself included when paired).

    A collinear local configuration is widened one node at a time; if every
    paired node is in play and the fit is still degenerate, the geometry is
    genuinely rank-deficient and the error propagates.
    """
    params = params or RegisterParams()
    params.validate()
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if pairs.shape[0] < params.n_reg:
        raise InvalidParams(f"need at least n_reg={params.n_reg} pairs, got {pairs.shape[0]}")

    src_indices = pairs[:, 0]
    rotations = np.empty((len(graph_src), 3, 3))
    translations = np.empty((len(graph_src), 3))
    for node in range(len(graph_src)):
        ranked = np.argsort(graph_src.geodesic[node, src_indices], kind="stable")
        count = params.n_reg
        while True:
            chosen = pairs[ranked[:count]]
            try:
                t = fit_rigid(graph_src.nodes[chosen[:, 0]], graph_dst.nodes[chosen[:, 1]])
                break
            except DegenerateGeometry:
                if count >= pairs.shape[0]:
                    raise
                count += 1
        rotations[node] = t.rotation
        translations[node] = t.translation
    return LocalTransformField(rotations, translations, graph_src.nodes.copy())


def blend_weights(points, node_positions, n_blend: int = 3,
                  mode: str = "inverse") -> tuple[np.ndarray, np.ndarray]:
    """Blend weights over each point's ``n_blend`` nearest nodes.

    Returns ``(indices, weights)`` of shape ``(P, n_blend)``; weights sum to 1
    per point. Inverse mode uses normalized reciprocal distances and snaps to
    the coincident node exclusively when a distance falls under 1e-9; literal
    mode uses plain normalized distances.
    """
    pts = as_points(points)
    nodes = as_points(node_positions)
    k = min(n_blend, len(nodes))
    d2 = ((pts[:, None, :] - nodes[None, :, :]) ** 2).sum(axis=2)
    if k < d2.shape[1]:
        idx = np.argpartition(d2, k - 1, axis=1)[:, :k]
        # Stable ordering within the selection so results are reproducible.
        row = np.arange(len(pts))[:, None]
        order = np.argsort(d2[row, idx], axis=1, kind="stable")
        idx = idx[row, order]
    else:
        idx = np.argsort(d2, axis=1, kind="stable")
    row = np.arange(len(pts))[:, None]
    dist = np.sqrt(d2[row, idx])

    if mode == "inverse":
        snap = dist < DEGENERATE_DISTANCE
        weights = np.where(snap, 1.0, 1.0 / np.maximum(dist, DEGENERATE_DISTANCE))
        exclusive = snap.any(axis=1)
        weights[exclusive] = snap[exclusive].astype(float)
    elif mode == "literal":
        weights = dist.copy()
        flat = weights.sum(axis=1) < DEGENERATE_DISTANCE
        weights[flat] = 1.0  # all candidates coincide with the point
    else:
        raise InvalidParams("mode must be 'inverse' or 'literal'")
    weights = weights / weights.sum(axis=1, keepdims=True)
    return idx, weights


def warp_cloud(cloud: PointCloud, field: LocalTransformField,
               params: RegisterParams | None = None) -> PointCloud:
    """Warp each point by the convex combination of its nearest nodes'
    transforms; labels are preserved and output is index-aligned with input."""
    params = params or RegisterParams()
    params.validate()
    if len(field) == 0:
        raise InvalidParams("empty transform field")
    idx, weights = blend_weights(cloud.points, field.node_positions,
                                 params.n_blend, params.blend_mode)
    rot = field.rotations[idx]            # (P, k, 3, 3)
    tra = field.translations[idx]         # (P, k, 3)
    moved = np.einsum("pkij,pj->pki", rot, cloud.points) + tra
    warped = np.einsum("pk,pki->pi", weights, moved)
    return PointCloud(warped, cloud.labels.copy())


def map_waypoints(waypoints, cloud_src: PointCloud, cloud_warped: PointCloud,
                  params: RegisterParams | None = None) -> np.ndarray:
    """Map waypoints via rigid fits of sphere neighborhoods.

    For each waypoint, the source points within ``sphere_radius`` and their
    warped counterparts (clouds must be index-aligned) define a local rigid
    transform, which is applied to the waypoint. An undersized or degenerate
    neighborhood widens the radius by 1.5x up to three times before failing.
    """
    params = params or RegisterParams()
    params.validate()
    wps = as_points(waypoints, "waypoints")
    if len(cloud_src) != len(cloud_warped):
        raise InvalidParams("source and warped clouds must be index-aligned")
    tree = cKDTree(cloud_src.points)

    mapped = np.empty_like(wps)
    for i, wp in enumerate(wps):
        radius = params.sphere_radius
        transform = None
        for _ in range(4):  # initial radius plus three 1.5x expansions
            idx = tree.query_ball_point(wp, radius)
            if len(idx) >= 3:
                try:
                    transform = fit_rigid(cloud_src.points[idx], cloud_warped.points[idx])
                    break
                except DegenerateGeometry:
                    pass
            radius *= 1.5
        if transform is None:
            raise SparseNeighborhood(
                f"waypoint {i} has no usable neighborhood within {radius / 1.5:.1f} mm",
                waypoint=i, radius_mm=radius / 1.5)
        mapped[i] = transform.apply_points(wp.reshape(1, 3))[0]
    return mapped


@dataclass
class PipelineResult:
    warped_template: PointCloud
    mapped_waypoints: np.ndarray
    report: "RegistrationReport"
    coarse_transform: RigidTransform
    graph_source: SkeletonGraph
    graph_target: SkeletonGraph
    field: LocalTransformField


def register_pipeline(template: PointCloud, subject: PointCloud, waypoints,
                      truth_waypoints=None, *,
                      graph_nodes: int = DEFAULT_TEMPLATE_NODES,
                      som_params: SomParams | None = None,
                      reg_params: RegisterParams | None = None,
                      seed: int = 0,
                      method_name: str = "dense") -> PipelineResult:
    """End-to-end path transfer from a labeled template to a subject cloud.

    Stages: coarse sternum alignment of the subject into the template frame;
    template graph construction; SOM fit to the template cloud, then a second
    SOM fit (initialized from the first) to the aligned subject; identity node
    pairing; local rigid field; cloud warp; sphere-based waypoint mapping. The
    mapped waypoints are returned in the original subject frame. Stage
    residuals and timings land in the report; per-waypoint errors appear when
    ``truth_waypoints`` (subject-frame ground truth) is given.
    """
    from .metrics import RegistrationReport  # local import to avoid a cycle

    reg_params = reg_params or RegisterParams()
    reg_params.validate()
    som_base = som_params or SomParams()
    wps = as_points(waypoints, "waypoints")

    stages: dict[str, float] = {}
    residuals: dict[str, float] = {}

    t0 = time.perf_counter()
    coarse = coarse_align(subject, template)
    aligned_subject = apply_transform(coarse, subject)
    stages["coarse_align_ms"] = _ms_since(t0)

    t0 = time.perf_counter()
    graph_template = build_template_graph(template, graph_nodes)
    stages["build_graph_ms"] = _ms_since(t0)

    t0 = time.perf_counter()
    som_seed = int(derive_rng(seed, "register.som").integers(0, 2**31 - 1))
    if som_params is None:
        som_eff = replace(som_base, lr0=PIPELINE_SOM_LR0,
                          sigma0=PIPELINE_SOM_SIGMA_EDGE_FRACTION * graph_template.mean_edge_length(),
                          rng_seed=som_seed)
    else:
        som_eff = replace(som_params, rng_seed=som_seed)
    # One sampling sequence for both fits: identical clouds then produce
    # near-identical node trajectories.
    graph_source = som_fit(graph_template, template, som_eff)
    graph_target = som_fit(graph_source, aligned_subject, som_eff)
    stages["som_fit_ms"] = _ms_since(t0)
    residuals["som_source_rms_mm"] = _quantization_rms(graph_source, template.points)
    residuals["som_target_rms_mm"] = _quantization_rms(graph_target, aligned_subject.points)

    t0 = time.perf_counter()
    pairs = pair_nodes(graph_source, graph_target)
    field = local_transforms(pairs, graph_source, graph_target, reg_params)
    warped = warp_cloud(template, field, reg_params)
    stages["warp_ms"] = _ms_since(t0)
    residuals["node_fit_rms_mm"] = float(np.sqrt(np.mean(
        np.sum((graph_target.nodes - graph_source.nodes) ** 2, axis=1))))

    t0 = time.perf_counter()
    mapped_aligned = map_waypoints(wps, template, warped, reg_params)
    mapped = coarse.inverse().apply_points(mapped_aligned)
    stages["map_waypoints_ms"] = _ms_since(t0)

    errors = None
    if truth_waypoints is not None:
        truth = as_points(truth_waypoints, "truth_waypoints")
        errors = np.linalg.norm(mapped - truth, axis=1)

    report = RegistrationReport.build(
        method=method_name,
        waypoint_errors_mm=errors,
        stage_timings_ms=stages,
        stage_residuals=residuals,
        params={"graph_nodes": graph_nodes, "n_reg": reg_params.n_reg,
                "n_blend": reg_params.n_blend, "sphere_radius": reg_params.sphere_radius,
                "blend_mode": reg_params.blend_mode, "som_iterations": som_eff.iterations,
                "som_lr0": som_eff.lr0, "som_sigma0": som_eff.sigma0, "seed": seed},
    )
    return PipelineResult(warped, mapped, report, coarse, graph_source, graph_target, field)


def _ms_since(t0: float) -> float:
    return (time.perf_counter() - t0) * 1000.0


def _quantization_rms(graph: SkeletonGraph, pts: np.ndarray) -> float:
    d, _ = cKDTree(graph.nodes).query(pts, k=1)
    return float(np.sqrt(np.mean(d * d)))
