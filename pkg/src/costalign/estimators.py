"""Scikit-learn style estimators wrapping the functional registration and
shape-repair APIs.

Registration estimators follow ``fit(X, y)`` with X the source (template)
cloud and y the target (subject) cloud; ``transform`` maps source-space
points into the target frame and ``map_path`` maps planned waypoints via the
sphere-neighborhood local fits. Inputs may be PointCloud objects, ``(N, 3)``
arrays, or ``(N, 4)`` arrays whose last column is the integer label.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import as_mask
from .baselines import CpdParams, IcpParams, cpd_nonrigid, icp
from .errors import InvalidParams
from .geometry import PointCloud
from .registration import RegisterParams, map_waypoints, register_pipeline
from .shape_repair import build_manifold, repair, shape_valid, train_embedding
from .skeleton import DEFAULT_TEMPLATE_NODES, SomParams


def as_point_cloud(X, name: str = "X") -> PointCloud:
    """Validate estimator input into a PointCloud (labels optional)."""
    if isinstance(X, PointCloud):
        return X
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] not in (3, 4):
        raise InvalidParams(f"{name} must be a PointCloud or (N, 3|4) array, got shape {arr.shape}")
    if arr.shape[1] == 4:
        return PointCloud(arr[:, :3], arr[:, 3].astype(np.int64))
    return PointCloud(arr)


class SkeletonGraphRegistrar(BaseEstimator):
    """Dense skeleton-graph non-rigid registration as a fit/transform estimator.

    ``fit(X, y)`` registers the labeled source cloud X onto the subject cloud
    y; afterwards ``transform`` warps source-space points and ``map_path``
    maps waypoints into the subject frame.
    """

    def __init__(self, graph_nodes: int = DEFAULT_TEMPLATE_NODES, som_iterations: int = 30,
                 som_lr: float | None = None, som_lr_decay: float = 0.9,
                 som_sigma: float | None = None, som_sigma_decay: float = 0.9,
                 n_local_pairs: int = 3, n_blend: int = 3,
                 sphere_radius_mm: float = 20.0, blend_mode: str = "inverse",
                 random_state: int = 0):
        self.graph_nodes = graph_nodes
        self.som_iterations = som_iterations
        self.som_lr = som_lr
        self.som_lr_decay = som_lr_decay
        self.som_sigma = som_sigma
        self.som_sigma_decay = som_sigma_decay
        self.n_local_pairs = n_local_pairs
        self.n_blend = n_blend
        self.sphere_radius_mm = sphere_radius_mm
        self.blend_mode = blend_mode
        self.random_state = random_state

    def _params(self) -> tuple[SomParams | None, RegisterParams]:
        # som_lr None: keep the pipeline's internal refinement schedule.
        som = None
        if self.som_lr is not None:
            som = SomParams(iterations=self.som_iterations, lr0=self.som_lr,
                            lr_decay=self.som_lr_decay, sigma0=self.som_sigma,
                            sigma_decay=self.som_sigma_decay)
        reg = RegisterParams(n_reg=self.n_local_pairs, n_blend=self.n_blend,
                             sphere_radius=self.sphere_radius_mm, blend_mode=self.blend_mode)
        return som, reg

    def fit(self, X, y):
        source = as_point_cloud(X, "X")
        target = as_point_cloud(y, "y")
        som, reg = self._params()
        # Waypoints are mapped lazily through map_path; the pipeline still
        # needs a placeholder list, so use the source centroid.
        placeholder = source.points.mean(axis=0)[None, :]
        result = register_pipeline(source, target, placeholder,
                                   graph_nodes=self.graph_nodes, som_params=som,
                                   reg_params=reg, seed=self.random_state)
        self.source_ = source
        self.result_ = result
        self.warped_source_ = result.warped_template
        self.coarse_transform_ = result.coarse_transform
        self.field_ = result.field
        self.report_ = result.report
        return self

    def transform(self, X) -> np.ndarray:
        self._check_fitted()
        from .registration import warp_cloud
        cloud = as_point_cloud(X, "X")
        _, reg = self._params()
        warped = warp_cloud(cloud, self.field_, reg)
        return self.coarse_transform_.inverse().apply_points(warped.points)

    def map_path(self, waypoints) -> np.ndarray:
        self._check_fitted()
        _, reg = self._params()
        mapped = map_waypoints(waypoints, self.source_, self.warped_source_, reg)
        return self.coarse_transform_.inverse().apply_points(mapped)

    def _check_fitted(self):
        if not hasattr(self, "result_"):
            raise InvalidParams("estimator is not fitted")


class RigidIcpRegistrar(BaseEstimator):
    """Classic point-to-point ICP behind the same fit/transform surface."""

    def __init__(self, max_iterations: int = 100, convergence_tol: float = 1e-4,
                 max_pair_distance: float = np.inf):
        self.max_iterations = max_iterations
        self.convergence_tol = convergence_tol
        self.max_pair_distance = max_pair_distance

    def fit(self, X, y):
        source = as_point_cloud(X, "X")
        target = as_point_cloud(y, "y")
        result = icp(source.points, target.points,
                     IcpParams(self.max_iterations, self.convergence_tol, self.max_pair_distance))
        self.transform_ = result.transform
        self.rms_history_ = result.rms_history
        self.n_iterations_ = result.iterations
        self.converged_ = result.converged
        return self

    def transform(self, X) -> np.ndarray:
        if not hasattr(self, "transform_"):
            raise InvalidParams("estimator is not fitted")
        return self.transform_.apply_points(as_point_cloud(X, "X").points)

    def map_path(self, waypoints) -> np.ndarray:
        return self.transform(np.asarray(waypoints, dtype=np.float64).reshape(-1, 3))


class CpdRegistrar(BaseEstimator):
    """Non-rigid coherent point drift behind the same fit/transform surface."""

    def __init__(self, beta: float = 20.0, lam: float = 2.0, outlier_w: float = 0.1,
                 max_iterations: int = 100, tol: float = 1e-6,
                 sphere_radius_mm: float = 20.0):
        self.beta = beta
        self.lam = lam
        self.outlier_w = outlier_w
        self.max_iterations = max_iterations
        self.tol = tol
        self.sphere_radius_mm = sphere_radius_mm

    def fit(self, X, y):
        source = as_point_cloud(X, "X")
        target = as_point_cloud(y, "y")
        result = cpd_nonrigid(source, target,
                              CpdParams(self.beta, self.lam, self.outlier_w,
                                        self.max_iterations, self.tol))
        self.source_ = source
        self.result_ = result
        self.displaced_ = result.displaced
        self.objective_history_ = result.objective_history
        return self

    def transform(self, X) -> np.ndarray:
        if not hasattr(self, "result_"):
            raise InvalidParams("estimator is not fitted")
        return self.result_.displace(as_point_cloud(X, "X").points)

    def map_path(self, waypoints) -> np.ndarray:
        if not hasattr(self, "result_"):
            raise InvalidParams("estimator is not fitted")
        reg = RegisterParams(sphere_radius=self.sphere_radius_mm)
        return map_waypoints(waypoints, self.source_, self.displaced_, reg)


class ShapeRepairer(BaseEstimator, TransformerMixin):
    """Mask repair estimator: fit on plausible masks, transform defective ones.

    ``fit(X)`` trains the latent embedding on an ``(n, H, W)`` stack (or mask
    list) and rejection-samples the valid manifold; ``transform`` repairs each
    mask; ``predict`` runs the shape validity test directly.
    """

    def __init__(self, latent_dim: int = 32, manifold_samples: int = 10_000,
                 neighbors: int = 1, secondary_area_frac: float = 0.05,
                 random_state: int = 0):
        self.latent_dim = latent_dim
        self.manifold_samples = manifold_samples
        self.neighbors = neighbors
        self.secondary_area_frac = secondary_area_frac
        self.random_state = random_state

    def fit(self, X, y=None):
        masks = [as_mask(m) for m in X]
        self.embedding_ = train_embedding(masks, self.latent_dim)
        self.manifold_ = build_manifold(self.embedding_, masks, self.manifold_samples,
                                        rng_seed=self.random_state,
                                        secondary_area_frac=self.secondary_area_frac)
        return self

    def transform(self, X) -> np.ndarray:
        if not hasattr(self, "manifold_"):
            raise InvalidParams("estimator is not fitted")
        return np.stack([repair(as_mask(m), self.embedding_, self.manifold_, self.neighbors)
                         for m in X])

    def predict(self, X) -> np.ndarray:
        return np.array([shape_valid(as_mask(m), self.secondary_area_frac) for m in X])
