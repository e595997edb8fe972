"""Reference registration methods: rigid ICP, non-rigid coherent point drift,
and a sparse-graph variant of the dense pipeline.

All baselines consume and emit the same cloud and waypoint formats as the
dense pipeline, so benchmark rows are directly comparable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from ._validation import as_points
from .errors import DegenerateGeometry, InvalidParams, NumericalFailure
from .geometry import PointCloud, RigidTransform, fit_rigid
from .registration import PipelineResult, RegisterParams, register_pipeline
from .skeleton import SomParams

SPARSE_GRAPH_NODES = 35  # roughly a seventh of the dense template


@dataclass(frozen=True)
class IcpParams:
    max_iterations: int = 100
    convergence_tol: float = 1e-4   # mm change in RMS
    max_pair_distance: float = np.inf

    def validate(self) -> None:
        if self.max_iterations < 1:
            raise InvalidParams("max_iterations must be >= 1")
        if not self.convergence_tol > 0:
            raise InvalidParams("convergence_tol must be > 0")


@dataclass
class IcpResult:
    transform: RigidTransform
    rms_history: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


def icp(source, target, params: IcpParams | None = None) -> IcpResult:
    """Point-to-point ICP: alternate nearest-neighbor pairing with a full
    rigid refit from the original source until the RMS change drops below the
    tolerance. Without a pair-distance gate the RMS trace is non-increasing.
    """
    params = params or IcpParams()
    params.validate()
    src = as_points(source, "source")
    dst = as_points(target, "target")
    if src.shape[0] < 3 or dst.shape[0] < 3:
        raise DegenerateGeometry("ICP needs at least 3 points per cloud")

    tree = cKDTree(dst)
    transform = RigidTransform.identity()
    history: list[float] = []
    converged = False
    iterations = 0

    for iterations in range(1, params.max_iterations + 1):
        moved = transform.apply_points(src)
        d, nn = tree.query(moved, k=1)
        keep = d <= params.max_pair_distance
        if int(keep.sum()) < 3:
            raise DegenerateGeometry("too few pairs after distance gating",
                                     kept=int(keep.sum()))
        transform = fit_rigid(src[keep], dst[nn[keep]])
        resid = transform.apply_points(src[keep]) - dst[nn[keep]]
        rms = float(np.sqrt(np.mean(np.sum(resid * resid, axis=1))))
        if history and abs(history[-1] - rms) < params.convergence_tol:
            history.append(rms)
            converged = True
            break
        history.append(rms)

    return IcpResult(transform=transform, rms_history=history,
                     iterations=iterations, converged=converged)


@dataclass(frozen=True)
class CpdParams:
    beta: float = 20.0        # Gaussian kernel width, mm
    lam: float = 2.0          # regularization weight
    outlier_w: float = 0.1
    max_iterations: int = 100
    tol: float = 1e-6         # relative objective change

    def validate(self) -> None:
        if not self.beta > 0 or not self.lam > 0:
            raise InvalidParams("beta and lam must be > 0")
        if not 0.0 <= self.outlier_w < 1.0:
            raise InvalidParams("outlier_w must be in [0, 1)")
        if self.max_iterations < 1:
            raise InvalidParams("max_iterations must be >= 1")


@dataclass
class CpdResult:
    displaced: PointCloud
    objective_history: list[float] = field(default_factory=list)
    sigma2: float = 0.0
    iterations: int = 0
    converged: bool = False
    kernel_weights: np.ndarray | None = None  # (M, 3) coefficients of the motion field
    source_points: np.ndarray | None = None
    beta: float = 0.0

    def displace(self, points) -> np.ndarray:
        """Evaluate the learned smooth displacement at arbitrary points."""
        pts = as_points(points)
        g = _gaussian_kernel(pts, self.source_points, self.beta)
        return pts + g @ self.kernel_weights


def _gaussian_kernel(a: np.ndarray, b: np.ndarray, beta: float) -> np.ndarray:
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    return np.exp(-d2 / (2.0 * beta * beta))


def cpd_nonrigid(source, target, params: CpdParams | None = None) -> CpdResult:
    """Non-rigid coherent point drift: EM over a Gaussian mixture centered on
    the moving source, with motion restricted to a Gaussian-kernel field.

    The recorded objective is the penalized negative log-likelihood (mixture
    NLL plus ``lam/2 * tr(W^T G W)``); with exact conditional M-steps it is
    non-increasing up to roundoff. A numerically singular system is retried
    with growing jitter on the kernel before giving up.
    """
    params = params or CpdParams()
    params.validate()
    y = as_points(source, "source")
    x = as_points(target, "target")
    if y.shape[0] < 3 or x.shape[0] < 3:
        raise InvalidParams("CPD needs at least 3 points per cloud")

    m, n = y.shape[0], x.shape[0]
    dim = 3
    g = _gaussian_kernel(y, y, params.beta)
    w_field = np.zeros((m, dim))
    dist2 = ((x[None, :, :] - y[:, None, :]) ** 2).sum(axis=2)  # (M, N)
    sigma2 = float(dist2.sum() / (dim * m * n))

    history: list[float] = []
    converged = False
    iterations = 0
    moved = y.copy()

    def objective(moved_pts: np.ndarray, s2: float) -> float:
        d2 = ((x[None, :, :] - moved_pts[:, None, :]) ** 2).sum(axis=2)
        norm = (2.0 * np.pi * s2) ** (-dim / 2.0)
        mixture = (1.0 - params.outlier_w) / m * norm * np.exp(-d2 / (2.0 * s2)).sum(axis=0)
        density = mixture + params.outlier_w / n
        nll = -float(np.log(np.maximum(density, 1e-300)).sum())
        return nll + params.lam / 2.0 * float(np.einsum("ij,ik,jk->", g, w_field, w_field))

    history.append(objective(moved, sigma2))

    for iterations in range(1, params.max_iterations + 1):
        # E-step: mixture responsibilities with a uniform outlier component.
        d2 = ((x[None, :, :] - moved[:, None, :]) ** 2).sum(axis=2)
        k = np.exp(-d2 / (2.0 * sigma2))
        c = ((2.0 * np.pi * sigma2) ** (dim / 2.0)
             * params.outlier_w / max(1.0 - params.outlier_w, 1e-12) * m / n)
        denom = k.sum(axis=0) + c
        p = k / np.maximum(denom, 1e-300)

        p1 = p.sum(axis=1)           # (M,)
        pt1 = p.sum(axis=0)          # (N,)
        px = p @ x                   # (M, 3)
        n_p = float(p1.sum())
        if n_p <= 0:
            raise NumericalFailure("all responsibility mass went to the outlier component")

        # M-step for the field: (d(P1) G + lam sigma2 I) W = PX - d(P1) Y.
        a = p1[:, None] * g + params.lam * sigma2 * np.eye(m)
        rhs = px - p1[:, None] * y
        w_field = _solve_with_jitter(a, rhs, p1, g, params.lam * sigma2)

        moved = y + g @ w_field

        # M-step for the variance.
        xpx = float((pt1 * np.einsum("nj,nj->n", x, x)).sum())
        trpxt = float(np.einsum("mj,mj->", px, moved))
        tpt = float((p1 * np.einsum("mj,mj->m", moved, moved)).sum())
        sigma2 = max((xpx - 2.0 * trpxt + tpt) / (n_p * dim), 1e-12)

        history.append(objective(moved, sigma2))
        prev, cur = history[-2], history[-1]
        if abs(prev - cur) < params.tol * max(abs(prev), 1.0):
            converged = True
            break

    return CpdResult(displaced=PointCloud(moved, getattr(source, "labels", np.full(m, -1)).copy()),
                     objective_history=history, sigma2=sigma2, iterations=iterations,
                     converged=converged, kernel_weights=w_field, source_points=y.copy(),
                     beta=params.beta)


def _solve_with_jitter(a: np.ndarray, rhs: np.ndarray, p1: np.ndarray,
                       g: np.ndarray, ridge: float) -> np.ndarray:
    jitter = 0.0
    for attempt in range(4):
        try:
            sol = np.linalg.solve(a + jitter * np.eye(a.shape[0]), rhs)
            if np.all(np.isfinite(sol)):
                return sol
        except np.linalg.LinAlgError:
            pass
        jitter = 1e-8 * (10.0 ** attempt)
    raise NumericalFailure("kernel system remained singular after jitter retries")


def sparse_graph_register(template: PointCloud, subject: PointCloud, waypoints,
                          truth_waypoints=None, *,
                          keypoint_count: int = SPARSE_GRAPH_NODES,
                          som_params: SomParams | None = None,
                          reg_params: RegisterParams | None = None,
                          seed: int = 0) -> PipelineResult:
    """Dense pipeline run on a sparse (keypoint-scale) template graph, so local
    fits draw on distant nodes."""
    return register_pipeline(template, subject, waypoints, truth_waypoints,
                             graph_nodes=keypoint_count, som_params=som_params,
                             reg_params=reg_params, seed=seed, method_name="sparse")
