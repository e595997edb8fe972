"""Directed skeleton graphs and the geodesic-neighborhood SOM fit.

The template graph is a tree: one node chain per cartilage branch plus one
sternum chain, with each branch chain attached to its nearest sternum node.
Pairwise geodesic distances (shortest paths over edge lengths in mm) are
computed once at construction and frozen; the SOM moves node positions but
never touches topology or the geodesic matrix, which is exactly what keeps
updates from leaking across neighboring branches.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

from ._validation import as_points
from .errors import EmptyInput, GraphMismatch, InvalidParams, MissingBranch
from .geometry import PointCloud, centroid, pca_axes

DEFAULT_TEMPLATE_NODES = 245
_DEFAULT_BRANCH_SHARE = 25 / 245  # 8 branch chains of 25 plus a sternum chain of 45


@dataclass
class SkeletonGraph:
    """Node positions with branch ids, directed edges, frozen geodesics."""

    nodes: np.ndarray          # (N, 3) positions, mm
    branch_ids: np.ndarray     # (N,) 0 = sternum chain, 1..k = branch chains
    edges: np.ndarray          # (E, 2) directed node index pairs
    geodesic: np.ndarray       # (N, N) shortest-path distances, symmetric

    def __post_init__(self):
        self.nodes = as_points(self.nodes, "nodes")
        self.branch_ids = np.asarray(self.branch_ids, dtype=np.int64).reshape(-1)
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        self.geodesic = np.asarray(self.geodesic, dtype=np.float64)
        n = len(self.nodes)
        if self.branch_ids.shape[0] != n or self.geodesic.shape != (n, n):
            raise GraphMismatch("graph arrays are inconsistent")

    def __len__(self) -> int:
        return self.nodes.shape[0]

    def with_positions(self, positions: np.ndarray) -> "SkeletonGraph":
        """Same topology and geodesics, new node positions."""
        pts = as_points(positions, "positions")
        if pts.shape != self.nodes.shape:
            raise GraphMismatch("position array shape mismatch")
        return SkeletonGraph(pts, self.branch_ids, self.edges, self.geodesic)

    def mean_edge_length(self) -> float:
        d = self.nodes[self.edges[:, 0]] - self.nodes[self.edges[:, 1]]
        return float(np.mean(np.linalg.norm(d, axis=1)))

    def same_topology(self, other: "SkeletonGraph") -> bool:
        return (len(self) == len(other)
                and np.array_equal(self.edges, other.edges)
                and np.array_equal(self.branch_ids, other.branch_ids))

    def to_json_dict(self) -> dict:
        return {
            "nodes": [{"x": float(x), "y": float(y), "z": float(z), "branch": int(b)}
                      for (x, y, z), b in zip(self.nodes, self.branch_ids)],
            "edges": [[int(i), int(j)] for i, j in self.edges],
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "SkeletonGraph":
        nodes = np.array([[n["x"], n["y"], n["z"]] for n in data["nodes"]], dtype=np.float64)
        branch = np.array([n["branch"] for n in data["nodes"]], dtype=np.int64)
        edges = np.asarray(data["edges"], dtype=np.int64).reshape(-1, 2)
        return cls(nodes, branch, edges, geodesic_matrix(nodes, edges))


def geodesic_matrix(nodes: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """All-pairs shortest paths over undirected edges weighted by length."""
    n = len(nodes)
    w = np.linalg.norm(nodes[edges[:, 0]] - nodes[edges[:, 1]], axis=1)
    graph = csr_matrix((w, (edges[:, 0], edges[:, 1])), shape=(n, n))
    return shortest_path(graph, directed=False)


@dataclass(frozen=True)
class SomParams:
    iterations: int = 30          # epochs over the point cloud
    lr0: float = 0.5
    lr_decay: float = 0.9
    sigma0: float | None = None   # default: 2x mean inter-node spacing of the graph
    sigma_decay: float = 0.9
    rng_seed: int = 0
    neighborhood: str = "geodesic"  # or "euclidean" (ablation)

    def validate(self) -> None:
        if not 0 < self.lr0 <= 1:
            raise InvalidParams("lr0 must be in (0, 1]")
        if self.sigma0 is not None and not self.sigma0 > 0:
            raise InvalidParams("sigma0 must be > 0")
        if self.iterations < 1:
            raise InvalidParams("iterations must be >= 1")
        if self.neighborhood not in ("geodesic", "euclidean"):
            raise InvalidParams("neighborhood must be 'geodesic' or 'euclidean'")


def build_template_graph(template: PointCloud, total_nodes: int = DEFAULT_TEMPLATE_NODES) -> SkeletonGraph:
    """Skeletonize a labeled template cloud into chains of evenly spaced nodes.

    Each branch contributes a chain ordered from its medial (sternum-near) end
    outward; the sternum chain takes the remaining node budget. Branch chains
    connect to their nearest sternum node, so the result is a tree.
    """
    labels = template.branch_labels()
    if len(labels) == 0:
        raise MissingBranch("template cloud has no branch labels")
    if not np.any(template.labels == 0):
        raise MissingBranch("template cloud has no sternum points (label 0)")

    per_branch = max(2, int(total_nodes * _DEFAULT_BRANCH_SHARE))
    n_sternum = total_nodes - per_branch * len(labels)
    if n_sternum < 2:
        raise InvalidParams(f"total_nodes={total_nodes} leaves no room for a sternum chain")

    cloud_center = centroid(template)
    positions = []
    branch_ids = []
    edges = []

    sternum_pts = template.branch(0).points
    axes, _ = pca_axes(sternum_pts)
    sternum_nodes = _chain_nodes(sternum_pts, axes[0], n_sternum)
    start = 0
    positions.append(sternum_nodes)
    branch_ids.append(np.zeros(n_sternum, dtype=np.int64))
    edges.extend((start + i, start + i + 1) for i in range(n_sternum - 1))
    offset = n_sternum

    for lab in labels:
        pts = template.branch(int(lab)).points
        if len(pts) < per_branch:
            raise MissingBranch(f"branch {int(lab)} too sparse for {per_branch} nodes", branch=int(lab))
        axes, _ = pca_axes(pts)
        direction = axes[0]
        if float((pts.mean(axis=0) - cloud_center) @ direction) < 0:
            direction = -direction  # orient medial -> lateral
        chain = _chain_nodes(pts, direction, per_branch)
        attach = int(np.argmin(np.linalg.norm(sternum_nodes - chain[0], axis=1)))
        positions.append(chain)
        branch_ids.append(np.full(per_branch, int(lab), dtype=np.int64))
        edges.append((attach, offset))
        edges.extend((offset + i, offset + i + 1) for i in range(per_branch - 1))
        offset += per_branch

    nodes = np.vstack(positions)
    edge_arr = np.asarray(edges, dtype=np.int64)
    return SkeletonGraph(nodes, np.concatenate(branch_ids), edge_arr, geodesic_matrix(nodes, edge_arr))


def _chain_nodes(pts: np.ndarray, direction: np.ndarray, count: int) -> np.ndarray:
    """Evenly spaced chain along the arc-length parameter ``pts @ direction``:
    one node per parameter bin (centroid of the bin's points; empty bins take
    the point nearest the bin center)."""
    t = pts @ direction
    edges = np.linspace(t.min(), t.max(), count + 1)
    nodes = np.empty((count, 3))
    for i in range(count):
        hi_inclusive = i == count - 1
        member = (t >= edges[i]) & ((t <= edges[i + 1]) if hi_inclusive else (t < edges[i + 1]))
        if member.any():
            nodes[i] = pts[member].mean(axis=0)
        else:
            mid = (edges[i] + edges[i + 1]) / 2.0
            nodes[i] = pts[int(np.argmin(np.abs(t - mid)))]
    return nodes


def som_fit(graph: SkeletonGraph, cloud, params: SomParams | None = None) -> SkeletonGraph:
    """Competitive online fit of graph node positions to a point cloud.

    Per sampled point, the nearest node (best matching unit) anchors an update
    of every node toward the point, attenuated by a Gaussian in the frozen
    graph geodesic distance from the BMU (or in current Euclidean node
    distance for the ablation). Learning rate and neighborhood radius decay
    per epoch; the sampling order is a seeded shuffle per epoch. Topology and
    the geodesic matrix are never modified.
    """
    params = params or SomParams()
    params.validate()
    pts = as_points(cloud, "cloud")
    if pts.shape[0] == 0:
        raise EmptyInput("cannot fit a graph to an empty cloud")

    rng = np.random.default_rng(params.rng_seed)
    positions = graph.nodes.copy()
    geodesic = graph.geodesic
    sigma = params.sigma0 if params.sigma0 is not None else 2.0 * graph.mean_edge_length()
    lr = params.lr0

    for _ in range(params.iterations):
        two_sigma2 = 2.0 * sigma * sigma
        for k in rng.permutation(pts.shape[0]):
            p = pts[k]
            delta = p - positions
            bmu = int(np.argmin(np.einsum("ij,ij->i", delta, delta)))
            if params.neighborhood == "geodesic":
                d2 = geodesic[bmu] ** 2
            else:
                diff = positions - positions[bmu]
                d2 = np.einsum("ij,ij->i", diff, diff)
            theta = np.exp(-d2 / two_sigma2)
            positions += (lr * theta)[:, None] * delta
        lr *= params.lr_decay
        sigma *= params.sigma_decay

    return graph.with_positions(positions)


def pair_nodes(graph_a: SkeletonGraph, graph_b: SkeletonGraph) -> np.ndarray:
    """Identity node pairing, valid because the second graph is fitted starting
    from the first; raises GraphMismatch when topologies differ."""
    if not graph_a.same_topology(graph_b):
        raise GraphMismatch("graphs differ in node count or topology",
                            nodes_a=len(graph_a), nodes_b=len(graph_b))
    idx = np.arange(len(graph_a), dtype=np.int64)
    return np.stack([idx, idx], axis=1)
