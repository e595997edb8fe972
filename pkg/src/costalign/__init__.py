"""costalign: intercostal scan-path transfer between skeleton point clouds.

Functional core (geometry, synthesis, preprocessing, skeleton graphs,
registration, baselines, shape repair, metrics, benchmark) plus sklearn-style
estimators and a ``costalign`` command line.
"""

from .baselines import (CpdParams, CpdResult, IcpParams, IcpResult, cpd_nonrigid, icp,
                        sparse_graph_register)
from .benchmark import BenchmarkConfig, BenchRow, run_benchmark
from .errors import CostalignError
from .estimators import (CpdRegistrar, RigidIcpRegistrar, ShapeRepairer,
                         SkeletonGraphRegistrar)
from .geometry import (PointCloud, RigidTransform, apply_transform, centroid, fit_rigid,
                       pca_axes, rigid_residual)
from .io import read_pgm, read_xyzl, write_pgm, write_xyzl
from .metrics import (ConfusionCounts, RegistrationReport, boundary_loss,
                      classification_metrics, dice, iou)
from .preprocess import (ClusteringParams, coarse_align, dbscan, filter_small_clusters,
                         preprocess_pipeline, split_left_right, synth_sternum)
from .registration import (LocalTransformField, PipelineResult, RegisterParams,
                           blend_weights, local_transforms, map_waypoints,
                           register_pipeline, warp_cloud)
from .shape_repair import (LatentEmbedding, ValidManifold, build_manifold, repair,
                           shape_valid, train_embedding)
from .skeleton import (SkeletonGraph, SomParams, build_template_graph, pair_nodes,
                       som_fit)
from .synthesis import (AnatomyParams, DeformParams, GroundTruth, DEFORM_PROFILES,
                        generate_pair, waypoints_from_cloud)

__version__ = "0.1.0"

__all__ = [
    "AnatomyParams", "BenchRow", "BenchmarkConfig", "ClusteringParams", "ConfusionCounts",
    "CostalignError", "CpdParams", "CpdRegistrar", "CpdResult", "DEFORM_PROFILES",
    "DeformParams", "GroundTruth", "IcpParams", "IcpResult", "LatentEmbedding",
    "LocalTransformField", "PipelineResult", "PointCloud", "RegisterParams",
    "RegistrationReport", "RigidIcpRegistrar", "RigidTransform", "ShapeRepairer",
    "SkeletonGraph", "SkeletonGraphRegistrar", "SomParams", "ValidManifold",
    "apply_transform", "blend_weights", "boundary_loss", "build_manifold",
    "build_template_graph", "centroid", "classification_metrics", "coarse_align",
    "cpd_nonrigid", "dbscan", "dice", "filter_small_clusters", "fit_rigid",
    "generate_pair", "icp", "iou", "local_transforms", "map_waypoints", "pair_nodes",
    "pca_axes", "preprocess_pipeline", "read_pgm", "read_xyzl", "register_pipeline",
    "repair", "rigid_residual", "run_benchmark", "shape_valid", "som_fit",
    "sparse_graph_register", "split_left_right", "synth_sternum", "train_embedding",
    "warp_cloud", "waypoints_from_cloud", "write_pgm", "write_xyzl",
]
