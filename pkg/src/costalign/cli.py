"""Command line entry point.

Subcommands: generate, preprocess, fit-graph, register, map-path, benchmark,
repair-mask, train-shape-model. Exit codes: 0 success, 1 domain error (with a
machine-readable JSON object on stderr), 2 usage error. A JSON config file
can provide defaults for any flag of a subcommand (flags win); unknown config
keys are rejected. Log level comes from ``COSTALIGN_LOG`` (error|info|debug).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .baselines import SPARSE_GRAPH_NODES  # noqa: F401  (documented default for configs)
from .benchmark import BenchmarkConfig, run_benchmark
from .errors import CostalignError, InvalidParams, MissingFile
from .geometry import PointCloud
from .io import dump_json, load_json, points_to_lists, read_pgm, read_xyzl, write_pgm, write_xyzl
from .metrics import RegistrationReport
from .preprocess import ClusteringParams, preprocess_pipeline
from .registration import RegisterParams, map_waypoints, register_pipeline
from .shape_repair import load_model, repair, save_model, build_manifold, train_embedding
from .skeleton import DEFAULT_TEMPLATE_NODES, SkeletonGraph, SomParams, build_template_graph, som_fit
from .synthesis import AnatomyParams, params_for_profile, generate_pair

logger = logging.getLogger("costalign")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _configure_logging() -> None:
    level = os.environ.get("COSTALIGN_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR),
                        format="%(levelname)s %(name)s: %(message)s")


def _emit_error(exc: CostalignError) -> None:
    sys.stderr.write(json.dumps(exc.to_json_dict(), sort_keys=True) + "\n")


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        sys.stderr.write(f"usage error: {exc}\n")
        parser.print_usage(sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if not hasattr(args, "func"):
        parser.print_usage(sys.stderr)
        return 2
    try:
        _apply_config(parser, args, argv)
        args.func(args)
        return 0
    except FileNotFoundError as exc:
        _emit_error(MissingFile(str(exc), path=str(getattr(exc, "filename", ""))))
        return 1
    except CostalignError as exc:
        logger.debug("domain error", exc_info=True)
        _emit_error(exc)
        return 1


NESTED_CONFIG_KEYS = {"anatomy", "som", "register", "params", "icp", "cpd"}


def _apply_config(parser: _Parser, args: argparse.Namespace, argv) -> None:
    """Merge a JSON config into unset flags; flags always win."""
    config_path = getattr(args, "config", None)
    if not config_path:
        return
    data = load_json(config_path)
    if not isinstance(data, dict):
        raise InvalidParams("config file must hold a JSON object", path=str(config_path))
    known = set(vars(args)) | NESTED_CONFIG_KEYS
    unknown = set(data) - known
    if unknown:
        raise InvalidParams(f"unknown config keys: {sorted(unknown)}", path=str(config_path))

    given = _explicit_flags(argv if argv is not None else sys.argv[1:])
    for key, value in data.items():
        if key in NESTED_CONFIG_KEYS:
            setattr(args, key, value)
        elif key.replace("_", "-") not in given and key not in given:
            setattr(args, key, value)


def _explicit_flags(argv) -> set[str]:
    out = set()
    for token in argv:
        if token.startswith("--"):
            out.add(token[2:].split("=", 1)[0])
    return out


def _require_seed(args) -> int:
    if getattr(args, "seed", None) is None:
        raise InvalidParams("--seed is required for this subcommand")
    return int(args.seed)


def _anatomy_from(args) -> AnatomyParams:
    overrides = getattr(args, "anatomy", None) or {}
    try:
        return AnatomyParams(**overrides)
    except TypeError as exc:
        raise InvalidParams(f"bad anatomy config: {exc}")


def _som_from(args) -> SomParams:
    overrides = getattr(args, "som", None) or {}
    try:
        return SomParams(**overrides)
    except TypeError as exc:
        raise InvalidParams(f"bad som config: {exc}")


# ---------------------------------------------------------------------------
# subcommand implementations
# ---------------------------------------------------------------------------

def cmd_generate(args) -> None:
    seed = _require_seed(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    params = params_for_profile(seed, args.deform_profile, _anatomy_from(args))
    template, subject, truth = generate_pair(params)
    write_xyzl(template, out_dir / "template.xyzl")
    write_xyzl(subject, out_dir / "subject.xyzl")
    dump_json({
        "correspondence": [int(v) for v in truth.correspondence],
        "waypoints_template": points_to_lists(truth.waypoints_template),
        "waypoints_subject": points_to_lists(truth.waypoints_subject),
    }, out_dir / "truth.json")
    logger.info("generated %d template / %d subject points", len(template), len(subject))


def cmd_preprocess(args) -> None:
    subject = read_xyzl(args.input)
    template = read_xyzl(args.template)
    params = ClusteringParams(eps=args.eps, min_points=args.min_points,
                              min_cluster_size=args.min_cluster_size)
    cleaned, _, report = preprocess_pipeline(subject, template, params)
    write_xyzl(cleaned, args.out)
    dump_json(report, args.report)
    logger.info("preprocess kept %d points in %d clusters", len(cleaned), report["clusters"])


def cmd_fit_graph(args) -> None:
    seed = _require_seed(args)
    cloud = read_xyzl(args.cloud)
    if args.graph:
        graph = SkeletonGraph.from_json_dict(load_json(args.graph))
    else:
        graph = build_template_graph(cloud, args.nodes)
    som = replace(_som_from(args), rng_seed=seed)
    fitted = som_fit(graph, cloud, som)
    dump_json(fitted.to_json_dict(), args.out)
    logger.info("fitted %d-node graph", len(fitted))


def _load_waypoints(path) -> tuple[np.ndarray, np.ndarray | None]:
    data = load_json(path)
    if "waypoints_template" in data:
        wps = np.asarray(data["waypoints_template"], dtype=np.float64)
        truth = data.get("waypoints_subject")
        return wps, None if truth is None else np.asarray(truth, dtype=np.float64)
    if "waypoints" in data:
        return np.asarray(data["waypoints"], dtype=np.float64), None
    raise InvalidParams("waypoint file needs 'waypoints' or 'waypoints_template'", path=str(path))


def cmd_register(args) -> None:
    seed = _require_seed(args)
    template = read_xyzl(args.template)
    subject = read_xyzl(args.subject)
    waypoints, truth = _load_waypoints(args.waypoints)
    reg_cfg = dict(getattr(args, "register", None) or {})
    reg_cfg.setdefault("blend_mode", args.blend)
    try:
        reg = RegisterParams(**reg_cfg)
    except TypeError as exc:
        raise InvalidParams(f"bad register config: {exc}")
    result = register_pipeline(template, subject, waypoints, truth,
                               graph_nodes=args.graph_nodes, som_params=_som_from(args),
                               reg_params=reg, seed=seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_xyzl(result.warped_template, out_dir / "warped.xyzl")
    dump_json({"waypoints": points_to_lists(result.mapped_waypoints)},
              out_dir / "mapped_waypoints.json")
    include_timings = args.timing == "wall"
    dump_json(result.report.to_json_dict(include_timings), out_dir / "report.json")
    if result.report.mean_mm is not None:
        logger.info("mean waypoint error %.3f mm", result.report.mean_mm)


def cmd_map_path(args) -> None:
    cloud = read_xyzl(args.cloud)
    warped = read_xyzl(args.warped)
    waypoints, _ = _load_waypoints(args.waypoints)
    mapped = map_waypoints(waypoints, cloud, warped,
                           RegisterParams(sphere_radius=args.radius))
    dump_json({"waypoints": points_to_lists(mapped)}, args.out)


def _csv_or_list(value, cast):
    if value is None:
        return None
    if isinstance(value, str):
        return [cast(v) for v in value.split(",") if v]
    return [cast(v) for v in value]


def cmd_benchmark(args) -> None:
    data = {}
    for key, cast in (("seeds", int), ("profiles", str), ("methods", str)):
        parsed = _csv_or_list(getattr(args, key), cast)
        if parsed:
            data[key] = parsed
    params = getattr(args, "params", None)
    if params:
        data["params"] = params
    if "seeds" not in data:
        raise InvalidParams("benchmark needs seeds (flag --seeds or config)")
    config = BenchmarkConfig.from_dict(data)
    rows = run_benchmark(config, out_dir=args.out, jobs=args.jobs,
                         include_timings=args.timing == "wall")
    failures = [r for r in rows if r.status != "ok"]
    logger.info("benchmark: %d rows, %d failures", len(rows), len(failures))


def cmd_repair_mask(args) -> None:
    embedding, manifold = load_model(args.model)
    mask = read_pgm(args.input)
    write_pgm(repair(mask, embedding, manifold, k=args.k), args.out)


def cmd_train_shape_model(args) -> None:
    seed = _require_seed(args)
    mask_dir = Path(args.masks)
    if not mask_dir.is_dir():
        raise MissingFile(f"mask directory not found: {mask_dir}", path=str(mask_dir))
    files = sorted(mask_dir.glob("*.pgm"))
    if not files:
        raise InvalidParams(f"no .pgm masks under {mask_dir}", path=str(mask_dir))
    masks = [read_pgm(f) for f in files]
    embedding = train_embedding(masks, args.latent_dim)
    manifold = build_manifold(embedding, masks, args.samples, rng_seed=seed)
    save_model(args.out, embedding, manifold)
    logger.info("trained shape model on %d masks, %d manifold samples", len(masks), len(manifold))


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="costalign",
                     description="Scan-path transfer between skeleton point clouds.")
    sub = parser.add_subparsers(dest="command")

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="JSON config file; flags win")
        p.set_defaults(func=func)
        return p

    p = add("generate", cmd_generate, "emit a synthetic template/subject pair with ground truth")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--deform-profile", choices=("none", "mild", "severe"), default="none")
    p.add_argument("--out-dir", required=True)

    p = add("preprocess", cmd_preprocess, "clean and coarsely align a raw subject cloud")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--template", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--eps", type=float, default=8.0)
    p.add_argument("--min-points", type=int, default=16)
    p.add_argument("--min-cluster-size", type=int, default=None)

    p = add("fit-graph", cmd_fit_graph, "fit a skeleton graph to a cloud")
    p.add_argument("--cloud", required=True)
    p.add_argument("--graph", default=None, help="initial graph JSON; omitted: build from the cloud")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--nodes", type=int, default=DEFAULT_TEMPLATE_NODES)

    p = add("register", cmd_register, "run the dense pipeline template -> subject")
    p.add_argument("--template", required=True)
    p.add_argument("--subject", required=True)
    p.add_argument("--waypoints", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--graph-nodes", type=int, default=DEFAULT_TEMPLATE_NODES)
    p.add_argument("--blend", choices=("inverse", "literal"), default="inverse")
    p.add_argument("--timing", choices=("wall", "off"), default="wall")

    p = add("map-path", cmd_map_path, "map waypoints between an aligned cloud pair")
    p.add_argument("--cloud", required=True)
    p.add_argument("--warped", required=True)
    p.add_argument("--waypoints", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--radius", type=float, default=20.0)

    p = add("benchmark", cmd_benchmark, "methods x profiles x seeds sweep")
    p.add_argument("--seeds", default=None, help="comma-separated seed list")
    p.add_argument("--profiles", default=None, help="comma-separated profiles")
    p.add_argument("--methods", default=None, help="comma-separated methods")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.add_argument("--timing", choices=("wall", "off"), default="wall")

    p = add("repair-mask", cmd_repair_mask, "repair a binary mask with a trained shape model")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=1)

    p = add("train-shape-model", cmd_train_shape_model, "train embedding + manifold from PGM masks")
    p.add_argument("--masks", required=True, help="directory of .pgm masks")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--latent-dim", type=int, default=32)
    p.add_argument("--samples", type=int, default=110_000)

    return parser


if __name__ == "__main__":
    sys.exit(main())
