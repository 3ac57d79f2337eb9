"""
Command-line front end.

Every subcommand reads its inputs from files, writes its outputs under
--out-dir and is deterministic given its flags and --seed.

Exit codes: 0 success, 2 validation error, 3 numerical failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from src.algorithms.align import align_osm
from src.algorithms.masking import BoxSamplingStrategy, foreground_mask, sample_random_boxes
from src.algorithms.osm import parse_osm, rasterize_osm
from src.algorithms.projection import project_to_bev
from src.algorithms.refine import heuristic_refine
from src.algorithms.simulator import sample_layout, sample_layout_with_params
from src.algorithms.warp import compose_and_warp
from src.analysis.metrics import depth_metrics, mean_iou
from src.analysis.pipeline import background_channels, demo_many, demo_synthetic, run_pipeline_files
from src.data_structures.geometry import CameraIntrinsics, GeoPose
from src.data_structures.grids import DepthMap, LabelGrid, SemanticGrid, argmax_labels
from src.learning.refiner import RefinerParams
from src.learning.training import SWEEP_REL_TOL, lambda_sweep, sweep_violations, train_refiner
from src.utils.config import PipelineConfig, load_pipeline_config
from src.utils.errors import NumericalError, StageError, ValidationError
from src.utils.grid_io import load_bev, load_grid, save_grid
from src.visualization.bev_plots import lambda_sweep_figure

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")


def _load_typed(path: str, expected: type):
    grid = load_grid(path)
    if not isinstance(grid, expected):
        raise ValidationError(f"{path}: expected a {expected.__name__}")
    return grid


def _load_labels(path: str, config: PipelineConfig) -> LabelGrid:
    """Label map from a .pgm, or the argmax of a .prob grid."""
    grid = load_grid(path)
    if isinstance(grid, SemanticGrid):
        return argmax_labels(grid, config.catalog())
    if isinstance(grid, LabelGrid):
        return grid
    raise ValidationError(f"{path}: expected labels or class probabilities")


def _intrinsics(path: str) -> CameraIntrinsics:
    return CameraIntrinsics.model_validate_json(Path(path).read_text(encoding="utf-8"))


def cmd_mask(args, config: PipelineConfig, out: Path) -> None:
    catalog = config.catalog()
    seg = _load_typed(args.seg, SemanticGrid)
    mask = foreground_mask(seg, catalog)
    save_grid(LabelGrid(mask.m.astype(np.int64)), out / "foreground_mask.pgm")
    if args.strategy:
        strategy = BoxSamplingStrategy.from_name(args.strategy)
        boxes = sample_random_boxes(strategy, seg, config.seed, catalog)
        _write_json(out / "boxes.json", {"strategy": strategy.name, "boxes": [b.to_dict() for b in boxes]})


def cmd_project(args, config: PipelineConfig, out: Path) -> None:
    catalog = config.catalog()
    seg = _load_typed(args.seg, SemanticGrid)
    depth = _load_typed(args.depth, DepthMap)
    mask = foreground_mask(seg, catalog)
    seg_bg = background_channels(seg, mask, catalog.background_ids)
    bev, stats = project_to_bev(seg_bg, depth, _intrinsics(args.intrinsics), config.bev, return_stats=True)
    save_grid(bev, out / "b_init.prob")
    _write_json(out / "projection.json", {**stats._asdict(), "observed_fraction": bev.observed_fraction()})


def cmd_simulate(args, config: PipelineConfig, out: Path) -> None:
    catalog = config.catalog()
    for i in range(args.count):
        seed = config.seed + i
        bev, params = sample_layout_with_params(config.prior, config.bev, seed, catalog)
        save_grid(argmax_labels(bev.grid, catalog), out / f"layout_{i:04d}.pgm")
        _write_json(out / f"layout_{i:04d}.json", {"seed": seed, **params.model_dump()})


def cmd_osm_raster(args, config: PipelineConfig, out: Path) -> None:
    graph = parse_osm(Path(args.osm).read_text(encoding="utf-8"))
    pose = GeoPose(lat=args.lat, lon=args.lon, heading_deg=args.heading_deg)
    bev = rasterize_osm(graph, pose, config.bev, catalog=config.catalog())
    save_grid(bev, out / "osm.prob")
    save_grid(argmax_labels(bev.grid, config.catalog()), out / "osm.pgm")


def cmd_align(args, config: PipelineConfig, out: Path) -> None:
    updates = {"seed": config.seed}
    for name in ("lambda2", "lambda3"):
        if getattr(args, name) is not None:
            updates[name] = getattr(args, name)
    if args.iters is not None:
        updates["max_iters"] = args.iters
    cfg = config.align.model_copy(update=updates)
    b_init, b_osm = load_bev(args.init), load_bev(args.osm)
    result = align_osm(b_init, b_osm, cfg)
    result.params.save(out / "theta.json")
    result.trace.to_csv(out / "trace.csv", index=False)
    save_grid(compose_and_warp(b_osm, result.params), out / "osm_aligned.prob")


def cmd_refine_heuristic(args, config: PipelineConfig, out: Path) -> None:
    refined = heuristic_refine(load_bev(args.input), config.catalog())
    save_grid(refined, Path(args.output) if args.output else out / "b_refined.prob")


def cmd_train_refiner(args, config: PipelineConfig, out: Path) -> None:
    dataset = [load_bev(path) for path in args.data]
    weights = config.loss
    if args.lam is not None:
        weights = weights.model_copy(update={"lam": args.lam})
    shape = dataset[0].shape
    bev = config.bev.model_copy(update={"k": shape[0], "l": shape[1]})

    def sim_sampler(seed: int):
        return sample_layout(config.prior, bev, seed, config.catalog())

    if args.sweep:
        sweep = lambda_sweep(
            dataset, sim_sampler, weights, args.sweep, args.steps, config.seed, args.critic_steps
        )
        sweep.to_csv(out / "lambda_sweep.csv", index=False)
        lambda_sweep_figure(sweep).write_html(out / "lambda_sweep.html")
        logger.info(
            "Masked MSE rose with lambda at %d adjacent pairs (%.0f%% tolerance)",
            sweep_violations(sweep),
            100 * SWEEP_REL_TOL,
        )
        return

    result = train_refiner(
        dataset, sim_sampler, weights, args.steps, args.critic_steps, rng_seed=config.seed
    )
    result.trace.to_csv(out / "train_trace.csv", index=False)
    result.critic.save(out / "critic.json")
    result.refiner.save(out / "refiner.npz")


def cmd_eval_iou(args, config: PipelineConfig, out: Path) -> None:
    pred = _load_labels(args.pred, config)
    gt = _load_labels(args.gt, config)
    report = mean_iou(pred, gt, ignore_label=args.ignore_label)
    _write_json(out / "iou.json", report.to_dict())
    report.to_frame(config.catalog()).to_csv(out / "iou.csv", index=False)


def cmd_eval_depth(args, config: PipelineConfig, out: Path) -> None:
    report = depth_metrics(_load_typed(args.pred, DepthMap), _load_typed(args.gt, DepthMap))
    _write_json(out / "depth_metrics.json", report.to_dict())


def cmd_demo(args, config: PipelineConfig, out: Path) -> None:
    if args.scenes == 1:
        demo_synthetic(config.seed, config, out)
        return
    summary = demo_many([config.seed + i for i in range(args.scenes)], config)
    summary.to_csv(out / "demo_summary.csv", index=False)


def cmd_pipeline(args, config: PipelineConfig, out: Path) -> None:
    refiner = RefinerParams.load(args.refiner) if args.refiner else None
    run_pipeline_files(args.seg, args.depth, args.intrinsics, config, out, refiner)


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bevmap", description="Occlusion-aware bird's-eye-view semantic mapping"
    )
    parser.add_argument("--config", default=None, help="pipeline config JSON")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out-dir", default="out", help="output directory")
    parser.add_argument(
        "--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"]
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mask", help="foreground mask (and random boxes) of a segmentation")
    p.add_argument("--seg", required=True, help="prob-bin segmentation over all classes")
    p.add_argument("--strategy", default=None, help="random-box strategy, e.g. persp-bg-100-5")
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("project", help="project background evidence into the BEV grid")
    p.add_argument("--seg", required=True)
    p.add_argument("--depth", required=True)
    p.add_argument("--intrinsics", required=True, help="JSON with fx, fy, cx, cy")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("simulate", help="sample road layouts")
    p.add_argument("--count", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("osm-raster", help="rasterize OSM XML around a pose")
    p.add_argument("--osm", required=True)
    p.add_argument("--lat", type=float, required=True)
    p.add_argument("--lon", type=float, required=True)
    p.add_argument("--heading-deg", type=float, default=0.0)
    p.set_defaults(func=cmd_osm_raster)

    p = sub.add_parser("align", help="align a rasterized OSM map with B_init")
    p.add_argument("--init", required=True)
    p.add_argument("--osm", required=True)
    p.add_argument("--lambda2", type=float, default=None)
    p.add_argument("--lambda3", type=float, default=None)
    p.add_argument("--iters", type=int, default=None)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("refine-heuristic", help="fill unobserved cells towards the camera")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", default=None)
    p.set_defaults(func=cmd_refine_heuristic)

    p = sub.add_parser("train-refiner", help="adversarial training of the toy refiner")
    p.add_argument("--data", nargs="+", required=True, help="prob-bin B_init maps (<= 16x8)")
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--critic-steps", type=int, default=5)
    p.add_argument(
        "--sweep", nargs="+", type=float, default=None, help="train once per lambda and compare"
    )
    p.set_defaults(func=cmd_train_refiner)

    p = sub.add_parser("eval-iou", help="mean IoU of two label maps")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--ignore-label", type=int, default=None)
    p.set_defaults(func=cmd_eval_iou)

    p = sub.add_parser("eval-depth", help="depth error metrics")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.set_defaults(func=cmd_eval_depth)

    p = sub.add_parser("demo", help="synthetic end-to-end demo")
    p.add_argument("--scenes", type=int, default=1)
    p.set_defaults(func=cmd_demo)

    p = sub.add_parser("pipeline", help="run the full pipeline on files")
    p.add_argument("--seg", required=True)
    p.add_argument("--depth", required=True)
    p.add_argument("--intrinsics", required=True)
    p.add_argument("--refiner", default=None, help="trained refiner .npz; heuristic when omitted")
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_arg_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        config = load_pipeline_config(args.config)
        if args.seed is not None:
            config = config.model_copy(update={"seed": args.seed})
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        args.func(args, config, out)
    except NumericalError as exc:
        logger.error("Numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except StageError as exc:
        logger.error("%s", exc)
        return EXIT_NUMERICAL if isinstance(exc.cause, NumericalError) else EXIT_VALIDATION
    except (ValidationError, FileNotFoundError, ValueError) as exc:
        logger.error("Invalid input: %s", exc)
        return EXIT_VALIDATION
    except OSError as exc:
        logger.error("I/O failure: %s", exc)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
