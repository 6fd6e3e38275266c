"""Command-line entry points.

Subcommands: ``simulate`` (generate a dataset), ``run`` (full pipeline),
``eval`` (deviation report / ground-truth RMSE), ``export-map`` (PLY only),
``graph-dump`` (pose-graph text only).  Exit codes: 0 success, 2 bad
configuration or arguments, 3 dataset problems, 4 solver failure.
"""

from __future__ import annotations

import argparse
import os
import sys


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="srpslam",
        description="LiDAR-inertial SLAM with structural-plane constraints",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seeded=True):
        p.add_argument("--config", help="key=value config file")
        if seeded:
            p.add_argument("--seed", type=int, default=None,
                           help="override run.seed from the config")
        p.add_argument("--single-thread", action="store_true",
                       help="pin numeric libraries to one thread")

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("scenario")
    p.add_argument("out_dir")
    p.add_argument("--noise-free", action="store_true",
                   help="disable sensor noise and biases")
    common(p)

    p = sub.add_parser("run", help="process a dataset end to end")
    p.add_argument("dataset_dir")
    p.add_argument("out_dir")
    p.add_argument("--no-srp", action="store_true",
                   help="disable structural-plane constraints")
    p.add_argument("--no-imu", action="store_true",
                   help="LiDAR-only ablation")
    common(p)

    p = sub.add_parser("eval", help="report trajectory deviation / RMSE")
    p.add_argument("trajectory", help="TUM trajectory file")
    p.add_argument("--ground-truth", help="TUM ground truth for RMSE")

    p = sub.add_parser("export-map", help="run the pipeline, write only the map")
    p.add_argument("dataset_dir")
    p.add_argument("out_ply")
    p.add_argument("--no-srp", action="store_true")
    p.add_argument("--no-imu", action="store_true")
    common(p)

    p = sub.add_parser("graph-dump", help="run the pipeline, write only the graph")
    p.add_argument("dataset_dir")
    p.add_argument("out_txt")
    p.add_argument("--no-srp", action="store_true")
    p.add_argument("--no-imu", action="store_true")
    common(p)
    return parser


def _load_config(args):
    from srpslam.config import RunConfig

    config = (
        RunConfig.from_file(args.config)
        if getattr(args, "config", None)
        else RunConfig()
    )
    return config


def _seed(args, config) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    return int(config["run.seed"])


def _cmd_simulate(args) -> int:
    from srpslam.dataset import make_dataset
    from srpslam.simulator import noise_free

    config = _load_config(args)
    params = config.simulator_params()
    if args.noise_free:
        params = noise_free(params)
    make_dataset(args.scenario, _seed(args, config), args.out_dir, params)
    print(f"dataset written to {args.out_dir}")
    return 0


def _cmd_run(args) -> int:
    from srpslam.pipeline import run_pipeline

    config = _load_config(args)
    result = run_pipeline(
        args.dataset_dir,
        config,
        out_dir=args.out_dir,
        seed=_seed(args, config),
        use_srp=False if args.no_srp else None,
        use_imu=False if args.no_imu else None,
    )
    print(f"{len(result.sweep_times)} sweeps, {len(result.keyframes)} keyframes, "
          f"{len(result.registry.records)} planes, "
          f"{len(result.graph.plane_edges)} plane edges")
    print(result.deviation.format(), end="")
    print(f"artifacts in {args.out_dir}")
    return 0


def _cmd_eval(args) -> int:
    import numpy as np

    from srpslam.dataset import read_tum
    from srpslam.evaluate import evaluate_loop_deviation, trajectory_rmse

    times, p, q = read_tum(args.trajectory)
    report = evaluate_loop_deviation(times, p, q)
    print("# loop deviation (start -> end); angles Z-Y-X yaw/pitch/roll")
    print(report.format(), end="")
    if args.ground_truth:
        gt_t, gt_p, gt_q = read_tum(args.ground_truth)
        rmse_p, rmse_a = trajectory_rmse(times, p, q, gt_t, gt_p, gt_q)
        print(f"rmse_pos   {rmse_p:.4f} m")
        print(f"rmse_angle {rmse_a:.6f} rad ({np.degrees(rmse_a):.4f} deg)")
    return 0


def _run_for_artifact(args):
    from srpslam.pipeline import run_pipeline

    config = _load_config(args)
    result = run_pipeline(
        args.dataset_dir,
        config,
        seed=_seed(args, config),
        use_srp=False if args.no_srp else None,
        use_imu=False if args.no_imu else None,
    )
    return result, config


def _cmd_export_map(args) -> int:
    from srpslam.pipeline import export_map, write_ply

    result, config = _run_for_artifact(args)
    points = export_map(result, float(config["pipeline.map_voxel"]))
    write_ply(args.out_ply, points)
    print(f"{points.shape[0]} map points written to {args.out_ply}")
    return 0


def _cmd_graph_dump(args) -> int:
    result, _ = _run_for_artifact(args)
    with open(args.out_txt, "w", encoding="utf-8") as fh:
        fh.write(result.graph.dump())
    print(f"{len(result.graph.ids)} vertices written to {args.out_txt}")
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "run": _cmd_run,
    "eval": _cmd_eval,
    "export-map": _cmd_export_map,
    "graph-dump": _cmd_graph_dump,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if getattr(args, "single_thread", False):
        # must happen before numpy/BLAS load
        for var in (
            "OMP_NUM_THREADS",
            "OPENBLAS_NUM_THREADS",
            "MKL_NUM_THREADS",
            "NUMEXPR_NUM_THREADS",
        ):
            os.environ[var] = "1"

    from srpslam.errors import ConfigError, DatasetError, InvalidSpec, IoFailure, SrpSlamError

    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, InvalidSpec) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DatasetError, IoFailure) as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return 3
    except SrpSlamError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
