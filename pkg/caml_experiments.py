#!/usr/bin/env python3
"""
CAML Experiments
================

Command-line harness for constraint-aligned PINN training runs, mode
ablations, hyperparameter sweeps and loss-landscape diagnostics.

Example Usage:
    # Five Heat seeds with full CAML
    python caml_experiments.py run --benchmark heat --mode caml --seeds 1,2,3,4,5

    # Four-mode ablation on Poisson
    python caml_experiments.py ablate --benchmark poisson --seeds 1,2,3

    # Delay schedule sweep
    python caml_experiments.py sweep --benchmark poisson --param delay --values 0/0,40/160,200/800
"""

import argparse
import csv
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
from dotenv import load_dotenv

from ad_core import DifferentiationError
from caml_loss import OffsetDivergenceError
from config import (
    BENCHMARK_DEFAULTS,
    MODES,
    ConfigError,
    ExperimentManifest,
    TrainConfig,
    coerce_value,
    configure_threads,
    load_config_file,
    output_root,
)
from diagnostics import write_hessian_csv, write_slice_csv, write_trajectory_csv
import landscape
from network import save_checkpoint
from problems import export_csv, get_problem, sample_collocation
from progress import VerboseLog
from trainer import MetricUndefinedError, train


# Load CAML_* defaults from a local .env so runs don't need manual exports
load_dotenv()


# Flag name -> TrainConfig field
OVERRIDE_FLAGS = {
    "eta": "eta",
    "w_res": "w_res",
    "w_bc": "w_bc",
    "t_min": "t_min",
    "t_max": "t_max",
    "l2_stop": "l2_stop",
    "t_d": "t_d",
    "t_r": "t_r",
    "k_init": "k_init",
    "k_few": "k_few",
    "t_c": "t_c",
    "n_interior": "n_interior",
    "n_per_edge": "n_per_edge",
}

SUMMARY_HEADER = [
    "seed",
    "stp",
    "l2_at_t_min",
    "final_l2",
    "pos_cos_fraction",
    "final_c",
    "success",
    "steps_run",
    "error",
]

TABLE_HEADER = ["stp", "l2_at_t_min", "pos_cos_fraction", "n_success", "n_seeds"]

# Failures recorded per seed instead of aborting the invocation
RUN_FAILURES = (DifferentiationError, OffsetDivergenceError, MetricUndefinedError)


class UsageError(ValueError):
    """Raised for argument combinations argparse cannot check on its own."""
    pass


# Per-seed execution

@dataclass(frozen=True)
class SeedJob:
    config: TrainConfig
    run_dir: Path
    verbose: bool = False
    export_collocation: bool = False
    quiet: bool = False
    trajectory_every: int = 0
    trajectory_grid: int = 21


@dataclass(frozen=True)
class SeedResult:
    seed: int
    stp: Optional[int] = None
    l2_at_t_min: Optional[float] = None
    final_l2: Optional[float] = None
    pos_cos_fraction: Optional[float] = None
    final_c: Optional[float] = None
    steps_run: int = 0
    error: str = ""

    @property
    def success(self) -> bool:
        return self.stp is not None and not self.error

    @property
    def finished(self) -> bool:
        return not self.error


def run_seed(job: SeedJob) -> SeedResult:
    """Train one seed and write its log CSV and checkpoint."""
    config = job.config
    problem = get_problem(config.benchmark)
    colloc = sample_collocation(problem, config.n_interior, config.n_per_edge, config.seed)
    if job.export_collocation:
        export_csv(colloc, job.run_dir / f"collocation_seed_{config.seed}.csv")
    verbose_log = VerboseLog(config.benchmark, config.mode, config.seed) if job.verbose else None

    try:
        log = train(
            problem, config, colloc=colloc, verbose_log=verbose_log,
            quiet=job.quiet, trajectory_every=job.trajectory_every,
        )
    except RUN_FAILURES as e:
        print(f"  seed {config.seed} failed: {e}")
        return SeedResult(seed=config.seed, error=f"{type(e).__name__}: {e}")

    log.write_csv(job.run_dir / f"seed_{config.seed}.csv")
    save_checkpoint(job.run_dir / f"seed_{config.seed}.ckpt", log.final_theta)
    if job.trajectory_every > 0:
        write_run_trajectory(job, problem, colloc, log)
    summary = log.summary()
    return SeedResult(
        seed=config.seed,
        stp=summary.stp,
        l2_at_t_min=summary.l2_at_t_min,
        final_l2=summary.final_l2,
        pos_cos_fraction=summary.pos_cos_fraction,
        final_c=summary.final_c,
        steps_run=summary.steps_run,
    )


def write_run_trajectory(job: SeedJob, problem, colloc, log) -> None:
    """Residual-loss slice around one run plus its projected checkpoints."""
    config = job.config
    spec = config.network_spec(problem.input_dim, problem.output_dim)
    try:
        result, points = landscape.training_trajectory_slice(
            problem, colloc, spec, log.trajectory, n=job.trajectory_grid
        )
    except ValueError as e:  # too few checkpoints or a degenerate plane
        print(f"  seed {config.seed}: no trajectory slice ({e})")
        return
    write_slice_csv(result.grid, job.run_dir / f"seed_{config.seed}_landscape.csv")
    write_trajectory_csv(points, job.run_dir / f"seed_{config.seed}_trajectory.csv")


def run_seeds(jobs: Sequence[SeedJob], workers: int = 1) -> list[SeedResult]:
    """Run seed jobs, in a process pool when workers > 1. Results keep job order."""
    if workers <= 1 or len(jobs) <= 1:
        return [run_seed(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_seed, jobs))


# Summaries

def _fmt(value: Optional[float]) -> str:
    if value is None:
        return ""
    return format(float(value), ".17g")


def mean_std(values: Sequence[float]) -> Optional[tuple[float, float]]:
    """Mean and population standard deviation, None for an empty list."""
    if not values:
        return None
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def _fmt_mean_std(stats: Optional[tuple[float, float]], spec: str) -> str:
    if stats is None:
        return "-"
    return f"{format(stats[0], spec)}±{format(stats[1], spec)}"


@dataclass(frozen=True)
class Aggregate:
    """Cross-seed statistics in the results-table conventions."""

    stp: Optional[tuple[float, float]]
    l2_at_t_min: Optional[tuple[float, float]]
    pos_cos_fraction: Optional[tuple[float, float]]
    n_success: int
    n_seeds: int

    def cells(self) -> list[str]:
        return [
            _fmt_mean_std(self.stp, ".0f"),
            _fmt_mean_std(self.l2_at_t_min, ".3e"),
            _fmt_mean_std(self.pos_cos_fraction, ".4f"),
            str(self.n_success),
            str(self.n_seeds),
        ]


def aggregate(results: Sequence[SeedResult]) -> Aggregate:
    """
    Stp over successful seeds only; L2@T_min and the positive-cos
    fraction over all finished seeds.
    """
    finished = [r for r in results if r.finished]
    return Aggregate(
        stp=mean_std([float(r.stp) for r in results if r.success]),
        l2_at_t_min=mean_std([r.l2_at_t_min for r in finished if r.l2_at_t_min is not None]),
        pos_cos_fraction=mean_std(
            [r.pos_cos_fraction for r in finished if r.pos_cos_fraction is not None]
        ),
        n_success=sum(r.success for r in results),
        n_seeds=len(results),
    )


def write_summary_csv(results: Sequence[SeedResult], path: Path) -> Aggregate:
    """One row per seed plus a trailing mean±std row."""
    path.parent.mkdir(parents=True, exist_ok=True)
    agg = aggregate(results)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(SUMMARY_HEADER)
        for r in results:
            writer.writerow([
                r.seed,
                "" if r.stp is None else r.stp,
                _fmt(r.l2_at_t_min),
                _fmt(r.final_l2),
                _fmt(r.pos_cos_fraction),
                _fmt(r.final_c),
                int(r.success),
                r.steps_run,
                r.error,
            ])
        stp, l2, cos, n_success, n_seeds = agg.cells()
        writer.writerow(["mean±std", stp, l2, "", cos, "", f"{n_success}/{n_seeds}", "", ""])
    return agg


def write_table_csv(key_header: Sequence[str], rows: Sequence[tuple[Sequence[Any], Aggregate]], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(list(key_header) + TABLE_HEADER)
        for keys, agg in rows:
            writer.writerow(list(keys) + agg.cells())


def print_aggregate(label: str, agg: Aggregate) -> None:
    stp, l2, cos, n_success, n_seeds = agg.cells()
    print(f"  {label:<24} Stp {stp:<14} L2@T_min {l2:<22} cos+ {cos:<16} {n_success}/{n_seeds}")


# Commands

def _parse_seeds(text: str) -> tuple[int, ...]:
    try:
        seeds = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError as e:
        raise UsageError(f"Bad --seeds value: {text!r}") from e
    if not seeds:
        raise UsageError("--seeds needs at least one seed")
    return seeds


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    values: dict[str, Any] = {}
    if args.config is not None:
        values.update(load_config_file(args.config))
    for flag, key in OVERRIDE_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            values[key] = value
    return values


def _out_dir(args: argparse.Namespace) -> Path:
    return args.out if args.out is not None else output_root()


def _jobs(manifest: ExperimentManifest, run_dir: Path, args: argparse.Namespace, mode: Optional[str] = None) -> list[SeedJob]:
    return [
        SeedJob(
            config=manifest.config_for(seed, mode),
            run_dir=run_dir,
            verbose=args.verbose,
            export_collocation=args.export_collocation,
            quiet=args.workers > 1,
            trajectory_every=getattr(args, "trajectory_every", 0),
            trajectory_grid=getattr(args, "trajectory_grid", 21),
        )
        for seed in manifest.seeds
    ]


def cmd_run(args: argparse.Namespace) -> int:
    """Train every seed of one benchmark/mode and write the summary."""
    if args.trajectory_every < 0 or args.trajectory_grid < 2:
        raise UsageError("--trajectory-every must be >= 0 and --trajectory-grid >= 2")
    manifest = ExperimentManifest(
        benchmark=args.benchmark,
        mode=args.mode,
        seeds=_parse_seeds(args.seeds),
        overrides=_overrides(args),
        out_dir=_out_dir(args) / f"{args.benchmark}-{args.mode}",
    )
    manifest.write()
    results = run_seeds(_jobs(manifest, manifest.out_dir, args), args.workers)
    agg = write_summary_csv(results, manifest.out_dir / "summary.csv")

    print("\n" + "-" * 70)
    print_aggregate(f"{args.benchmark}/{args.mode}", agg)
    print(f"\n  Outputs in {manifest.out_dir}")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    """Run all four modes on shared seeds and collocation sets."""
    root = _out_dir(args) / f"{args.benchmark}-ablation"
    seeds = _parse_seeds(args.seeds)
    overrides = _overrides(args)
    rows = []
    for mode in MODES:
        manifest = ExperimentManifest(args.benchmark, mode, seeds, overrides, root / mode)
        manifest.write()
        results = run_seeds(_jobs(manifest, manifest.out_dir, args), args.workers)
        rows.append(((mode,), write_summary_csv(results, manifest.out_dir / "summary.csv")))

    write_table_csv(["mode"], rows, root / "ablation.csv")
    print("\n" + "-" * 70)
    for (mode,), agg in rows:
        print_aggregate(mode, agg)
    print(f"\n  Outputs in {root}")
    return 0


def parse_sweep_values(param: str, text: str) -> list[tuple[str, dict[str, Any]]]:
    """
    Split --values into (label, overrides) pairs.

    `delay` takes t_d/t_r pairs; any other name must be a TrainConfig field.

    Raises:
        UsageError: On an empty list or malformed values
    """
    labels = [v.strip() for v in text.split(",") if v.strip()]
    if not labels:
        raise UsageError("--values needs at least one value")
    points = []
    for label in labels:
        try:
            if param == "delay":
                t_d, t_r = label.split("/")
                points.append((label, {"t_d": coerce_value("t_d", t_d), "t_r": coerce_value("t_r", t_r)}))
            else:
                points.append((label, {param: coerce_value(param, label)}))
        except (ConfigError, ValueError) as e:
            raise UsageError(f"Bad sweep value {label!r} for {param}: {e}") from e
    return points


def cmd_sweep(args: argparse.Namespace) -> int:
    """Grid over one hyperparameter; one summary row per value."""
    points = parse_sweep_values(args.param, args.values)
    seeds = _parse_seeds(args.seeds)
    base = _overrides(args)
    root = _out_dir(args) / f"{args.benchmark}-{args.mode}-sweep-{args.param}"
    rows = []
    for label, values in points:
        overrides = dict(base)
        overrides.update(values)
        run_dir = root / label.replace("/", "_")
        manifest = ExperimentManifest(args.benchmark, args.mode, seeds, overrides, run_dir)
        manifest.write()
        results = run_seeds(_jobs(manifest, run_dir, args), args.workers)
        rows.append(((args.param, label), write_summary_csv(results, run_dir / "summary.csv")))

    write_table_csv(["param", "value"], rows, root / "sweep.csv")
    print("\n" + "-" * 70)
    for (_, label), agg in rows:
        print_aggregate(f"{args.param}={label}", agg)
    print(f"\n  Outputs in {root}")
    return 0


def _landscape_anchors(args: argparse.Namespace):
    print(f"Training {len(landscape.VALLEY_ANCHORS)} anchor networks ({args.steps} steps each)...")
    return landscape.parameter_space_anchors(seed=args.seed, steps=args.steps)


def cmd_landscape(args: argparse.Namespace) -> int:
    """Export a residual-loss slice through three anchors."""
    root = _out_dir(args) / "landscape"
    if args.space == "function":
        result = landscape.function_space_slice(n=args.grid)
        print(f"Valley flatness (max - min along constant shifts): {landscape.valley_flatness():.3e}")
    else:
        if args.trajectory_every < 1:
            raise UsageError(f"--trajectory-every must be >= 1, got {args.trajectory_every}")
        print(f"Training {len(landscape.VALLEY_ANCHORS)} anchor networks ({args.steps} steps each)...")
        thetas, runs = landscape.parameter_space_runs(args.seed, args.steps, args.trajectory_every)
        result = landscape.parameter_space_slice(thetas, n=args.grid)
        trajectory_path = root / "parameter_trajectory.csv"
        write_trajectory_csv(landscape.parameter_space_trajectories(result, runs), trajectory_path)
        print(f"  Anchor trajectories written to {trajectory_path}")

    path = root / f"{args.space}_slice.csv"
    write_slice_csv(result.grid, path)
    for i, anchor in enumerate(result.anchors):
        alpha, beta = result.plane.coordinates(anchor)
        print(f"  anchor {i}: (α, β) = ({alpha:+.4f}, {beta:+.4f})")
    print(f"\n  Slice written to {path}")
    return 0


def write_similarity_csv(table, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["anchor_i", "anchor_j", "similarity"])
        for i, j, s in table.similarities:
            writer.writerow([i, j, _fmt(s)])


def cmd_hessian(args: argparse.Namespace) -> int:
    """Hessian spectra at three anchors plus pairwise low-curvature similarity."""
    dimension = landscape.GRID_POINTS if args.space == "function" else landscape.LANDSCAPE_SPEC.n_params
    k = args.k if args.k is not None else (
        landscape.FUNCTION_SPACE_K if args.space == "function" else landscape.PARAMETER_SPACE_K
    )
    if not 1 <= k <= dimension:
        raise UsageError(f"--k must be in [1, {dimension}] for {args.space} space, got {k}")

    if args.space == "function":
        reports = landscape.function_space_hessians(h=args.h, k=k)
    else:
        reports = landscape.parameter_space_hessians(_landscape_anchors(args), h=args.h, k=k)

    root = _out_dir(args) / "hessian" / args.space
    for i, report in enumerate(reports):
        write_hessian_csv(report, root / f"anchor_{i}.csv")
    table = landscape.hessian_table(reports)
    write_similarity_csv(table, root / "similarity.csv")

    print(f"\nHessian statistics ({args.space} space, k={k}):")
    for i, kappa in enumerate(table.condition_numbers):
        shown = "∞" if math.isinf(kappa) else f"{kappa:.3e}"
        print(f"  anchor {i}: κ = {shown}")
    print(f"  mean Sim(k={k}) = {table.mean_similarity * 100:.1f}%")
    print(f"\n  Outputs in {root}")
    return 0


# Argument parsing

def _add_training_flags(parser: argparse.ArgumentParser, with_mode: bool = True) -> None:
    parser.add_argument(
        "--benchmark",
        type=str,
        required=True,
        choices=list(BENCHMARK_DEFAULTS),
        help="Benchmark problem",
    )
    if with_mode:
        parser.add_argument(
            "--mode",
            type=str,
            default="caml",
            choices=MODES,
            help="Training mode (default: caml)",
        )
    parser.add_argument("--seeds", type=str, default="1,2,3,4,5", help="Comma-separated seeds (default: 1,2,3,4,5)")
    parser.add_argument("--eta", type=float, default=None, help="Adam learning rate")
    parser.add_argument("--w-res", dest="w_res", type=float, default=None, help="Residual loss weight")
    parser.add_argument("--w-bc", dest="w_bc", type=float, default=None, help="Boundary loss weight")
    parser.add_argument("--t-min", dest="t_min", type=int, default=None, help="Minimum iterations")
    parser.add_argument("--t-max", dest="t_max", type=int, default=None, help="Maximum iterations")
    parser.add_argument("--l2-stop", dest="l2_stop", type=float, default=None, help="Relative L2 stopping threshold")
    parser.add_argument("--t-d", dest="t_d", type=int, default=None, help="Residual delay steps")
    parser.add_argument("--t-r", dest="t_r", type=int, default=None, help="Residual ramp steps")
    parser.add_argument("--k-init", dest="k_init", type=int, default=None, help="Newton iterations at the first step")
    parser.add_argument("--k-few", dest="k_few", type=int, default=None, help="Newton iterations per later step")
    parser.add_argument("--t-c", dest="t_c", type=int, default=None, help="Step at which the nonlinear offset freezes")
    parser.add_argument("--n-interior", dest="n_interior", type=int, default=None, help="Interior collocation points")
    parser.add_argument("--n-per-edge", dest="n_per_edge", type=int, default=None, help="Collocation points per boundary segment")
    parser.add_argument("--config", type=Path, default=None, help="key=value config file (flags override it)")
    parser.add_argument("--out", type=Path, default=None, help="Output root (default: $CAML_OUT_DIR or runs/)")
    parser.add_argument("--workers", type=int, default=1, help="Parallel seed processes (default: 1)")
    parser.add_argument("--verbose", action="store_true", help="Write a markdown log with per-step JSON blocks to logs/")
    parser.add_argument(
        "--export-collocation",
        dest="export_collocation",
        action="store_true",
        help="Write each seed's collocation set as CSV",
    )


def _add_landscape_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--space",
        type=str,
        default="function",
        choices=("function", "parameter"),
        help="Function space (grid values) or parameter space (trained networks)",
    )
    parser.add_argument("--seed", type=int, default=0, help="Initialization seed of the anchor networks")
    parser.add_argument("--steps", type=int, default=3000, help="Training steps per anchor network (default: 3000)")
    parser.add_argument("--out", type=Path, default=None, help="Output root (default: $CAML_OUT_DIR or runs/)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="CAML Experiments - constraint-aligned PINN training harness",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Heat with the default table row, five seeds
  python caml_experiments.py run --benchmark heat --mode caml

  # Vanilla baseline with a different learning rate
  python caml_experiments.py run --benchmark heat --mode vanilla --eta 5e-4

  # Ablation of the two mechanisms
  python caml_experiments.py ablate --benchmark heat --seeds 1,2,3,4,5

  # Delay schedule sensitivity
  python caml_experiments.py sweep --benchmark poisson --param delay --values 0/0,40/160,200/800

  # Residual loss slice and Hessian statistics on the 1-D valley problem
  python caml_experiments.py landscape --space function
  python caml_experiments.py hessian --space parameter --k 100

Config Files:
  key=value lines using TrainConfig field names, e.g. eta=5e-4.
  Values from flags override values from the file.

Environment Variables:
  CAML_OUT_DIR         Default output root (default: runs)
  CAML_NUM_THREADS     Torch intra-op thread count
        """,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Train seeds of one benchmark and mode")
    _add_training_flags(run)
    run.add_argument(
        "--trajectory-every",
        dest="trajectory_every",
        type=int,
        default=0,
        help="Keep θ every N updates and write a residual-loss slice with the projected path (default: off)",
    )
    run.add_argument(
        "--trajectory-grid",
        dest="trajectory_grid",
        type=int,
        default=21,
        help="Resolution per axis of the trajectory slice (default: 21)",
    )
    run.set_defaults(handler=cmd_run)

    ablate = sub.add_parser("ablate", help="Run vanilla, ac_only, dr_only and caml on shared seeds")
    _add_training_flags(ablate, with_mode=False)
    ablate.set_defaults(handler=cmd_ablate)

    sweep = sub.add_parser("sweep", help="Grid over one hyperparameter")
    _add_training_flags(sweep)
    sweep.add_argument("--param", type=str, required=True, help="'delay' (t_d/t_r pairs) or a config field name")
    sweep.add_argument("--values", type=str, required=True, help="Comma-separated values, e.g. 0/0,40/160")
    sweep.set_defaults(handler=cmd_sweep)

    land = sub.add_parser("landscape", help="Export a residual-loss slice of the 1-D valley problem")
    _add_landscape_flags(land)
    land.add_argument("--grid", type=int, default=51, help="Slice resolution per axis (default: 51)")
    land.add_argument(
        "--trajectory-every",
        dest="trajectory_every",
        type=int,
        default=100,
        help="Parameter space: anchor checkpoint interval for parameter_trajectory.csv (default: 100)",
    )
    land.set_defaults(handler=cmd_landscape)

    hess = sub.add_parser("hessian", help="Hessian spectra and low-curvature subspace similarity")
    _add_landscape_flags(hess)
    hess.add_argument("--k", type=int, default=None, help="Low-curvature subspace size (default: 1 function, 100 parameter)")
    hess.add_argument("--h", type=float, default=1e-3, help="Finite-difference step (default: 1e-3)")
    hess.set_defaults(handler=cmd_hessian)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point. Returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)

    if getattr(args, "workers", 1) < 1:
        parser.error("--workers must be >= 1")

    try:
        configure_threads()
        return args.handler(args)
    except (UsageError, ConfigError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        print("\n\nInterrupted by user")
        return 1
    except Exception as e:
        print(f"\nFatal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
