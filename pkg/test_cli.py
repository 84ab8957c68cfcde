#!/usr/bin/env python3
"""
Experiment Harness Tests
========================

Config resolution, argument validation, cross-seed aggregation and
small end-to-end invocations of caml_experiments.
Run with: python test_cli.py
"""

import contextlib
import csv
import io
import json
import sys
import tempfile
from pathlib import Path

from caml_experiments import (
    SeedResult,
    UsageError,
    aggregate,
    main as cli_main,
    parse_sweep_values,
    write_summary_csv,
)
from config import (
    ConfigError,
    ExperimentManifest,
    TrainConfig,
    coerce_value,
    load_config_file,
    resolve_config,
)
from testing_utils import run_tests


TINY_CONFIG = "hidden_layers=1\nhidden_width=8\neval_grid=11\neval_interval=1\nprint_every=0\n"


def _cli(argv: list[str]) -> int:
    """Run the CLI with output captured; SystemExit becomes its code."""
    sink = io.StringIO()
    with contextlib.redirect_stdout(sink), contextlib.redirect_stderr(sink):
        try:
            return cli_main(argv)
        except SystemExit as e:
            return e.code


def _expect(exc_type, fn, *args, **kwargs):
    try:
        fn(*args, **kwargs)
    except exc_type:
        return
    raise AssertionError(f"expected {exc_type.__name__}")


# Config

def test_resolution_order():
    config = resolve_config(
        "heat",
        file_values={"eta": "5e-4", "t_min": "10"},
        overrides={"eta": 2e-4, "t_d": None},
    )
    assert config.eta == 2e-4
    assert config.t_min == 10
    assert config.t_d == 25
    assert config.w_bc == 5.0
    assert config.benchmark == "heat"


def test_coercion():
    assert coerce_value("t_min", "4000") == 4000
    assert coerce_value("t_min", "1e3") == 1000
    assert coerce_value("eta", "5e-4") == 5e-4
    assert coerce_value("mode", "dr_only") == "dr_only"
    _expect(ConfigError, coerce_value, "t_min", "1.5")
    _expect(ConfigError, coerce_value, "learning_rate", "1e-3")
    _expect(ConfigError, resolve_config, "burgers")


def test_train_config_validation():
    _expect(ConfigError, TrainConfig, t_min=10, t_max=5)
    _expect(ConfigError, TrainConfig, mode="adaptive")
    _expect(ConfigError, TrainConfig, t_d=-1)
    _expect(ConfigError, TrainConfig, k_init=0)
    assert TrainConfig(mode="ac_only").solves_offset
    assert not TrainConfig(mode="ac_only").gates_residual
    assert TrainConfig(mode="dr_only").active_schedule.t_d == 25


def test_config_file():
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "heat.cfg"
        path.write_text("# heat overrides\neta=5e-4\nt_min=4000\n")
        assert load_config_file(path) == {"eta": 5e-4, "t_min": 4000}
        path.write_text("eta\n")
        _expect(ConfigError, load_config_file, path)
        _expect(ConfigError, load_config_file, Path(tmp) / "missing.cfg")


def test_manifest_json():
    with tempfile.TemporaryDirectory() as tmp:
        manifest = ExperimentManifest("poisson", "dr_only", (4, 5), {"eta": 5e-4}, Path(tmp))
        payload = json.loads(manifest.write().read_text())
    assert payload["seeds"] == [4, 5]
    assert payload["overrides"] == {"eta": 5e-4}
    assert payload["resolved"]["seed"] == 4
    assert payload["resolved"]["mode"] == "dr_only"
    assert payload["resolved"]["w_bc"] == 100.0
    _expect(ConfigError, ExperimentManifest, "poisson", "caml", ())


# Sweeps and aggregation

def test_parse_sweep_values():
    points = parse_sweep_values("delay", "0/0, 40/160")
    assert points == [("0/0", {"t_d": 0, "t_r": 0}), ("40/160", {"t_d": 40, "t_r": 160})]
    assert parse_sweep_values("eta", "1e-3,5e-4") == [("1e-3", {"eta": 1e-3}), ("5e-4", {"eta": 5e-4})]
    _expect(UsageError, parse_sweep_values, "delay", ",")
    _expect(UsageError, parse_sweep_values, "delay", "40")
    _expect(UsageError, parse_sweep_values, "warmup", "3")


def _results() -> list[SeedResult]:
    return [
        SeedResult(seed=1, stp=100, l2_at_t_min=1e-3, pos_cos_fraction=0.5, steps_run=100),
        SeedResult(seed=2, stp=200, l2_at_t_min=3e-3, pos_cos_fraction=0.7, steps_run=200),
        SeedResult(seed=3, l2_at_t_min=5e-3, pos_cos_fraction=0.6, steps_run=300),
        SeedResult(seed=4, error="OffsetDivergenceError: c = nan"),
    ]


def test_aggregate_statistics():
    agg = aggregate(_results())
    assert agg.stp == (150.0, 50.0)
    assert abs(agg.l2_at_t_min[0] - 3e-3) < 1e-15
    assert agg.n_success == 2 and agg.n_seeds == 4
    assert agg.cells()[0] == "150±50"
    assert aggregate([SeedResult(seed=1, error="x")]).cells()[:3] == ["-", "-", "-"]


def test_summary_csv():
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "summary.csv"
        write_summary_csv(_results(), path)
        with open(path, newline="", encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
    assert [r["seed"] for r in rows] == ["1", "2", "3", "4", "mean±std"]
    assert rows[2]["stp"] == "" and rows[2]["success"] == "0"
    assert rows[3]["error"].startswith("OffsetDivergenceError")
    assert rows[4]["success"] == "2/4"


# Command line

def test_argument_errors():
    with tempfile.TemporaryDirectory() as tmp:
        out = ["--out", tmp]
        assert _cli(["run", "--benchmark", "burgers"] + out) == 2
        assert _cli(["run", "--benchmark", "heat", "--workers", "0"] + out) == 2
        assert _cli(["sweep", "--benchmark", "heat", "--param", "delay", "--values", ","] + out) == 2
        assert _cli(["hessian", "--space", "function", "--k", "101"] + out) == 2
        assert _cli(["run", "--benchmark", "heat", "--seeds", "a,b"] + out) == 2
        assert _cli(["run", "--benchmark", "heat", "--trajectory-every", "-1"] + out) == 2

        bad = Path(tmp) / "bad.cfg"
        bad.write_text("learning_rate=1e-3\n")
        assert _cli(["run", "--benchmark", "heat", "--config", str(bad)] + out) == 2


def _tiny_run(root: Path, config: Path) -> Path:
    code = _cli([
        "run", "--benchmark", "heat", "--mode", "caml", "--seeds", "1",
        "--config", str(config), "--t-min", "2", "--t-max", "2",
        "--n-interior", "16", "--n-per-edge", "4", "--out", str(root),
    ])
    assert code == 0
    return root / "heat-caml"


def test_run_is_reproducible():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        config = tmp / "tiny.cfg"
        config.write_text(TINY_CONFIG)
        first = _tiny_run(tmp / "a", config)
        second = _tiny_run(tmp / "b", config)
        names = ["seed_1.csv", "seed_1.ckpt", "summary.csv", "manifest.json"]
        for name in names:
            assert (first / name).read_bytes() == (second / name).read_bytes(), name
        with open(first / "seed_1.csv", newline="") as f:
            assert len(list(csv.reader(f))) == 3
        resolved = json.loads((first / "manifest.json").read_text())["resolved"]
        assert resolved["hidden_width"] == 8 and resolved["t_max"] == 2


def test_landscape_command():
    with tempfile.TemporaryDirectory() as tmp:
        assert _cli(["landscape", "--space", "function", "--grid", "5", "--out", tmp]) == 0
        lines = (Path(tmp) / "landscape" / "function_slice.csv").read_text().splitlines()
    assert len(lines) == 26
    assert lines[0] == "alpha,beta,loss,log10_loss"


def test_run_writes_trajectory_slice():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        config = tmp / "tiny.cfg"
        config.write_text(TINY_CONFIG)
        code = _cli([
            "run", "--benchmark", "heat", "--mode", "caml", "--seeds", "1",
            "--config", str(config), "--t-min", "2", "--t-max", "2",
            "--n-interior", "16", "--n-per-edge", "4",
            "--trajectory-every", "1", "--trajectory-grid", "3", "--out", str(tmp),
        ])
        assert code == 0
        run_dir = tmp / "heat-caml"
        landscape_rows = (run_dir / "seed_1_landscape.csv").read_text().splitlines()
        with open(run_dir / "seed_1_trajectory.csv", newline="") as f:
            trajectory_rows = list(csv.reader(f))
    assert len(landscape_rows) == 10
    assert trajectory_rows[0] == ["run", "step", "alpha", "beta", "off_plane", "loss"]
    assert [row[1] for row in trajectory_rows[1:]] == ["0", "1", "2"]
    assert float(trajectory_rows[-1][2]) == 0.0 and float(trajectory_rows[-1][3]) == 0.0


def test_parameter_landscape_writes_trajectories():
    with tempfile.TemporaryDirectory() as tmp:
        assert _cli(["landscape", "--space", "parameter", "--trajectory-every", "0", "--out", tmp]) == 2
        assert _cli([
            "landscape", "--space", "parameter", "--steps", "2", "--grid", "3",
            "--trajectory-every", "1", "--out", tmp,
        ]) == 0
        root = Path(tmp) / "landscape"
        assert len((root / "parameter_slice.csv").read_text().splitlines()) == 10
        with open(root / "parameter_trajectory.csv", newline="") as f:
            rows = list(csv.reader(f))[1:]
    assert len(rows) == 9
    assert [(row[0], row[1]) for row in rows[:3]] == [("0", "0"), ("0", "1"), ("0", "2")]
    assert {row[0] for row in rows} == {"0", "1", "2"}


def _write_rows(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def test_results_checker_sweeps():
    sys.path.insert(0, str(Path(__file__).resolve().parent / "scripts"))
    import check_results

    sweep_header = ["param", "value", "stp", "l2_at_t_min", "pos_cos_fraction", "n_success", "n_seeds"]
    summary_header = ["seed", "stp", "l2_at_t_min", "pos_cos_fraction", "final_c", "success"]
    with tempfile.TemporaryDirectory() as tmp:
        out = Path(tmp)
        delay = out / "poisson-caml-sweep-delay" / "sweep.csv"
        successes = {"0/0": 0, "200/800": 4}
        _write_rows(delay, sweep_header, [
            ["delay", v, "", "", "", successes.get(v, 3), 5] for v in check_results.DELAY_VALUES
        ])

        root = out / "poisson-caml-sweep-l2_stop"
        stps = {"2e-2": [100, 200, 300, 400, 500], "1e-2": [200, 300, 400, 500, None], "5e-3": [400, 600, None, None, None]}
        _write_rows(root / "sweep.csv", sweep_header, [
            ["l2_stop", v, "", "", "", sum(s is not None for s in stps[v]), 5] for v in check_results.THRESHOLD_VALUES
        ])
        for v, values in stps.items():
            _write_rows(root / v / "summary.csv", summary_header, [
                [seed, "" if s is None else s, "", "", "", 0 if s is None else 1]
                for seed, s in enumerate(values, start=1)
            ])

        checker = check_results.Checker()
        with contextlib.redirect_stdout(io.StringIO()):
            check_results.check_delay_sweep(out, checker)
            check_results.check_threshold_sweep(out, checker)
        assert (checker.passed, checker.failed) == (5, 0)

        # A tighter threshold reached earlier than a looser one cannot come from one schedule
        _write_rows(root / "5e-3" / "summary.csv", summary_header, [
            [seed, 50, "", "", "", 1] for seed in range(1, 6)
        ])
        _write_rows(delay, sweep_header, [["delay", "0/0", "", "", "", 0, 5]])
        checker = check_results.Checker()
        with contextlib.redirect_stdout(io.StringIO()):
            check_results.check_delay_sweep(out, checker)
            check_results.check_threshold_sweep(out, checker)
        assert (checker.passed, checker.failed) == (1, 2)


def main():
    return run_tests(
        "experiment harness",
        [
            test_resolution_order,
            test_coercion,
            test_train_config_validation,
            test_config_file,
            test_manifest_json,
            test_parse_sweep_values,
            test_aggregate_statistics,
            test_summary_csv,
            test_argument_errors,
            test_run_is_reproducible,
            test_landscape_command,
            test_run_writes_trajectory_slice,
            test_parameter_landscape_writes_trajectories,
            test_results_checker_sweeps,
        ],
    )


if __name__ == "__main__":
    sys.exit(main())
