#!/usr/bin/env python3
"""
Results Checker
===============

Reads the summary CSVs written by caml_experiments.py and checks the
reproduction targets: the Heat headline, gradient-conflict mitigation,
the ablation structure, the Poisson delay and threshold sweeps, the
toy Poisson failure case and the two-phase trajectory exports.

Example Usage:
    python scripts/check_results.py --out runs
"""

import argparse
import csv
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np


HEAT_T_MIN = 6000


@dataclass(frozen=True)
class SeedRow:
    seed: int
    stp: Optional[int]
    l2_at_t_min: Optional[float]
    pos_cos_fraction: Optional[float]
    final_c: Optional[float]
    success: bool


def _opt(text: str, kind: Callable = float):
    return None if text == "" else kind(text)


def read_summary(path: Path) -> list[SeedRow]:
    """Per-seed rows of a summary.csv, without the trailing mean±std row."""
    if not path.exists():
        raise FileNotFoundError(f"Missing summary: {path}")
    rows = []
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            if not row["seed"].isdigit():
                continue
            rows.append(SeedRow(
                seed=int(row["seed"]),
                stp=_opt(row["stp"], int),
                l2_at_t_min=_opt(row["l2_at_t_min"]),
                pos_cos_fraction=_opt(row["pos_cos_fraction"]),
                final_c=_opt(row["final_c"]),
                success=row["success"] == "1",
            ))
    return rows


def median_stp(rows: list[SeedRow]) -> float:
    """Median Stp with failed seeds counted as never reaching the threshold."""
    return float(np.median([r.stp if r.stp is not None else math.inf for r in rows]))


def mean_pos_cos(rows: list[SeedRow]) -> float:
    values = [r.pos_cos_fraction for r in rows if r.pos_cos_fraction is not None]
    return float(np.mean(values)) if values else math.nan


class Checker:
    def __init__(self):
        self.passed = 0
        self.failed = 0

    def check(self, name: str, ok: bool, detail: str) -> None:
        status = "PASS" if ok else "FAIL"
        print(f"  [{status}] {name}: {detail}")
        if ok:
            self.passed += 1
        else:
            self.failed += 1


def check_heat(out: Path, checker: Checker) -> None:
    caml = read_summary(out / "heat-caml" / "summary.csv")
    vanilla = read_summary(out / "heat-vanilla" / "summary.csv")

    early = [r for r in caml if r.success and r.stp <= HEAT_T_MIN]
    checker.check("heat caml success", len(early) >= 4, f"{len(early)}/{len(caml)} seeds below 2e-3 by step {HEAT_T_MIN}")

    m_caml, m_vanilla = median_stp(caml), median_stp(vanilla)
    checker.check("heat speedup", m_vanilla >= 3.0 * m_caml, f"median Stp vanilla {m_vanilla} vs caml {m_caml}")

    l2 = [r.l2_at_t_min for r in caml if r.success]
    ok = all(v is not None and v < 5e-3 for v in l2)
    checker.check("heat caml L2@T_min", ok, ", ".join(f"{v:.3e}" for v in l2 if v is not None))

    cos_caml, cos_vanilla = mean_pos_cos(caml), mean_pos_cos(vanilla)
    checker.check(
        "gradient conflict",
        cos_caml >= 2.0 * cos_vanilla and cos_vanilla < 0.2,
        f"positive-cos fraction caml {cos_caml:.4f} vs vanilla {cos_vanilla:.4f}",
    )


def check_ablation(out: Path, checker: Checker) -> None:
    heat = {mode: read_summary(out / "heat-ablation" / mode / "summary.csv") for mode in ("vanilla", "ac_only", "dr_only")}
    m = {mode: median_stp(rows) for mode, rows in heat.items()}
    checker.check(
        "heat ablation order",
        m["ac_only"] < m["dr_only"] and m["ac_only"] < m["vanilla"],
        f"median Stp ac_only {m['ac_only']}, dr_only {m['dr_only']}, vanilla {m['vanilla']}",
    )

    poisson = read_summary(out / "poisson-ablation" / "caml" / "summary.csv")
    n_success = sum(r.success for r in poisson)
    checker.check("poisson caml success", n_success >= 3, f"{n_success}/{len(poisson)} seeds below 1e-2")


def check_toy_poisson(out: Path, checker: Checker) -> None:
    caml = read_summary(out / "toy_poisson-caml" / "summary.csv")
    vanilla = read_summary(out / "toy_poisson-vanilla" / "summary.csv")
    m_caml, m_vanilla = median_stp(caml), median_stp(vanilla)
    if math.isinf(m_vanilla):
        checker.check("toy poisson parity", False, "vanilla never reached the threshold")
    else:
        gap = abs(m_caml - m_vanilla) / m_vanilla
        checker.check("toy poisson parity", gap < 0.5, f"median Stp caml {m_caml} vs vanilla {m_vanilla} (gap {gap:.2f})")

    offsets = [abs(r.final_c) for r in caml if r.final_c is not None]
    checker.check(
        "toy poisson offset",
        bool(offsets) and max(offsets) < 10.0,
        "max |c| " + (f"{max(offsets):.3f}" if offsets else "n/a"),
    )


DELAY_VALUES = ("0/0", "40/160", "80/320", "120/480", "160/640", "200/800", "800/3200")
THRESHOLD_VALUES = ("2e-2", "1e-2", "5e-3")  # loosest first


def read_sweep(path: Path) -> dict[str, dict[str, str]]:
    """Rows of a sweep.csv keyed by swept value."""
    if not path.exists():
        raise FileNotFoundError(f"Missing sweep table: {path}")
    with open(path, newline="", encoding="utf-8") as f:
        return {row["value"]: row for row in csv.DictReader(f)}


def check_delay_sweep(out: Path, checker: Checker) -> None:
    root = out / "poisson-caml-sweep-delay"
    table = read_sweep(root / "sweep.csv")
    missing = [v for v in DELAY_VALUES if v not in table]
    checker.check("delay sweep rows", not missing, f"{len(table)} rows" + (f", missing {missing}" if missing else ""))
    if missing:
        return

    success = {v: int(table[v]["n_success"]) for v in DELAY_VALUES}
    checker.check(
        "delay sweep default",
        success["200/800"] >= 3,
        f"{success['200/800']}/{table['200/800']['n_seeds']} seeds succeed at t_d/t_r = 200/800",
    )
    checker.check(
        "delay sweep no-delay",
        success["0/0"] < success["200/800"],
        f"successes 0/0 {success['0/0']} vs 200/800 {success['200/800']}",
    )


def check_threshold_sweep(out: Path, checker: Checker) -> None:
    root = out / "poisson-caml-sweep-l2_stop"
    table = read_sweep(root / "sweep.csv")
    missing = [v for v in THRESHOLD_VALUES if v not in table]
    checker.check("threshold sweep rows", not missing, f"{len(table)} rows" + (f", missing {missing}" if missing else ""))
    if missing:
        return

    # Same seeds and schedule, so a tighter threshold can only be crossed later
    success = [int(table[v]["n_success"]) for v in THRESHOLD_VALUES]
    stp = [median_stp(read_summary(root / v / "summary.csv")) for v in THRESHOLD_VALUES]
    checker.check(
        "threshold sweep monotone",
        success == sorted(success, reverse=True) and stp == sorted(stp),
        ", ".join(f"{v}: {s} ok, median Stp {m}" for v, s, m in zip(THRESHOLD_VALUES, success, stp)),
    )


def check_two_phase(out: Path, checker: Checker) -> None:
    for mode in ("vanilla", "caml"):
        run_dir = out / f"two_phase_poisson-{mode}"
        rows = read_summary(run_dir / "summary.csv")
        paths = [run_dir / f"seed_{r.seed}_trajectory.csv" for r in rows]
        slices = [run_dir / f"seed_{r.seed}_landscape.csv" for r in rows]
        present = [p for p, s in zip(paths, slices) if p.exists() and s.exists()]
        checker.check(
            f"two-phase {mode} trajectories",
            bool(rows) and len(present) == len(rows),
            f"{len(present)}/{len(rows)} seeds with a trajectory slice",
        )
        finite = 0
        for path in present:
            with open(path, newline="", encoding="utf-8") as f:
                points = list(csv.DictReader(f))
            if len(points) >= 3 and math.isfinite(float(points[-1]["loss"])):
                finite += 1
        checker.check(
            f"two-phase {mode} final loss",
            finite == len(present) and bool(present),
            f"{finite}/{len(present)} trajectories end at a finite residual loss",
        )


def main() -> int:
    parser = argparse.ArgumentParser(description="Check reproduction CSVs")
    parser.add_argument("--out", type=Path, default=Path("runs"), help="Output root used for the runs (default: runs)")
    args = parser.parse_args()

    checker = Checker()
    for title, check in (
        ("Heat headline", check_heat),
        ("Ablations", check_ablation),
        ("Delay sweep", check_delay_sweep),
        ("Threshold sweep", check_threshold_sweep),
        ("Toy Poisson", check_toy_poisson),
        ("Two-phase demonstration", check_two_phase),
    ):
        print(f"\n{title}")
        try:
            check(args.out, checker)
        except FileNotFoundError as e:
            checker.check(title.lower(), False, str(e))

    print("\n" + "=" * 70)
    print(f"  Results: {checker.passed} passed, {checker.failed} failed")
    print("=" * 70)
    return 0 if checker.failed == 0 else 1


if __name__ == "__main__":
    sys.exit(main())
