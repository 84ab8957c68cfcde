"""
Progress Tracking Utilities
===========================

Per-step run records, run summaries, console progress and the optional
verbose markdown log for training runs.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from datetime import datetime
from pathlib import Path
from typing import TYPE_CHECKING, Any, Optional

from diagnostics import positive_cos_fraction

if TYPE_CHECKING:
    import torch


CSV_HEADER = [
    "step",
    "loss_res",
    "loss_bc",
    "loss_total",
    "lambda",
    "c",
    "cos_phi",
    "grad_norm_ratio",
    "rel_l2",
    "cum_param_dist",
]


def _fmt(value: Optional[float]) -> str:
    if value is None:
        return ""
    return format(float(value), ".17g")


def _parse(text: str) -> Optional[float]:
    return None if text == "" else float(text)


@dataclass(frozen=True)
class StepRecord:
    """Diagnostics of one training step."""

    step: int
    loss_res: float
    loss_bc: float
    loss_total: float
    lam: float
    c: float
    cos_phi: Optional[float]
    grad_norm_ratio: float
    rel_l2: Optional[float]
    cum_param_dist: float

    def row(self) -> list[str]:
        return [
            str(self.step),
            _fmt(self.loss_res),
            _fmt(self.loss_bc),
            _fmt(self.loss_total),
            _fmt(self.lam),
            _fmt(self.c),
            _fmt(self.cos_phi),
            _fmt(self.grad_norm_ratio),
            _fmt(self.rel_l2),
            _fmt(self.cum_param_dist),
        ]

    @classmethod
    def from_row(cls, row: dict[str, str]) -> "StepRecord":
        return cls(
            step=int(row["step"]),
            loss_res=float(row["loss_res"]),
            loss_bc=float(row["loss_bc"]),
            loss_total=float(row["loss_total"]),
            lam=float(row["lambda"]),
            c=float(row["c"]),
            cos_phi=_parse(row["cos_phi"]),
            grad_norm_ratio=float(row["grad_norm_ratio"]),
            rel_l2=_parse(row["rel_l2"]),
            cum_param_dist=float(row["cum_param_dist"]),
        )


@dataclass(frozen=True)
class RunSummary:
    """Headline numbers of one run."""

    stp: Optional[int]
    l2_at_t_min: Optional[float]
    final_l2: Optional[float]
    pos_cos_fraction: Optional[float]
    final_c: float
    steps_run: int

    @property
    def success(self) -> bool:
        return self.stp is not None


class RunLog:
    """
    Append-only per-step log of a training run.

    Steps are numbered from 1 and every step gets exactly one record.
    """

    def __init__(self, t_min: int, l2_stop: float):
        self.t_min = t_min
        self.l2_stop = l2_stop
        self.records: list[StepRecord] = []
        self.final_theta = None
        # (updates applied, flat θ) pairs when the run keeps a trajectory
        self.trajectory: list[tuple[int, torch.Tensor]] = []
        self._stp: Optional[int] = None

    def __len__(self) -> int:
        return len(self.records)

    def append(self, record: StepRecord) -> None:
        expected = len(self.records) + 1
        if record.step != expected:
            raise ValueError(f"RunLog expects step {expected}, got {record.step}")
        self.records.append(record)
        if self._stp is None and record.rel_l2 is not None and record.rel_l2 < self.l2_stop:
            self._stp = record.step

    def cos_series(self) -> list[Optional[float]]:
        return [r.cos_phi for r in self.records]

    @property
    def stp(self) -> Optional[int]:
        """First logged step with rel_L2 below the threshold."""
        return self._stp

    def l2_at(self, step: int) -> Optional[float]:
        if 1 <= step <= len(self.records):
            return self.records[step - 1].rel_l2
        return None

    @property
    def final_l2(self) -> Optional[float]:
        for r in reversed(self.records):
            if r.rel_l2 is not None:
                return r.rel_l2
        return None

    def summary(self) -> RunSummary:
        return RunSummary(
            stp=self.stp,
            l2_at_t_min=self.l2_at(self.t_min),
            final_l2=self.final_l2,
            pos_cos_fraction=positive_cos_fraction(self, upto=self.t_min),
            final_c=self.records[-1].c if self.records else 0.0,
            steps_run=len(self.records),
        )

    def write_csv(self, path: Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(CSV_HEADER)
            for r in self.records:
                writer.writerow(r.row())

    @classmethod
    def read_csv(cls, path: Path, t_min: int, l2_stop: float) -> "RunLog":
        log = cls(t_min, l2_stop)
        with open(path, newline="") as f:
            for row in csv.DictReader(f):
                log.append(StepRecord.from_row(row))
        return log


def print_run_header(benchmark: str, mode: str, seed: int, n_params: int) -> None:
    """Print a formatted header for one training run."""
    print("\n" + "=" * 70)
    print(f"  RUN: {benchmark} / {mode} / seed {seed}  ({n_params} parameters)")
    print("=" * 70)
    print()


def print_step_line(record: StepRecord, elapsed: float) -> None:
    cos = "   -   " if record.cos_phi is None else f"{record.cos_phi:+.3f}"
    l2 = "    -    " if record.rel_l2 is None else f"{record.rel_l2:.3e}"
    print(
        f"  step {record.step:>6}  loss {record.loss_total:.4e}  "
        f"res {record.loss_res:.3e}  bc {record.loss_bc:.3e}  "
        f"λ {record.lam:.2f}  c {record.c:+.4e}  cos {cos}  L2 {l2}  [{elapsed:.1f}s]"
    )


def _fmt_optional(value: Optional[float], spec: str) -> str:
    return "-" if value is None else format(value, spec)


def print_run_summary(summary: RunSummary, elapsed: float) -> None:
    """Print the headline numbers of a finished run."""
    stp = "-" if summary.stp is None else str(summary.stp)
    print()
    print(f"  Stp: {stp}")
    print(f"  L2 at T_min: {_fmt_optional(summary.l2_at_t_min, '.4e')}")
    print(f"  Final L2: {_fmt_optional(summary.final_l2, '.4e')}")
    if summary.pos_cos_fraction is None:
        print("  Positive-cos fraction: -")
    else:
        print(f"  Positive-cos fraction: {summary.pos_cos_fraction * 100:.2f}%")
    print(f"  Final c: {summary.final_c:+.6e}")
    print(f"  Steps run: {summary.steps_run}  ({elapsed:.1f}s)")


def _jsonable(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


class VerboseLog:
    """
    Markdown log with one timestamped JSON block per logged step.

    Written to logs/<benchmark>-<mode>-seed<k>-verbose-<timestamp>.md.
    """

    def __init__(self, benchmark: str, mode: str, seed: int, logs_dir: Path = Path("logs")):
        logs_dir.mkdir(parents=True, exist_ok=True)
        timestamp = datetime.now().strftime("%Y-%m-%d-%H%M%S")
        self.path = logs_dir / f"{benchmark}-{mode}-seed{seed}-verbose-{timestamp}.md"
        with open(self.path, "w", encoding="utf-8") as f:
            f.write(f"# Verbose Log: {benchmark} / {mode} / seed {seed}\n\n")
            f.write(f"**Started:** {datetime.now().isoformat()}\n\n")
            f.write("---\n\n")

    def log_json(self, title: str, data: Any) -> None:
        json_str = json.dumps(_jsonable(data), indent=4, default=str, ensure_ascii=False)
        timestamp = datetime.now().strftime("%Y-%m-%d %H:%M:%S")
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(f"## {title}\n\n")
            f.write(f"**Timestamp:** {timestamp}\n\n")
            f.write("```json\n")
            f.write(json_str)
            f.write("\n```\n\n")
            f.write("---\n\n")

    def log_config(self, config_dict: dict[str, Any]) -> None:
        self.log_json("Resolved config", config_dict)

    def log_step(self, record: StepRecord, elapsed: float) -> None:
        data = asdict(record)
        data["elapsed_s"] = round(elapsed, 3)
        self.log_json(f"Step {record.step}", data)
