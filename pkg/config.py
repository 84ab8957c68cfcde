"""
Experiment Configuration
========================

Training hyperparameters, per-benchmark default tables and the
key=value config file format.

Resolution order is: benchmark defaults, then the config file, then
command-line flags. Config files use the same syntax as .env files:

    # heat.cfg
    eta=5e-4
    t_min=4000
    n_interior=4000
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import torch
from dotenv import dotenv_values

from caml_loss import ALWAYS_ON, DelaySchedule, OffsetState
from network import MlpSpec


MODES = ("vanilla", "ac_only", "dr_only", "caml")

DEFAULT_OUT_DIR = "runs"


class ConfigError(ValueError):
    """Raised for unknown keys, bad values or inconsistent settings."""
    pass


@dataclass(frozen=True)
class TrainConfig:
    """All hyperparameters of one training run."""

    benchmark: str = "heat"
    mode: str = "caml"
    seed: int = 1
    eta: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    w_res: float = 1.0
    w_bc: float = 1.0
    t_min: int = 6000
    t_max: int = 20000
    l2_stop: float = 2e-3
    t_d: int = 25
    t_r: int = 50
    k_init: int = 10
    k_few: int = 2
    t_c: int = 1000
    n_interior: int = 8000
    n_per_edge: int = 600
    eval_grid: int = 101
    eval_interval: int = 25
    hidden_layers: int = 4
    hidden_width: int = 64
    print_every: int = 500

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"Unknown mode: {self.mode}\nAvailable modes: {', '.join(MODES)}")
        if not 0 < self.t_min <= self.t_max:
            raise ConfigError(f"Need 0 < t_min <= t_max, got t_min={self.t_min}, t_max={self.t_max}")
        if self.l2_stop <= 0:
            raise ConfigError("l2_stop must be positive")
        if self.eta <= 0 or self.w_res <= 0 or self.w_bc <= 0:
            raise ConfigError("eta, w_res and w_bc must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.eps_adam <= 0:
            raise ConfigError("Adam constants need 0 <= beta < 1 and eps > 0")
        if self.t_d < 0 or self.t_r < 0:
            raise ConfigError("t_d and t_r must be >= 0")
        if self.k_init < 1 or self.k_few < 1 or self.t_c < 1:
            raise ConfigError("k_init, k_few and t_c must be >= 1")
        if self.n_interior < 1 or self.n_per_edge < 1:
            raise ConfigError("Collocation counts must be >= 1")
        if self.eval_grid < 2 or self.eval_interval < 1 or self.print_every < 0:
            raise ConfigError("eval_grid must be >= 2 and eval_interval >= 1")

    @property
    def solves_offset(self) -> bool:
        return self.mode in ("ac_only", "caml")

    @property
    def gates_residual(self) -> bool:
        return self.mode in ("dr_only", "caml")

    @property
    def schedule(self) -> DelaySchedule:
        return DelaySchedule(self.t_d, self.t_r)

    @property
    def active_schedule(self) -> DelaySchedule:
        """Schedule actually applied under this mode."""
        return self.schedule if self.gates_residual else ALWAYS_ON

    def offset_state(self) -> OffsetState:
        return OffsetState(c=0.0, frozen=False, k_init=self.k_init, k_few=self.k_few, t_c=self.t_c)

    def network_spec(self, input_dim: int, output_dim: int) -> MlpSpec:
        return MlpSpec(
            input_dim=input_dim,
            output_dim=output_dim,
            hidden_layers=self.hidden_layers,
            hidden_width=self.hidden_width,
        )

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}

# Per-benchmark rows; unlisted keys keep the TrainConfig defaults
BENCHMARK_DEFAULTS: dict[str, dict[str, Any]] = {
    "heat": {
        "eta": 1e-3, "w_res": 1.0, "w_bc": 5.0, "t_min": 6000, "t_max": 20000,
        "l2_stop": 2e-3, "t_d": 25, "t_r": 50,
    },
    "poisson": {
        "eta": 1e-3, "w_res": 1.0, "w_bc": 100.0, "t_min": 6000, "t_max": 20000,
        "l2_stop": 1e-2, "t_d": 200, "t_r": 800,
    },
    "ns": {
        "eta": 1e-3, "w_res": 1.0, "w_bc": 100.0, "t_min": 6000, "t_max": 20000,
        "l2_stop": 5e-3, "t_d": 25, "t_r": 50, "k_init": 10, "k_few": 2, "t_c": 1000,
    },
    "helmholtz": {
        "eta": 1e-3, "w_res": 1.0, "w_bc": 10.0, "t_min": 4000, "t_max": 20000,
        "l2_stop": 1e-3, "t_d": 25, "t_r": 50,
    },
    "toy_poisson": {
        "eta": 1e-3, "w_res": 1.0, "w_bc": 1.0, "t_min": 6000, "t_max": 20000,
        "l2_stop": 5e-3, "t_d": 0, "t_r": 0,
    },
    "two_phase_poisson": {
        "eta": 1e-3, "w_res": 1.0, "w_bc": 1.0, "t_min": 6000, "t_max": 10000,
        "l2_stop": 1e-2, "t_d": 200, "t_r": 800, "hidden_layers": 5, "hidden_width": 80,
    },
}


def coerce_value(key: str, raw: Any) -> Any:
    """Convert a raw (usually string) value to the field's type."""
    if key not in FIELD_TYPES:
        known = ", ".join(FIELD_TYPES)
        raise ConfigError(f"Unknown config key: {key}\nKnown keys: {known}")
    kind = FIELD_TYPES[key]
    try:
        if kind in ("int", int):
            value = float(raw)
            if not value.is_integer():
                raise ValueError(f"not an integer: {raw}")
            return int(value)
        if kind in ("float", float):
            return float(raw)
        return str(raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Bad value for {key}: {raw!r} ({e})") from e


def load_config_file(path: Path) -> dict[str, Any]:
    """Parse a key=value config file into typed overrides."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    raw = dotenv_values(path)
    values = {}
    for key, value in raw.items():
        if value is None:
            raise ConfigError(f"Config key without value: {key}")
        values[key] = coerce_value(key, value)
    return values


def resolve_config(
    benchmark: str,
    file_values: Optional[dict[str, Any]] = None,
    overrides: Optional[dict[str, Any]] = None,
) -> TrainConfig:
    """
    Merge defaults, config file values and flag overrides.

    Overrides with value None are ignored.

    Raises:
        ConfigError: On unknown benchmarks, keys or invalid combinations
    """
    if benchmark not in BENCHMARK_DEFAULTS:
        available = ", ".join(BENCHMARK_DEFAULTS)
        raise ConfigError(f"Unknown benchmark: {benchmark}\nAvailable benchmarks: {available}")
    merged: dict[str, Any] = dict(BENCHMARK_DEFAULTS[benchmark])
    for source in (file_values or {}, overrides or {}):
        for key, value in source.items():
            if value is None:
                continue
            merged[key] = coerce_value(key, value)
    merged["benchmark"] = benchmark
    return TrainConfig(**merged)


@dataclass(frozen=True)
class ExperimentManifest:
    """One CLI invocation: benchmark, mode, seeds and resolved settings."""

    benchmark: str
    mode: str
    seeds: tuple[int, ...]
    overrides: dict[str, Any] = field(default_factory=dict)
    out_dir: Path = Path(DEFAULT_OUT_DIR)

    def __post_init__(self):
        if self.benchmark not in BENCHMARK_DEFAULTS:
            raise ConfigError(f"Unknown benchmark: {self.benchmark}")
        if self.mode not in MODES:
            raise ConfigError(f"Unknown mode: {self.mode}")
        if not self.seeds:
            raise ConfigError("At least one seed is required")

    def config_for(self, seed: int, mode: Optional[str] = None) -> TrainConfig:
        values = dict(self.overrides)
        values.update(seed=seed, mode=mode or self.mode)
        return resolve_config(self.benchmark, overrides=values)

    def write(self, path: Optional[Path] = None) -> Path:
        """Echo the manifest and the resolved config as JSON."""
        path = Path(path) if path is not None else self.out_dir / "manifest.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            "benchmark": self.benchmark,
            "mode": self.mode,
            "seeds": list(self.seeds),
            "overrides": self.overrides,
            "resolved": self.config_for(self.seeds[0]).to_dict(),
        }
        with open(path, "w") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write("\n")
        return path


def output_root() -> Path:
    """Default output root, from CAML_OUT_DIR."""
    return Path(os.environ.get("CAML_OUT_DIR", DEFAULT_OUT_DIR))


def configure_threads() -> None:
    """Apply CAML_NUM_THREADS to torch's intra-op pool if set."""
    threads = os.environ.get("CAML_NUM_THREADS")
    if threads:
        try:
            torch.set_num_threads(int(threads))
        except ValueError as e:
            raise ConfigError(f"CAML_NUM_THREADS must be an integer, got {threads!r}") from e
