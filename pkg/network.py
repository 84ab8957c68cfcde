"""
MLP Backbone
============

Fully connected tanh network u_θ over a flat parameter vector.

The network is evaluated two ways: on DualTaylor inputs (value plus
spatial gradient and Hessian of every output) for residual assembly, and
on plain tensors for evaluation grids. Both paths apply the same
operations in the same order so their values agree bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
import torch

from ad_core import DTYPE, DualTaylor, dt_affine, dt_tanh, seed_inputs


ACTIVATIONS = ("tanh",)

CHECKPOINT_MAGIC = "CAMLCKPT"


@dataclass(frozen=True)
class MlpSpec:
    """Shape of the tanh MLP."""

    input_dim: int = 2
    output_dim: int = 1
    hidden_layers: int = 4
    hidden_width: int = 64
    activation: str = "tanh"

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be >= 1")
        if self.hidden_layers < 1:
            raise ValueError("hidden_layers must be >= 1")
        if self.hidden_width < 1:
            raise ValueError("hidden_width must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(
                f"Unsupported activation: {self.activation}\n"
                f"Available activations: {', '.join(ACTIVATIONS)}"
            )

    @property
    def widths(self) -> list[int]:
        return [self.input_dim] + [self.hidden_width] * self.hidden_layers + [self.output_dim]

    @property
    def n_params(self) -> int:
        w = self.widths
        return sum(w[k] * w[k + 1] + w[k + 1] for k in range(len(w) - 1))

    def header(self) -> str:
        return (
            f"{CHECKPOINT_MAGIC} input_dim={self.input_dim} output_dim={self.output_dim} "
            f"hidden_layers={self.hidden_layers} hidden_width={self.hidden_width} "
            f"activation={self.activation} n_params={self.n_params}"
        )


@dataclass(frozen=True)
class LayerBlock:
    """Where one layer's weight and bias live inside θ."""

    weight: slice
    weight_shape: tuple[int, int]  # (fan_in, fan_out)
    bias: slice


def build_layout(spec: MlpSpec) -> tuple[LayerBlock, ...]:
    """Map each layer to contiguous weight and bias blocks of θ."""
    blocks = []
    offset = 0
    w = spec.widths
    for k in range(len(w) - 1):
        fan_in, fan_out = w[k], w[k + 1]
        weight = slice(offset, offset + fan_in * fan_out)
        offset = weight.stop
        bias = slice(offset, offset + fan_out)
        offset = bias.stop
        blocks.append(LayerBlock(weight, (fan_in, fan_out), bias))
    return tuple(blocks)


class ParamVector:
    """Flat parameter vector θ together with its layer layout."""

    def __init__(self, data: torch.Tensor, spec: MlpSpec):
        if data.dim() != 1 or data.shape[0] != spec.n_params:
            raise ValueError(
                f"Parameter vector of length {spec.n_params} expected, got {tuple(data.shape)}"
            )
        self.data = data
        self.spec = spec
        self.layout = build_layout(spec)

    def __len__(self) -> int:
        return self.data.shape[0]

    def weight(self, k: int) -> torch.Tensor:
        block = self.layout[k]
        return self.data[block.weight].view(block.weight_shape)

    def bias(self, k: int) -> torch.Tensor:
        return self.data[self.layout[k].bias]

    def with_data(self, data: torch.Tensor) -> "ParamVector":
        """Same layout over a different flat vector (e.g. a tape leaf)."""
        return ParamVector(data, self.spec)

    def clone(self) -> "ParamVector":
        return ParamVector(self.data.detach().clone(), self.spec)


def init_params(spec: MlpSpec, seed: int) -> ParamVector:
    """
    Glorot-uniform weights and zero biases, deterministic per seed.

    Args:
        spec: Network shape
        seed: Seed for a private torch generator

    Returns:
        Freshly initialized ParamVector
    """
    gen = torch.Generator().manual_seed(int(seed))
    data = torch.zeros(spec.n_params, dtype=DTYPE)
    for block in build_layout(spec):
        fan_in, fan_out = block.weight_shape
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        sample = torch.rand(fan_in * fan_out, generator=gen, dtype=DTYPE)
        data[block.weight] = (2.0 * sample - 1.0) * bound
    return ParamVector(data, spec)


def forward(theta: ParamVector, x: Union[DualTaylor, torch.Tensor]) -> DualTaylor:
    """
    Evaluate the network on Taylor-seeded inputs.

    Args:
        theta: Parameters
        x: Seeded inputs with value (N, input_dim), or raw coordinates
            which are seeded here

    Returns:
        DualTaylor with value (N, output_dim)
    """
    h = x if isinstance(x, DualTaylor) else seed_inputs(x)
    n_layers = len(theta.layout)
    for k in range(n_layers):
        h = dt_affine(h, theta.weight(k), theta.bias(k))
        if k < n_layers - 1:
            h = dt_tanh(h)
    return h


def forward_plain(theta: ParamVector, x: torch.Tensor) -> torch.Tensor:
    """Value-only evaluation, shape (N, output_dim)."""
    h = torch.as_tensor(x, dtype=DTYPE)
    n_layers = len(theta.layout)
    for k in range(n_layers):
        h = h @ theta.weight(k) + theta.bias(k)
        if k < n_layers - 1:
            h = torch.tanh(h)
    return h


def save_checkpoint(path: Path, theta: ParamVector) -> None:
    """Write a text header line followed by θ as little-endian float64."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = theta.data.detach().numpy().astype("<f8").tobytes()
    with open(path, "wb") as f:
        f.write((theta.spec.header() + "\n").encode("ascii"))
        f.write(payload)


def _parse_header(line: str) -> MlpSpec:
    parts = line.split()
    if not parts or parts[0] != CHECKPOINT_MAGIC:
        raise ValueError("Not a checkpoint file (missing header)")
    fields = dict(p.split("=", 1) for p in parts[1:])
    spec = MlpSpec(
        input_dim=int(fields["input_dim"]),
        output_dim=int(fields["output_dim"]),
        hidden_layers=int(fields["hidden_layers"]),
        hidden_width=int(fields["hidden_width"]),
        activation=fields["activation"],
    )
    if int(fields["n_params"]) != spec.n_params:
        raise ValueError("Checkpoint header is inconsistent with its network shape")
    return spec


def load_checkpoint(path: Path) -> ParamVector:
    """Read a checkpoint written by save_checkpoint."""
    with open(path, "rb") as f:
        header = f.readline().decode("ascii")
        spec = _parse_header(header)
        payload = f.read()
    values = np.frombuffer(payload, dtype="<f8")
    if values.shape[0] != spec.n_params:
        raise ValueError(
            f"Checkpoint payload holds {values.shape[0]} values, expected {spec.n_params}"
        )
    return ParamVector(torch.from_numpy(values.astype(np.float64).copy()), spec)
