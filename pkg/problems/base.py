"""
Benchmark Problem Base
======================

Common types for the steady-state PDE benchmarks: boundary segment
specifications, the per-point field view consumed by residual operators,
and the abstract problem interface.

Residual operators are written once against `Fields` and work unchanged
whether the offset c is absent, a plain number, or a one-dimensional
DualTaylor (used to differentiate the offset objective in c).
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import torch

from ad_core import (
    DTYPE,
    DualTaylor,
    dt_add,
    dt_cos,
    dt_cosh,
    dt_exp,
    dt_sin,
    dt_sinh,
    dt_stack,
    seed_inputs,
)


Value = Union[torch.Tensor, DualTaylor]
Offset = Union[float, DualTaylor]

PI = math.pi


# Elementary functions that accept tensors or DualTaylor values

def sin(x: Value) -> Value:
    return dt_sin(x) if isinstance(x, DualTaylor) else torch.sin(torch.as_tensor(x, dtype=DTYPE))


def cos(x: Value) -> Value:
    return dt_cos(x) if isinstance(x, DualTaylor) else torch.cos(torch.as_tensor(x, dtype=DTYPE))


def sinh(x: Value) -> Value:
    return dt_sinh(x) if isinstance(x, DualTaylor) else torch.sinh(torch.as_tensor(x, dtype=DTYPE))


def cosh(x: Value) -> Value:
    return dt_cosh(x) if isinstance(x, DualTaylor) else torch.cosh(torch.as_tensor(x, dtype=DTYPE))


def exp(x: Value) -> Value:
    return dt_exp(x) if isinstance(x, DualTaylor) else torch.exp(torch.as_tensor(x, dtype=DTYPE))


def stack_components(parts: Sequence[Value]) -> Value:
    """Stack per-component columns into (N, K)."""
    if any(isinstance(p, DualTaylor) for p in parts):
        return dt_stack(parts, dim=-1)
    shape = torch.broadcast_shapes(*(torch.as_tensor(p).shape for p in parts))
    return torch.stack([torch.as_tensor(p, dtype=DTYPE).expand(shape) for p in parts], dim=-1)


def coords(x: Value) -> tuple[Value, Value]:
    """Split (N, 2) points into x and y columns."""
    return x[..., 0], x[..., 1]


@dataclass(frozen=True)
class BoundarySegmentSpec:
    """
    One piece of the boundary with a uniform condition type.

    The condition is α u + β ∇u·n = g on the segment.
    """

    name: str
    sampler: Callable[[torch.Tensor], torch.Tensor]  # t in [0, 1) -> (M, 2)
    normal: Callable[[torch.Tensor], torch.Tensor]  # (M, 2) -> (M, 2)
    alpha: float
    beta: float
    g: Callable[[torch.Tensor], torch.Tensor]  # (M, 2) -> (M, K_bc)

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or (self.alpha == 0 and self.beta == 0):
            raise ValueError(f"Segment {self.name}: need α, β >= 0, not both zero")

    @property
    def kind(self) -> str:
        if self.beta == 0:
            return "dirichlet"
        if self.alpha == 0:
            return "neumann"
        return "robin"


class Fields:
    """
    Network outputs and their spatial derivatives at a batch of points.

    value is (N, n_out), grad (N, n_out, d), hess (N, n_out, d(d+1)/2).
    Components listed in `offset_fields` read back shifted by the
    current offset; derivatives never carry it.
    """

    def __init__(
        self,
        value: torch.Tensor,
        grad: torch.Tensor,
        hess: torch.Tensor,
        offset_fields: Sequence[int] = (0,),
        shift: Offset = 0.0,
    ):
        self.value = value
        self.grad = grad
        self.hess = hess
        self.offset_fields = tuple(offset_fields)
        self.shift = shift

    @classmethod
    def from_dual(cls, out: DualTaylor, offset_fields: Sequence[int] = (0,)) -> "Fields":
        return cls(out.value, out.grad, out.hess, offset_fields)

    @property
    def n_points(self) -> int:
        return self.value.shape[0]

    @property
    def dim(self) -> int:
        return self.grad.shape[-1]

    def u(self, k: int = 0) -> Value:
        base = self.value[:, k]
        if k not in self.offset_fields:
            return base
        if isinstance(self.shift, DualTaylor):
            return dt_add(self.shift, base)
        return base + self.shift

    def component(self, k: int) -> DualTaylor:
        """Unshifted component k as a DualTaylor over the spatial coordinates."""
        return DualTaylor(self.value[:, k], self.grad[:, k], self.hess[:, k])

    def dx(self, k: int, i: int) -> torch.Tensor:
        return self.component(k).partial(i)

    def dxx(self, k: int, i: int, j: int) -> torch.Tensor:
        return self.component(k).second(i, j)

    def lap(self, k: int = 0) -> torch.Tensor:
        return self.component(k).laplacian()

    def normal_derivative(self, k: int, normals: torch.Tensor) -> torch.Tensor:
        return (self.grad[:, k, :] * normals).sum(dim=-1)

    def shifted(self, c: Offset) -> "Fields":
        return Fields(self.value, self.grad, self.hess, self.offset_fields, c)

    def detach(self) -> "Fields":
        shift = self.shift.detach() if isinstance(self.shift, DualTaylor) else self.shift
        return Fields(
            self.value.detach(), self.grad.detach(), self.hess.detach(), self.offset_fields, shift
        )


class BenchmarkProblem(ABC):
    """
    A steady-state PDE N[u] = f on Ω with boundary conditions on Γ.

    Subclasses provide the operator, source, exact solution and geometry.
    The residual is r = N[u] - f per interior point and component, and
    the boundary residual is s = α u + β ∇u·n - g per boundary point and
    constrained component.
    """

    name: str = "base"
    output_dim: int = 1
    # Output components that carry the offset c
    offset_fields: tuple[int, ...] = (0,)
    # Output components constrained on Γ, in column order of g
    boundary_fields: tuple[int, ...] = (0,)
    # True when c enters every residual affinely through γ and α
    linear_offset: bool = True
    bounds: tuple[tuple[float, float], tuple[float, float]] = ((0.0, 1.0), (0.0, 1.0))

    @property
    def input_dim(self) -> int:
        return len(self.bounds)

    @property
    @abstractmethod
    def segments(self) -> tuple[BoundarySegmentSpec, ...]:
        pass

    @abstractmethod
    def operator(self, fields: Fields, x: torch.Tensor) -> Value:
        """N[u] per point and residual component, (N, K)."""
        pass

    @abstractmethod
    def source(self, x: torch.Tensor) -> torch.Tensor:
        """f per point and residual component, (N, K)."""
        pass

    @abstractmethod
    def exact_solution(self, x: Value) -> Value:
        """u* per point and output component, (N, n_out)."""
        pass

    def residual(self, fields: Fields, x: torch.Tensor) -> Value:
        return self.operator(fields, x) - self.source(x)

    def boundary_residual(
        self,
        fields: Fields,
        normals: torch.Tensor,
        alpha: torch.Tensor,
        beta: torch.Tensor,
        g: torch.Tensor,
    ) -> Value:
        parts = []
        for col, k in enumerate(self.boundary_fields):
            flux = fields.normal_derivative(k, normals) * beta
            parts.append(fields.u(k) * alpha + flux - g[:, col])
        return stack_components(parts)

    def zeroth_coeff(self, x: torch.Tensor, fields: Optional[Fields] = None) -> torch.Tensor:
        """∂r/∂c per point and residual component, (N, K)."""
        return torch.zeros(x.shape[0], 1, dtype=DTYPE)

    def exact_fields(self, x: torch.Tensor) -> Fields:
        """Exact solution with its spatial derivatives, via Taylor propagation."""
        out = self.exact_solution(seed_inputs(x))
        return Fields.from_dual(out, self.offset_fields)

    def contains(self, x: torch.Tensor) -> torch.Tensor:
        """Strict interior membership mask."""
        mask = torch.ones(x.shape[0], dtype=torch.bool)
        for i, (lo, hi) in enumerate(self.bounds):
            mask &= (x[:, i] > lo) & (x[:, i] < hi)
        return mask

    def in_closure(self, x: torch.Tensor) -> torch.Tensor:
        """Membership mask for Ω ∪ Γ."""
        mask = torch.ones(x.shape[0], dtype=torch.bool)
        for i, (lo, hi) in enumerate(self.bounds):
            mask &= (x[:, i] >= lo) & (x[:, i] <= hi)
        return mask

    def sample_interior(self, n: int, generator: torch.Generator) -> torch.Tensor:
        """Uniform points strictly inside Ω by rejection from the bounding box."""
        lo = torch.tensor([b[0] for b in self.bounds], dtype=DTYPE)
        hi = torch.tensor([b[1] for b in self.bounds], dtype=DTYPE)
        kept = []
        count = 0
        while count < n:
            batch = lo + (hi - lo) * torch.rand(max(n, 64), len(self.bounds), generator=generator, dtype=DTYPE)
            batch = batch[self.contains(batch)]
            kept.append(batch)
            count += batch.shape[0]
        return torch.cat(kept)[:n]

    def __repr__(self) -> str:
        return f"{type(self).__name__}(name={self.name!r})"


# Unit-square edges, shared by every benchmark on [0, 1]²

def _edge(fixed_axis: int, fixed_value: float) -> Callable[[torch.Tensor], torch.Tensor]:
    def sampler(t: torch.Tensor) -> torch.Tensor:
        pts = torch.empty(t.shape[0], 2, dtype=DTYPE)
        pts[:, fixed_axis] = fixed_value
        pts[:, 1 - fixed_axis] = t
        return pts
    return sampler


def _constant_normal(n: tuple[float, float]) -> Callable[[torch.Tensor], torch.Tensor]:
    def normal(x: torch.Tensor) -> torch.Tensor:
        return torch.tensor(n, dtype=DTYPE).expand(x.shape[0], 2).clone()
    return normal


SQUARE_EDGES = {
    "left": (_edge(0, 0.0), _constant_normal((-1.0, 0.0))),
    "right": (_edge(0, 1.0), _constant_normal((1.0, 0.0))),
    "bottom": (_edge(1, 0.0), _constant_normal((0.0, -1.0))),
    "top": (_edge(1, 1.0), _constant_normal((0.0, 1.0))),
}


def square_segment(
    edge: str,
    alpha: float,
    beta: float,
    g: Callable[[torch.Tensor], torch.Tensor],
) -> BoundarySegmentSpec:
    sampler, normal = SQUARE_EDGES[edge]
    return BoundarySegmentSpec(edge, sampler, normal, alpha, beta, g)


def dirichlet_from(solution: Callable[[torch.Tensor], torch.Tensor], columns: Sequence[int]):
    """Boundary values taken from an exact solution's components."""
    cols = list(columns)

    def g(x: torch.Tensor) -> torch.Tensor:
        return solution(x)[:, cols]
    return g
