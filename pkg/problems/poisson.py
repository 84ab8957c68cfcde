"""
Poisson Family
==============

Manufactured Poisson problems Δu = f on the unit square with Dirichlet
data everywhere:

    u* = A sin(2πx) + B cos(3πy) + C x + D y + E + sin(πx) sin(πy)

The boundary data g is u* without the bubble term sin(πx) sin(πy), which
vanishes on Γ. Three parameter sets are provided: the main Poisson
benchmark, the large-amplitude two-phase demonstration, and the purely
Dirichlet toy problem where g = 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .base import (
    PI,
    BenchmarkProblem,
    BoundarySegmentSpec,
    Fields,
    Value,
    coords,
    cos,
    sin,
    square_segment,
    stack_components,
)


@dataclass(frozen=True)
class PoissonConstants:
    a: float
    b: float
    c: float
    d: float
    e: float


POISSON = PoissonConstants(30.0, 25.0, 18.0, 16.0, 10.0)
TWO_PHASE = PoissonConstants(20.0, 15.0, 8.0, 6.0, 0.0)
TOY = PoissonConstants(0.0, 0.0, 0.0, 0.0, 0.0)


class PoissonProblem(BenchmarkProblem):
    """Δu = f with the manufactured family above."""

    def __init__(self, name: str, constants: PoissonConstants):
        self.name = name
        self.k = constants
        self._segments = tuple(
            square_segment(edge, 1.0, 0.0, self.boundary_value)
            for edge in ("left", "right", "bottom", "top")
        )

    @property
    def segments(self) -> tuple[BoundarySegmentSpec, ...]:
        return self._segments

    def boundary_value(self, x: torch.Tensor) -> torch.Tensor:
        return self._boundary_part(*coords(x))[:, None]

    def _boundary_part(self, x: Value, y: Value) -> Value:
        k = self.k
        return sin(2 * PI * x) * k.a + cos(3 * PI * y) * k.b + x * k.c + y * k.d + k.e

    def exact_solution(self, x: Value) -> Value:
        xs, ys = coords(x)
        return stack_components([self._boundary_part(xs, ys) + sin(PI * xs) * sin(PI * ys)])

    def operator(self, fields: Fields, x: torch.Tensor) -> Value:
        return fields.lap(0)[:, None]

    def source(self, x: torch.Tensor) -> torch.Tensor:
        xs, ys = coords(x)
        k = self.k
        f = (
            -((2 * PI) ** 2) * k.a * torch.sin(2 * PI * xs)
            - ((3 * PI) ** 2) * k.b * torch.cos(3 * PI * ys)
            - 2 * PI ** 2 * torch.sin(PI * xs) * torch.sin(PI * ys)
        )
        return f[:, None]


def poisson_problem() -> PoissonProblem:
    return PoissonProblem("poisson", POISSON)


def two_phase_poisson_problem() -> PoissonProblem:
    return PoissonProblem("two_phase_poisson", TWO_PHASE)


def toy_poisson_problem() -> PoissonProblem:
    return PoissonProblem("toy_poisson", TOY)
