"""
Steady Heat Conduction
======================

Laplace equation on the unit square with fixed temperature on the left
and bottom edges and a prescribed outward heat flux on the right and top
edges. The reference solution is a truncated sine-hyperbolic series.
"""

from __future__ import annotations

import math

import torch

from ad_core import DTYPE
from .base import (
    BenchmarkProblem,
    BoundarySegmentSpec,
    Fields,
    Value,
    coords,
    sin,
    sinh,
    square_segment,
    stack_components,
)


T0 = 100.0
FLUX_Q = 15.0
SERIES_TERMS = 20


def _series_terms(n_terms: int = SERIES_TERMS) -> list[tuple[float, float]]:
    """(A_n, λ_n) for odd n = 1, 3, ..., 2M-1."""
    terms = []
    for m in range(1, n_terms + 1):
        n = 2 * m - 1
        lam = n * math.pi / 2.0
        a_n = -8.0 * FLUX_Q / (n * n * math.pi ** 2 * math.cosh(lam))
        terms.append((a_n, lam))
    return terms


def heat_exact(x: Value, y: Value, n_terms: int = SERIES_TERMS) -> Value:
    """
    Truncated series solution of the heat benchmark.

    Works on floats, tensors and DualTaylor values alike.
    """
    total = None
    for a_n, lam in _series_terms(n_terms):
        term = (sinh(lam * x) * sin(lam * y) + sinh(lam * y) * sin(lam * x)) * a_n
        total = term if total is None else total + term
    return total + T0


def flux_tail_bound(s: torch.Tensor, n_terms: int = SERIES_TERMS) -> torch.Tensor:
    """
    Bound on |∂u/∂n - g| along a flux edge at edge coordinate s in (0, 1).

    The series flux is -q (4/π) Σ sin(nπs/2)/n over the kept odd n, and
    Abel summation bounds the dropped tail by 1 / (N sin(πs/2)).
    """
    first_dropped = 2 * n_terms + 1
    return 4.0 * FLUX_Q / (math.pi * first_dropped * torch.sin(math.pi * s / 2.0))


class HeatProblem(BenchmarkProblem):
    """Δu = 0 on [0, 1]² with mixed Dirichlet and Neumann edges."""

    name = "heat"

    def __init__(self):
        dirichlet = lambda x: torch.full((x.shape[0], 1), T0, dtype=DTYPE)
        flux = lambda x: torch.full((x.shape[0], 1), -FLUX_Q, dtype=DTYPE)
        self._segments = (
            square_segment("left", 1.0, 0.0, dirichlet),
            square_segment("bottom", 1.0, 0.0, dirichlet),
            square_segment("right", 0.0, 1.0, flux),
            square_segment("top", 0.0, 1.0, flux),
        )

    @property
    def segments(self) -> tuple[BoundarySegmentSpec, ...]:
        return self._segments

    def operator(self, fields: Fields, x: torch.Tensor) -> Value:
        return fields.lap(0)[:, None]

    def source(self, x: torch.Tensor) -> torch.Tensor:
        return torch.zeros(x.shape[0], 1, dtype=DTYPE)

    def exact_solution(self, x: Value) -> Value:
        return stack_components([heat_exact(*coords(x))])


def heat_problem() -> HeatProblem:
    return HeatProblem()
