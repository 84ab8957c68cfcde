"""
Generalized Helmholtz
=====================

Anisotropic diffusion-reaction problem

    -∇·(A ∇u) + q u = f

on the unit square with a circular hole, Dirichlet data from the exact
solution on the outer square and on the hole's rim. The tensor has
entries a11 = 1 + 0.3x, a22 = 1 + 0.3y, a12 = a21 = 0.15 sin(πx) sin(πy)
and the reaction coefficient is q = 2 + cos(πx) cos(πy).
"""

from __future__ import annotations

import math
from typing import Optional

import torch

from ad_core import DTYPE
from .base import (
    PI,
    BenchmarkProblem,
    BoundarySegmentSpec,
    Fields,
    Value,
    coords,
    cos,
    dirichlet_from,
    exp,
    sin,
    square_segment,
    stack_components,
)


U0 = 100.0
HOLE_CENTER = (0.5, 0.5)
HOLE_RADIUS = 0.25


def reaction(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    return 2.0 + torch.cos(PI * x) * torch.cos(PI * y)


def diffusion(x: torch.Tensor, y: torch.Tensor) -> dict[str, torch.Tensor]:
    """Tensor entries and the derivatives of a12 needed by the divergence."""
    sx, cx = torch.sin(PI * x), torch.cos(PI * x)
    sy, cy = torch.sin(PI * y), torch.cos(PI * y)
    return {
        "a11": 1.0 + 0.3 * x,
        "a22": 1.0 + 0.3 * y,
        "a12": 0.15 * sx * sy,
        "a12_x": 0.15 * PI * cx * sy,
        "a12_y": 0.15 * PI * sx * cy,
    }


def diffusion_term(x, y, ux, uy, uxx, uxy, uyy) -> torch.Tensor:
    """∇·(A ∇u) expanded, with ∂x a11 = ∂y a22 = 0.3."""
    a = diffusion(x, y)
    return (
        a["a11"] * uxx
        + 2.0 * a["a12"] * uxy
        + a["a22"] * uyy
        + (0.3 + a["a12_y"]) * ux
        + (0.3 + a["a12_x"]) * uy
    )


def _circle_sampler(t: torch.Tensor) -> torch.Tensor:
    angle = 2.0 * math.pi * t
    cx, cy = HOLE_CENTER
    return torch.stack(
        [cx + HOLE_RADIUS * torch.cos(angle), cy + HOLE_RADIUS * torch.sin(angle)], dim=-1
    )


def _circle_normal(x: torch.Tensor) -> torch.Tensor:
    # Outward from Ω points into the hole
    center = torch.tensor(HOLE_CENTER, dtype=DTYPE)
    radial = x - center
    return -radial / radial.norm(dim=-1, keepdim=True)


class HelmholtzProblem(BenchmarkProblem):
    """Helmholtz-type problem on the holed unit square."""

    name = "helmholtz"

    def __init__(self):
        g = dirichlet_from(self.exact_solution, self.boundary_fields)
        edges = tuple(
            square_segment(edge, 1.0, 0.0, g) for edge in ("left", "right", "bottom", "top")
        )
        hole = BoundarySegmentSpec("hole", _circle_sampler, _circle_normal, 1.0, 0.0, g)
        self._segments = edges + (hole,)

    @property
    def segments(self) -> tuple[BoundarySegmentSpec, ...]:
        return self._segments

    def exact_solution(self, x: Value) -> Value:
        xs, ys = coords(x)
        u = sin(PI * xs) * cos(2 * PI * ys) + exp(xs + ys) * 0.2 + U0
        return stack_components([u])

    def operator(self, fields: Fields, x: torch.Tensor) -> Value:
        xs, ys = coords(x)
        div = diffusion_term(
            xs, ys,
            fields.dx(0, 0), fields.dx(0, 1),
            fields.dxx(0, 0, 0), fields.dxx(0, 0, 1), fields.dxx(0, 1, 1),
        )
        return stack_components([fields.u(0) * reaction(xs, ys) - div])

    def source(self, x: torch.Tensor) -> torch.Tensor:
        xs, ys = coords(x)
        sx, cx = torch.sin(PI * xs), torch.cos(PI * xs)
        s2y, c2y = torch.sin(2 * PI * ys), torch.cos(2 * PI * ys)
        e = 0.2 * torch.exp(xs + ys)
        u = U0 + sx * c2y + e
        ux = PI * cx * c2y + e
        uy = -2 * PI * sx * s2y + e
        uxx = -(PI ** 2) * sx * c2y + e
        uyy = -4 * PI ** 2 * sx * c2y + e
        uxy = -2 * PI ** 2 * cx * s2y + e
        f = reaction(xs, ys) * u - diffusion_term(xs, ys, ux, uy, uxx, uxy, uyy)
        return f[:, None]

    def zeroth_coeff(self, x: torch.Tensor, fields: Optional[Fields] = None) -> torch.Tensor:
        return reaction(*coords(x))[:, None]

    def _hole_distance(self, x: torch.Tensor) -> torch.Tensor:
        center = torch.tensor(HOLE_CENTER, dtype=DTYPE)
        return (x - center).norm(dim=-1)

    def contains(self, x: torch.Tensor) -> torch.Tensor:
        return super().contains(x) & (self._hole_distance(x) > HOLE_RADIUS)

    def in_closure(self, x: torch.Tensor) -> torch.Tensor:
        return super().in_closure(x) & (self._hole_distance(x) >= HOLE_RADIUS)


def helmholtz_problem() -> HelmholtzProblem:
    return HelmholtzProblem()
